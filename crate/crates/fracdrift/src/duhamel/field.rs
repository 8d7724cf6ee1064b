//! Space-time grids and tabulated kernel fields.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridBox, Vec2};
use crate::stable_core::StableParams;

use super::base::BaseKernel;
use super::lattice::Lattice;

/// Lattice spacing relative to the length scale at the horizon.
const SCALE_PER_CELL: f64 = 6.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// m×m square cells; lattice nodes are the cell centres.
    pub bbox: GridBox,
    /// Output times, increasing, ending at the horizon.
    pub times: Vec<f64>,
    /// Gauss–Legendre nodes per half of the inner time integral.
    pub inner_nodes: usize,
    /// Sup-distance (in nodes) from the anchor of the nodes that are checked.
    pub inner_radius: usize,
}

impl GridSpec {
    /// Default grid: spacing T^{1/α}/6.3, times T·2^{−j/2} for j < 19.
    pub fn new(params: &StableParams, horizon: f64, m: usize, center: Vec2) -> Result<Self> {
        let h = params.length_scale(horizon) / SCALE_PER_CELL;
        Self::with_spacing(horizon, h, m, center)
    }

    pub fn with_spacing(horizon: f64, h: f64, m: usize, center: Vec2) -> Result<Self> {
        if !(horizon > 0.0 && h > 0.0) {
            return Err(Error::config("grid", "horizon and spacing must be positive"));
        }
        if m < 8 || m % 2 != 0 {
            return Err(Error::config("grid.m", "need an even number of cells, at least 8"));
        }
        let mut times: Vec<f64> = (0..19).map(|j| horizon * 2f64.powf(-0.5 * j as f64)).collect();
        times.reverse();
        let lo = [center[0] - (m as f64 / 2.0 + 0.5) * h, center[1] - (m as f64 / 2.0 + 0.5) * h];
        Ok(GridSpec {
            bbox: GridBox {
                lo,
                hi: [lo[0] + m as f64 * h, lo[1] + m as f64 * h],
                n: [m, m],
            },
            times,
            inner_nodes: 10,
            inner_radius: m / 4,
        })
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("grid.times", "times must be positive and increasing"));
        }
        self.times = times;
        Ok(self)
    }

    pub fn with_inner_nodes(mut self, n: usize) -> Self {
        self.inner_nodes = n.max(2);
        self
    }

    /// Half the spacing over (nearly) the same box, twice the inner nodes.
    pub fn refined(&self) -> Self {
        let h = self.spacing() / 2.0;
        let m = self.m() * 2;
        let mut g = Self::with_spacing(self.horizon(), h, m, self.center()).expect("refinement of a valid grid");
        g.times = self.times.clone();
        g.inner_nodes = self.inner_nodes * 2;
        g.inner_radius = self.inner_radius * 2;
        g
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn spacing(&self) -> f64 {
        self.bbox.spacing()[0]
    }

    pub fn m(&self) -> usize {
        self.bbox.n[0]
    }

    pub fn len(&self) -> usize {
        self.m() * self.m()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center_node(&self) -> usize {
        let m = self.m();
        (m / 2) * m + m / 2
    }

    pub fn center(&self) -> Vec2 {
        self.node(self.center_node())
    }

    pub fn node(&self, k: usize) -> Vec2 {
        self.lattice().node(k)
    }

    /// Index of the node nearest to x, if x lies in the box.
    pub fn node_index(&self, x: Vec2) -> Option<usize> {
        self.bbox.locate(x).map(|(i, j)| i * self.m() + j)
    }

    /// Node an integer offset away, if it exists.
    pub fn offset_node(&self, k: usize, di: isize, dj: isize) -> Option<usize> {
        let m = self.m() as isize;
        let (i, j) = ((k as isize) / m + di, (k as isize) % m + dj);
        (i >= 0 && j >= 0 && i < m && j < m).then_some((i * m + j) as usize)
    }

    /// Nodes checked for an anchor.
    pub fn inner_nodes_of(&self, anchor: usize) -> Vec<usize> {
        self.lattice().inner_nodes(anchor, self.inner_radius)
    }

    /// Mass of p(T, ·) beyond the distance from the inner square to the box
    /// edge; bounds the share of the z-integral lost to truncation.
    pub fn tail_bound(&self, base: &BaseKernel) -> f64 {
        let cut = (self.m() / 2 - self.inner_radius) as f64 * self.spacing();
        base.table().tail_mass(self.horizon(), cut)
    }

    pub(crate) fn lattice(&self) -> Lattice {
        Lattice {
            m: self.m(),
            h: self.spacing(),
            lo: self.bbox.lo,
        }
    }
}

/// Which slot of the kernel is held fixed at a lattice node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Anchor {
    /// k(t, ·, y): values and x-gradients over the first slot.
    Target { node: usize },
    /// k(t, x, ·): values over the second slot.
    Source { node: usize },
}

impl Anchor {
    pub fn node(&self) -> usize {
        match self {
            Anchor::Target { node } | Anchor::Source { node } => *node,
        }
    }
}

/// A kernel tabulated at the grid times and lattice nodes for one anchor.
///
/// Interpolation is bilinear in space and monotone cubic in log t, so the
/// value at a stored node is reproduced exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelField {
    pub label: String,
    pub anchor: Anchor,
    pub bbox: GridBox,
    pub times: Vec<f64>,
    /// values[i][k] at times[i] and node k (row-major, x index first).
    pub values: Vec<Vec<f64>>,
    pub grad_x: Option<Vec<Vec<f64>>>,
    pub grad_y: Option<Vec<Vec<f64>>>,
    /// False for kernels known to be nonnegative.
    pub signed: bool,
}

impl KernelField {
    pub fn zeros_like(other: &KernelField, label: impl Into<String>) -> Self {
        let n = other.values[0].len();
        let zero = vec![vec![0.0; n]; other.times.len()];
        KernelField {
            label: label.into(),
            anchor: other.anchor,
            bbox: other.bbox,
            times: other.times.clone(),
            values: zero.clone(),
            grad_x: other.grad_x.as_ref().map(|_| zero.clone()),
            grad_y: other.grad_y.as_ref().map(|_| zero),
            signed: true,
        }
    }

    pub fn has_gradients(&self) -> bool {
        self.grad_x.is_some() && self.grad_y.is_some()
    }

    pub fn m(&self) -> usize {
        self.bbox.n[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Values at the horizon.
    pub fn last(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    pub fn last_gradient(&self) -> Option<(&[f64], &[f64])> {
        match (&self.grad_x, &self.grad_y) {
            (Some(gx), Some(gy)) => Some((gx.last().unwrap(), gy.last().unwrap())),
            _ => None,
        }
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-12 * t.abs().max(1e-300))
    }

    /// Nodal values at time t: stored where t is a grid time, otherwise
    /// monotone cubic in log t node by node.
    pub fn slice(&self, t: f64) -> Result<Vec<f64>> {
        if let Some(i) = self.time_index(t) {
            return Ok(self.values[i].clone());
        }
        let (lo, hi) = (self.times[0], self.horizon());
        if !(t > lo && t < hi) {
            return Err(Error::Domain(format!("time {t} outside [{lo}, {hi}]")));
        }
        let lx: Vec<f64> = self.times.iter().map(|s| s.ln()).collect();
        let mut col = vec![0.0; self.times.len()];
        Ok((0..self.values[0].len())
            .map(|k| {
                for (c, v) in col.iter_mut().zip(&self.values) {
                    *c = v[k];
                }
                let d = pchip_slopes(&lx, &col);
                pchip_eval(&lx, &col, &d, t.ln())
            })
            .collect())
    }

    /// self + c·other, requiring identical layouts.
    pub fn add_scaled(&mut self, other: &KernelField, c: f64) -> Result<()> {
        if self.times != other.times || self.bbox != other.bbox || self.anchor != other.anchor {
            return Err(Error::Contract("fields differ in grid or anchor".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        for (mine, theirs) in [(&mut self.grad_x, &other.grad_x), (&mut self.grad_y, &other.grad_y)] {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => {
                    for (u, v) in a.iter_mut().zip(b) {
                        for (x, y) in u.iter_mut().zip(v) {
                            *x += c * y;
                        }
                    }
                }
                (Some(_), None) => *mine = None,
                _ => {}
            }
        }
        self.signed |= other.signed || c < 0.0;
        Ok(())
    }

    fn spatial(&self, data: &[f64], x: Vec2) -> Result<f64> {
        let h = self.bbox.spacing();
        let m = self.m();
        // Snap to a node so stored values come back exactly.
        let snap = |f: f64| if (f - f.round()).abs() < 1e-9 { f.round() } else { f };
        let fi = snap((x[0] - self.bbox.lo[0]) / h[0] - 0.5);
        let fj = snap((x[1] - self.bbox.lo[1]) / h[1] - 0.5);
        if !(fi >= 0.0 && fj >= 0.0 && fi <= (m - 1) as f64 && fj <= (m - 1) as f64) {
            return Err(Error::Domain(format!("point {x:?} outside the lattice nodes")));
        }
        let (i, j) = ((fi.floor() as usize).min(m - 2), (fj.floor() as usize).min(m - 2));
        let (u, v) = (fi - i as f64, fj - j as f64);
        let at = |a: usize, b: usize| data[a * m + b];
        Ok((1.0 - u) * (1.0 - v) * at(i, j) + u * (1.0 - v) * at(i + 1, j) + (1.0 - u) * v * at(i, j + 1) + u * v * at(i + 1, j + 1))
    }

    fn temporal(&self, series: &[Vec<f64>], t: f64, x: Vec2) -> Result<f64> {
        let ys: Vec<f64> = series.iter().map(|d| self.spatial(d, x)).collect::<Result<_>>()?;
        let lx: Vec<f64> = self.times.iter().map(|s| s.ln()).collect();
        let (lo, hi) = (self.times[0], self.horizon());
        if !(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("time {t} outside [{lo}, {hi}]")));
        }
        if ys.len() == 1 {
            return Ok(ys[0]);
        }
        let d = pchip_slopes(&lx, &ys);
        Ok(pchip_eval(&lx, &ys, &d, t.ln()))
    }

    pub fn value_at(&self, t: f64, x: Vec2) -> Result<f64> {
        self.temporal(&self.values, t, x)
    }

    pub fn gradient_at(&self, t: f64, x: Vec2) -> Result<Vec2> {
        match (&self.grad_x, &self.grad_y) {
            (Some(gx), Some(gy)) => Ok([self.temporal(gx, t, x)?, self.temporal(gy, t, x)?]),
            _ => Err(Error::Contract(format!("field `{}` carries no gradients", self.label))),
        }
    }

    /// Tidy rows t, x, y, value[, grad_x, grad_y].
    pub fn to_csv(&self) -> String {
        let g = self.has_gradients();
        let mut s = String::from(if g { "t,x,y,value,grad_x,grad_y\n" } else { "t,x,y,value\n" });
        let lat = Lattice {
            m: self.m(),
            h: self.bbox.spacing()[0],
            lo: self.bbox.lo,
        };
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..lat.len() {
                let x = lat.node(k);
                s.push_str(&format!("{t:e},{},{},{:e}", x[0], x[1], self.values[i][k]));
                if let (Some(gx), Some(gy)) = (&self.grad_x, &self.grad_y) {
                    s.push_str(&format!(",{:e},{:e}", gx[i][k], gy[i][k]));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Columnar text layout: a magic line, one JSON header line (grid,
    /// anchor, times, flags), then for each time one line of row-major
    /// values followed, if present, by one line each of x- and y-gradients.
    pub fn write_columnar(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# fracdrift kernel field v1")?;
        let header = serde_json::json!({
            "label": self.label,
            "anchor": self.anchor,
            "bbox": self.bbox,
            "times": self.times,
            "signed": self.signed,
            "gradients": self.has_gradients(),
        });
        writeln!(w, "{header}")?;
        let line = |w: &mut dyn Write, v: &[f64]| -> std::io::Result<()> {
            let s: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", s.join(" "))
        };
        for i in 0..self.times.len() {
            line(w, &self.values[i])?;
            if let (Some(gx), Some(gy)) = (&self.grad_x, &self.grad_y) {
                line(w, &gx[i])?;
                line(w, &gy[i])?;
            }
        }
        Ok(())
    }

    pub fn read_columnar(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let bad = |m: &str| Error::Numeric {
            node: "columnar file".into(),
            detail: m.into(),
        };
        let magic = lines.next().ok_or_else(|| bad("empty file"))??;
        if magic.trim() != "# fracdrift kernel field v1" {
            return Err(bad("unrecognized header"));
        }
        let header: serde_json::Value = serde_json::from_str(&lines.next().ok_or_else(|| bad("missing header"))??)?;
        let times: Vec<f64> = serde_json::from_value(header["times"].clone())?;
        let bbox: GridBox = serde_json::from_value(header["bbox"].clone())?;
        let grads = header["gradients"].as_bool().unwrap_or(false);
        let n = bbox.n[0] * bbox.n[1];
        let mut read = || -> Result<Vec<f64>> {
            let l = lines.next().ok_or_else(|| bad("truncated data"))??;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad("unparsable number")))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad("row length does not match the grid"));
            }
            Ok(v)
        };
        let mut values = Vec::new();
        let mut gx = Vec::new();
        let mut gy = Vec::new();
        for _ in 0..times.len() {
            values.push(read()?);
            if grads {
                gx.push(read()?);
                gy.push(read()?);
            }
        }
        Ok(KernelField {
            label: header["label"].as_str().unwrap_or("").to_string(),
            anchor: serde_json::from_value(header["anchor"].clone())?,
            bbox,
            times,
            values,
            grad_x: grads.then_some(gx),
            grad_y: grads.then_some(gy),
            signed: header["signed"].as_bool().unwrap_or(true),
        })
    }
}

/// Fritsch–Carlson slopes for a monotone piecewise cubic.
pub(crate) fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    if n == 2 {
        return vec![del[0]; 2];
    }
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > 0.0 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(x[1] - x[0], x[2] - x[1], del[0], del[1]);
    d[n - 1] = end(x[n - 1] - x[n - 2], x[n - 2] - x[n - 3], del[n - 2], del[n - 3]);
    d
}

/// Interval index and Hermite basis weights (h00, h10·h, h01, h11·h).
pub(crate) fn hermite_weights(x: &[f64], t: f64) -> (usize, [f64; 4]) {
    let n = x.len();
    let mut i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    i = i.min(n - 2);
    let h = x[i + 1] - x[i];
    let s = ((t - x[i]) / h).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    (
        i,
        [
            2.0 * s3 - 3.0 * s2 + 1.0,
            (s3 - 2.0 * s2 + s) * h,
            -2.0 * s3 + 3.0 * s2,
            (s3 - s2) * h,
        ],
    )
}

pub(crate) fn pchip_eval(x: &[f64], y: &[f64], d: &[f64], t: f64) -> f64 {
    let (i, w) = hermite_weights(x, t);
    w[0] * y[i] + w[1] * d[i] + w[2] * y[i + 1] + w[3] * d[i + 1]
}

/// A field divided by p₀ at the nodes, with monotone cubic interpolation
/// in log t and power-law extrapolation below the first time.
pub(crate) struct RatioField {
    log_t: Vec<f64>,
    r: Vec<Vec<f64>>,
    dr: Vec<Vec<f64>>,
    grad: Option<[Vec<Vec<f64>>; 2]>,
    dgrad: Option<[Vec<Vec<f64>>; 2]>,
    /// Exponents κ with R(s) ≈ R(t₀)(s/t₀)^κ below t₀.
    kappa: Vec<f64>,
}

pub(crate) struct RatioSlice {
    pub r: Vec<f64>,
    pub grad: Option<[Vec<f64>; 2]>,
}

impl RatioField {
    pub fn new(field: &KernelField, base: &BaseKernel, lat: &Lattice) -> Self {
        let anchor = lat.node(field.anchor.node());
        let n = lat.len();
        let nt = field.times.len();
        let mut r = vec![vec![0.0; n]; nt];
        let mut grad = field.has_gradients().then(|| [vec![vec![0.0; n]; nt], vec![vec![0.0; n]; nt]]);
        for (i, &t) in field.times.iter().enumerate() {
            for k in 0..n {
                let z = lat.node(k);
                let p0 = base.value(t, z, anchor);
                if p0 <= 0.0 || !p0.is_finite() {
                    continue;
                }
                let ratio = field.values[i][k] / p0;
                r[i][k] = ratio;
                if let (Some(g), Some(gx), Some(gy)) = (grad.as_mut(), &field.grad_x, &field.grad_y) {
                    let dp = base.gradient(t, z, anchor);
                    g[0][i][k] = (gx[i][k] - ratio * dp[0]) / p0;
                    g[1][i][k] = (gy[i][k] - ratio * dp[1]) / p0;
                }
            }
        }
        let log_t: Vec<f64> = field.times.iter().map(|t| t.ln()).collect();
        let slopes = |data: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            let mut out = vec![vec![0.0; n]; nt];
            let mut col = vec![0.0; nt];
            for k in 0..n {
                for i in 0..nt {
                    col[i] = data[i][k];
                }
                let d = pchip_slopes(&log_t, &col);
                for i in 0..nt {
                    out[i][k] = d[i];
                }
            }
            out
        };
        let dr = slopes(&r);
        let dgrad = grad.as_ref().map(|g| [slopes(&g[0]), slopes(&g[1])]);
        let kappa = (0..n)
            .map(|k| {
                if nt < 2 {
                    return 0.0;
                }
                let (a, b) = (r[0][k], r[1][k]);
                if a * b <= 0.0 {
                    return 0.0;
                }
                ((b / a).ln() / (log_t[1] - log_t[0])).clamp(0.0, 2.0)
            })
            .collect();
        RatioField {
            log_t,
            r,
            dr,
            grad,
            dgrad,
            kappa,
        }
    }

    pub fn at(&self, s: f64) -> RatioSlice {
        let ls = s.ln();
        let n = self.r[0].len();
        if ls <= self.log_t[0] || self.log_t.len() == 1 {
            let f = |k: usize| (self.kappa[k] * (ls - self.log_t[0]).min(0.0)).exp();
            let r = (0..n).map(|k| self.r[0][k] * f(k)).collect();
            let grad = self.grad.as_ref().map(|g| [(0..n).map(|k| g[0][0][k] * f(k)).collect(), (0..n).map(|k| g[1][0][k] * f(k)).collect()]);
            return RatioSlice { r, grad };
        }
        let (i, w) = hermite_weights(&self.log_t, ls);
        let mix = |y: &Vec<Vec<f64>>, d: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..n)
                .map(|k| w[0] * y[i][k] + w[1] * d[i][k] + w[2] * y[i + 1][k] + w[3] * d[i + 1][k])
                .collect()
        };
        let r = mix(&self.r, &self.dr);
        let grad = match (&self.grad, &self.dgrad) {
            (Some(g), Some(dg)) => Some([mix(&g[0], &dg[0]), mix(&g[1], &dg[1])]),
            _ => None,
        };
        RatioSlice { r, grad }
    }
}
