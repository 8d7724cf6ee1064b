//! Picard steps, contraction constants and summed series.
//!
//! The inner time integral is split at t/2. On the half where the kernel
//! time is small, the sharp factor is integrated exactly over lattice
//! cells; on the other half the smooth factor carries the (analytic or
//! summation-by-parts) derivative. Spatial convolutions run on zero-padded
//! FFTs of side 2m.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kato::DriftField;
use crate::quad::gauss_legendre_on;

use super::base::{Amplitude, BaseKernel};
use super::field::{Anchor, GridSpec, KernelField, RatioField, RatioSlice};
use super::lattice::{cell_density, cell_grad_norm, point_kernels, Fft2, Lattice, C64};

/// Relative floor on p₀ below which a node is excluded from ratios.
const P0_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    /// r_k = sup |p_k|/p₀ over the checked nodes at the horizon; r₀ = 1.
    pub ratios: Vec<f64>,
    pub c_emp: f64,
    pub truncation_index: usize,
    /// r_K·C/(1−C).
    pub residual_bound: f64,
    /// Multiplicative slack in r_{k+1}/r_k ≤ C(1+slack).
    pub slack: f64,
    pub geometric_ok: bool,
    /// min and max of the summed series over p₀ on the checked nodes.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub tail_bound: f64,
    pub n_nodes: usize,
    pub n_excluded: usize,
}

impl SeriesDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }

    /// Successive ratios r_{k+1}/r_k.
    pub fn decay(&self) -> Vec<f64> {
        self.ratios.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub t: f64,
    pub value: f64,
    pub argmax: usize,
    pub n_nodes: usize,
    pub n_excluded: usize,
}

/// Substituted split rule on (0, t/2]: nodes τ = (t/2)u^q with
/// q = α/(α−1), which flattens an s^{−1/α} endpoint singularity.
pub(crate) fn split_rule(t: f64, alpha: f64, n: usize) -> Vec<(f64, f64)> {
    let q = alpha / (alpha - 1.0);
    let (u, w) = gauss_legendre_on(n, 0.0, 1.0);
    u.iter()
        .zip(&w)
        .map(|(u, w)| (0.5 * t * u.powf(q), 0.5 * t * q * u.powf(q - 1.0) * w))
        .collect()
}

struct Drift {
    bx: Vec<f64>,
    by: Vec<f64>,
    div: Vec<f64>,
    norm: Vec<f64>,
    zero: bool,
    div_zero: bool,
}

impl Drift {
    fn new(b: &DriftField, lat: &Lattice) -> Self {
        let n = lat.len();
        let (mut bx, mut by, mut div, mut norm) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let x = lat.node(k);
            let v = b.eval(x);
            bx[k] = v[0];
            by[k] = v[1];
            norm[k] = v[0].hypot(v[1]);
            if b.constant_value().is_none() && !b.is_zero() {
                div[k] = b.divergence(x);
            }
        }
        let zero = norm.iter().all(|v| *v == 0.0);
        let div_zero = div.iter().all(|v| *v == 0.0);
        Drift {
            bx,
            by,
            div,
            norm,
            zero,
            div_zero,
        }
    }
}

struct Ctx<'a> {
    base: &'a BaseKernel,
    grid: &'a GridSpec,
    lat: Lattice,
    drift: Drift,
}

/// p₀(σ, z, y) and ∇_z p₀(σ, z, y) at the nodes for an anchor y, from the
/// point kernels at σ.
fn anchored_base(lat: &Lattice, point: &[Vec<f64>; 3], amp: &Amplitude, anchor: usize) -> [Vec<f64>; 3] {
    let p = lat.anchored(&point[0], anchor);
    let px = lat.anchored(&point[1], anchor);
    let py = lat.anchored(&point[2], anchor);
    if amp.is_unit() {
        return [p, px, py];
    }
    let ay = amp.a(anchor);
    let n = lat.len();
    let mut v = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for k in 0..n {
        let (a, g) = (amp.a(k), amp.grad(k));
        v[k] = ay * a * p[k];
        gx[k] = ay * (g[0] * p[k] + a * px[k]);
        gy[k] = ay * (g[1] * p[k] + a * py[k]);
    }
    [v, gx, gy]
}

fn mul(a: &[C64], b: &[C64], w: f64, acc: &mut [C64]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o += x * y * w;
    }
}

impl<'a> Ctx<'a> {
    fn new(base: &'a BaseKernel, b: &DriftField, grid: &'a GridSpec) -> Self {
        let lat = grid.lattice();
        Ctx {
            base,
            grid,
            lat,
            drift: Drift::new(b, &lat),
        }
    }

    fn alpha(&self) -> f64 {
        self.base.params().alpha()
    }

    fn rule(&self, t: f64) -> Vec<(f64, f64)> {
        split_rule(t, self.alpha(), self.grid.inner_nodes)
    }

    /// Free-kernel accumulation: output = inverse of a summed spectrum.
    /// Otherwise each node's spatial factor a(x) multiplies its own pieces.
    fn finish(&self, fft: &mut Fft2, acc: Vec<C64>) -> Vec<f64> {
        let mut z = acc;
        fft.inverse(&mut z);
        self.lat.extract(&z)
    }

    /// ∫₀ᵗ∫ p₀(t−s,x,z) b(z)·∇_z F(s,z) dz ds for a target-anchored F.
    /// Returns values and x-gradients at the nodes.
    fn adjoint_output(&self, prev: &RatioField, anchor: usize, t: f64, fft: &mut Fft2) -> [Vec<f64>; 3] {
        let lat = &self.lat;
        let table = self.base.table();
        let n = lat.len();
        let nn = lat.n() * lat.n();
        let d = &self.drift;
        let free = self.base.is_free();
        let mut acc = vec![C64::new(0.0, 0.0); nn];
        let mut val = vec![0.0; n];
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for (tau, w) in self.rule(t) {
            let sigma = t - tau;
            let wcell = cell_density(lat, table, tau);
            let point = point_kernels(lat, table, sigma);
            let amp_tau = self.base.lattice_amplitude(lat, tau);
            let amp_sigma = self.base.lattice_amplitude(lat, sigma);

            // Small s = τ: F(s,·) is sharp at y; integrate by parts onto p₀(t−s).
            let sl: RatioSlice = prev.at(tau);
            let ws = lat.anchored(&wcell, anchor);
            let ay = amp_tau.a(anchor);
            let mut g1 = vec![0.0; n];
            let mut g2 = vec![0.0; n];
            let mut g0 = vec![0.0; n];
            for k in 0..n {
                let gw = sl.r[k] * ay * amp_tau.mu(k) * ws[k];
                if gw == 0.0 {
                    continue;
                }
                let a = amp_sigma.a(k);
                g1[k] = gw * a * d.bx[k];
                g2[k] = gw * a * d.by[k];
                let da = amp_sigma.grad(k);
                g0[k] = gw * (d.bx[k] * da[0] + d.by[k] * da[1] + a * d.div[k]);
            }

            // Small t−s = τ: F(s,·) is smooth; p₀(τ) is integrated over cells.
            let sb = prev.at(sigma);
            let [p0, p0x, p0y] = anchored_base(lat, &point, &amp_sigma, anchor);
            let grad = sb.grad.as_ref().expect("adjoint step needs gradients");
            let mut phi = vec![0.0; n];
            for k in 0..n {
                let fx = p0[k] * grad[0][k] + sb.r[k] * p0x[k];
                let fy = p0[k] * grad[1][k] + sb.r[k] * p0y[k];
                phi[k] = amp_tau.mu(k) * (d.bx[k] * fx + d.by[k] * fy);
            }

            let (s1, s2) = fft.forward_pair(&lat.embed(&g1), &lat.embed(&g2));
            let (kx, ky) = fft.forward_pair(&point[1], &point[2]);
            let (sw, sphi) = fft.forward_pair(&wcell, &lat.embed(&phi));
            let mut part_a = vec![C64::new(0.0, 0.0); nn];
            mul(&s1, &kx, 1.0, &mut part_a);
            mul(&s2, &ky, 1.0, &mut part_a);
            let has_g0 = !(d.div_zero && free);
            if has_g0 {
                let (s0, kp) = fft.forward_pair(&lat.embed(&g0), &point[0]);
                mul(&s0, &kp, -1.0, &mut part_a);
            }
            if free {
                for (o, v) in acc.iter_mut().zip(&part_a) {
                    *o += v * w;
                }
                mul(&sw, &sphi, w, &mut acc);
            } else {
                let qa = self.finish(fft, part_a);
                let mut part_b = vec![C64::new(0.0, 0.0); nn];
                mul(&sw, &sphi, 1.0, &mut part_b);
                let qb = self.finish(fft, part_b);
                let (qax, qay) = lat.gradient(&qa);
                let (qbx, qby) = lat.gradient(&qb);
                for k in 0..n {
                    let (aa, ga) = (amp_sigma.a(k), amp_sigma.grad(k));
                    let (ab, gb) = (amp_tau.a(k), amp_tau.grad(k));
                    val[k] += w * (aa * qa[k] + ab * qb[k]);
                    gx[k] += w * (ga[0] * qa[k] + aa * qax[k] + gb[0] * qb[k] + ab * qbx[k]);
                    gy[k] += w * (ga[1] * qa[k] + aa * qay[k] + gb[1] * qb[k] + ab * qby[k]);
                }
            }
        }
        if free {
            val = self.finish(fft, acc);
            let (x, y) = lat.gradient(&val);
            gx = x;
            gy = y;
        }
        [val, gx, gy]
    }

    /// ∫₀ᵗ∫ S(t−s,x,z) b(z)·∇_z p₀(s,z,y) dz ds for a source-anchored S.
    fn direct_output(&self, prev: &RatioField, anchor: usize, t: f64, fft: &mut Fft2) -> Vec<f64> {
        let lat = &self.lat;
        let table = self.base.table();
        let n = lat.len();
        let nn = lat.n() * lat.n();
        let d = &self.drift;
        let free = self.base.is_free();
        let mut acc = vec![C64::new(0.0, 0.0); nn];
        let mut val = vec![0.0; n];
        for (tau, w) in self.rule(t) {
            let sigma = t - tau;
            let wcell = cell_density(lat, table, tau);
            let point = point_kernels(lat, table, sigma);
            let amp_tau = self.base.lattice_amplitude(lat, tau);
            let amp_sigma = self.base.lattice_amplitude(lat, sigma);

            // Small s = τ: move the derivative onto S(t−s) by parts.
            let sl = prev.at(sigma);
            let [p0, _, _] = anchored_base(lat, &point, &amp_sigma, anchor);
            let q1: Vec<f64> = (0..n).map(|k| sl.r[k] * p0[k] * d.bx[k]).collect();
            let q2: Vec<f64> = (0..n).map(|k| sl.r[k] * p0[k] * d.by[k]).collect();
            let (dx, _) = lat.gradient(&q1);
            let (_, dy) = lat.gradient(&q2);
            let dv: Vec<f64> = (0..n).map(|k| amp_tau.mu(k) * (dx[k] + dy[k])).collect();

            // Small t−s = τ: S(τ) is sharp at x; cell weights times ∇p₀(σ).
            let ss = prev.at(tau);
            let ws = lat.anchored(&wcell, anchor);
            let ax = amp_tau.a(anchor);
            let mut g1 = vec![0.0; n];
            let mut g2 = vec![0.0; n];
            let mut g0 = vec![0.0; n];
            for k in 0..n {
                let gw = ss.r[k] * ax * amp_tau.mu(k) * ws[k];
                if gw == 0.0 {
                    continue;
                }
                let a = amp_sigma.a(k);
                g1[k] = gw * a * d.bx[k];
                g2[k] = gw * a * d.by[k];
                let da = amp_sigma.grad(k);
                g0[k] = gw * (d.bx[k] * da[0] + d.by[k] * da[1]);
            }
            let (sw, sdv) = fft.forward_pair(&wcell, &lat.embed(&dv));
            let (s1, s2) = fft.forward_pair(&lat.embed(&g1), &lat.embed(&g2));
            let (kx, ky) = fft.forward_pair(&point[1], &point[2]);
            let mut part = vec![C64::new(0.0, 0.0); nn];
            mul(&s1, &kx, -1.0, &mut part);
            mul(&s2, &ky, -1.0, &mut part);
            if free {
                mul(&sw, &sdv, -w, &mut acc);
                for (o, v) in acc.iter_mut().zip(&part) {
                    *o += v * w;
                }
            } else {
                let (s0, kp) = fft.forward_pair(&lat.embed(&g0), &point[0]);
                mul(&s0, &kp, 1.0, &mut part);
                let q2 = self.finish(fft, part);
                let mut part_b = vec![C64::new(0.0, 0.0); nn];
                mul(&sw, &sdv, -1.0, &mut part_b);
                let q1 = self.finish(fft, part_b);
                for k in 0..n {
                    val[k] += w * (amp_tau.a(k) * q1[k] + amp_sigma.a(k) * q2[k]);
                }
            }
        }
        if free {
            val = self.finish(fft, acc);
        }
        val
    }

    /// ∫₀ᵗ∫ p₀(t−s,x,z)|b(z)||∇_z p₀(s,z,y)| dz ds at the nodes.
    fn contraction_integral(&self, anchor: usize, t: f64, fft: &mut Fft2) -> Vec<f64> {
        let lat = &self.lat;
        let table = self.base.table();
        let n = lat.len();
        let nn = lat.n() * lat.n();
        let d = &self.drift;
        let free = self.base.is_free();
        let mut acc = vec![C64::new(0.0, 0.0); nn];
        let mut val = vec![0.0; n];
        for (tau, w) in self.rule(t) {
            let sigma = t - tau;
            let wcell = cell_density(lat, table, tau);
            let ucell = cell_grad_norm(lat, table, tau);
            let point = point_kernels(lat, table, sigma);
            let amp_tau = self.base.lattice_amplitude(lat, tau);
            let amp_sigma = self.base.lattice_amplitude(lat, sigma);
            let ws = lat.anchored(&wcell, anchor);
            let us = lat.anchored(&ucell, anchor);
            let ay = amp_tau.a(anchor);
            let g: Vec<f64> = (0..n)
                .map(|k| {
                    let da = amp_tau.grad(k);
                    let cell = da[0].hypot(da[1]) * ws[k] + amp_tau.mu(k) * us[k];
                    d.norm[k] * ay * cell * amp_sigma.a(k)
                })
                .collect();
            let [_, p0x, p0y] = anchored_base(lat, &point, &amp_sigma, anchor);
            let hb: Vec<f64> = (0..n).map(|k| amp_tau.mu(k) * d.norm[k] * p0x[k].hypot(p0y[k])).collect();
            let (sg, sh) = fft.forward_pair(&lat.embed(&g), &lat.embed(&hb));
            let (kp, kw) = fft.forward_pair(&point[0], &wcell);
            if free {
                mul(&sg, &kp, w, &mut acc);
                mul(&sh, &kw, w, &mut acc);
            } else {
                let mut pa = vec![C64::new(0.0, 0.0); nn];
                mul(&sg, &kp, 1.0, &mut pa);
                let qa = self.finish(fft, pa);
                let mut pb = vec![C64::new(0.0, 0.0); nn];
                mul(&sh, &kw, 1.0, &mut pb);
                let qb = self.finish(fft, pb);
                for k in 0..n {
                    val[k] += w * (amp_sigma.a(k) * qa[k] + amp_tau.a(k) * qb[k]);
                }
            }
        }
        if free {
            val = self.finish(fft, acc);
        }
        val
    }

    fn p0_nodes(&self, t: f64, anchor: usize) -> Vec<f64> {
        let y = self.lat.node(anchor);
        (0..self.lat.len()).map(|k| self.base.value(t, self.lat.node(k), y)).collect()
    }

    /// Checked nodes with p₀ above the floor, and the excluded count.
    fn checked(&self, p0: &[f64], anchor: usize) -> (Vec<usize>, usize) {
        let inner = self.grid.inner_nodes_of(anchor);
        let pmax = inner.iter().map(|&k| p0[k]).fold(0.0, f64::max);
        let in_domain: Vec<usize> = inner.into_iter().filter(|&k| self.base.amplitude(1.0, self.lat.node(k)) > 0.0).collect();
        let kept: Vec<usize> = in_domain.iter().copied().filter(|&k| p0[k] > P0_FLOOR * pmax).collect();
        let excluded = in_domain.len() - kept.len();
        (kept, excluded)
    }
}

fn check_grid(base: &BaseKernel, grid: &GridSpec, field: Option<&KernelField>) -> Result<()> {
    let _ = base;
    if let Some(f) = field {
        if f.bbox != grid.bbox || f.times != grid.times {
            return Err(Error::Contract(format!("field `{}` is not on this grid", f.label)));
        }
    }
    Ok(())
}

fn numeric_guard(out: &[Vec<f64>], label: &str, grid: &GridSpec) -> Result<()> {
    for (i, v) in out.iter().enumerate() {
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                node: format!("t = {}, x = {:?}", grid.times[i], grid.node(k)),
                detail: format!("non-finite value in {label}"),
            });
        }
    }
    Ok(())
}

/// p₀ at the grid times for an anchor: values, plus x-gradients for target
/// anchors.
pub fn tabulate_base_kernel(base: &BaseKernel, grid: &GridSpec, anchor: Anchor) -> Result<KernelField> {
    check_grid(base, grid, None)?;
    let lat = grid.lattice();
    let a = lat.node(anchor.node());
    let n = lat.len();
    let mut values = Vec::with_capacity(grid.times.len());
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    for &t in &grid.times {
        values.push((0..n).map(|k| base.value(t, lat.node(k), a)).collect());
        if let Anchor::Target { .. } = anchor {
            let g: Vec<[f64; 2]> = (0..n).map(|k| base.gradient(t, lat.node(k), a)).collect();
            gx.push(g.iter().map(|v| v[0]).collect());
            gy.push(g.iter().map(|v| v[1]).collect());
        }
    }
    let target = matches!(anchor, Anchor::Target { .. });
    Ok(KernelField {
        label: format!("p0[{:?}]", base.source()).to_lowercase(),
        anchor,
        bbox: grid.bbox,
        times: grid.times.clone(),
        values,
        grad_x: target.then_some(gx),
        grad_y: target.then_some(gy),
        signed: false,
    })
}

/// One step of the direct recursion: p_k from p_{k−1} in its first slot,
/// for a source-anchored field (values only).
pub fn picard_step(base: &BaseKernel, prev: &KernelField, b: &DriftField, grid: &GridSpec) -> Result<KernelField> {
    check_grid(base, grid, Some(prev))?;
    let Anchor::Source { node } = prev.anchor else {
        return Err(Error::Contract("the direct recursion needs a source-anchored field".into()));
    };
    let ctx = Ctx::new(base, b, grid);
    let mut out = KernelField::zeros_like(prev, format!("{}+1", prev.label));
    out.grad_x = None;
    out.grad_y = None;
    if ctx.drift.zero {
        return Ok(out);
    }
    let ratio = RatioField::new(prev, base, &ctx.lat);
    let values: Vec<Vec<f64>> = grid
        .times
        .par_iter()
        .map_init(|| Fft2::new(ctx.lat.n()), |fft, &t| ctx.direct_output(&ratio, node, t, fft))
        .collect();
    numeric_guard(&values, "picard_step", grid)?;
    out.values = values;
    Ok(out)
}

/// One step of the adjoint recursion for a target-anchored field with
/// gradients: p_k(t,·,y) = ∫∫ p₀(t−s,·,z) b(z)·∇_z p_{k−1}(s,z,y).
pub fn picard_step_adjoint(base: &BaseKernel, prev: &KernelField, b: &DriftField, grid: &GridSpec) -> Result<KernelField> {
    check_grid(base, grid, Some(prev))?;
    let Anchor::Target { node } = prev.anchor else {
        return Err(Error::Contract("the adjoint recursion needs a target-anchored field".into()));
    };
    if !prev.has_gradients() {
        return Err(Error::Contract(format!("field `{}` carries no gradients", prev.label)));
    }
    let ctx = Ctx::new(base, b, grid);
    let mut out = KernelField::zeros_like(prev, format!("{}+1", prev.label));
    if ctx.drift.zero {
        return Ok(out);
    }
    let ratio = RatioField::new(prev, base, &ctx.lat);
    let parts: Vec<[Vec<f64>; 3]> = grid
        .times
        .par_iter()
        .map_init(|| Fft2::new(ctx.lat.n()), |fft, &t| ctx.adjoint_output(&ratio, node, t, fft))
        .collect();
    let mut values = Vec::new();
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    for [v, x, y] in parts {
        values.push(v);
        gx.push(x);
        gy.push(y);
    }
    numeric_guard(&values, "picard_step_adjoint", grid)?;
    numeric_guard(&gx, "picard_step_adjoint gradient", grid)?;
    out.values = values;
    out.grad_x = Some(gx);
    out.grad_y = Some(gy);
    Ok(out)
}

/// C_emp(t): the largest ratio ∫∫ p₀|b||∇p₀| / p₀ over the checked nodes
/// for the given targets.
pub fn contraction_estimate_at(base: &BaseKernel, b: &DriftField, grid: &GridSpec, t: f64, targets: &[usize]) -> Result<Contraction> {
    if !(t > 0.0 && t <= grid.horizon() * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("t = {t} outside (0, {}]", grid.horizon())));
    }
    let ctx = Ctx::new(base, b, grid);
    let mut best = Contraction {
        t,
        value: 0.0,
        argmax: targets.first().copied().unwrap_or(0),
        n_nodes: 0,
        n_excluded: 0,
    };
    if ctx.drift.zero {
        return Ok(best);
    }
    let mut fft = Fft2::new(ctx.lat.n());
    for &y in targets {
        let num = ctx.contraction_integral(y, t, &mut fft);
        let p0 = ctx.p0_nodes(t, y);
        let (kept, excluded) = ctx.checked(&p0, y);
        best.n_nodes += kept.len();
        best.n_excluded += excluded;
        for k in kept {
            let r = num[k] / p0[k];
            if r > best.value {
                best.value = r;
                best.argmax = k;
            }
        }
    }
    Ok(best)
}

/// Targets for a grid: the centre for the free kernel, otherwise up to five
/// nodes in D spread in distance to the boundary.
pub fn default_targets(base: &BaseKernel, grid: &GridSpec) -> Vec<usize> {
    if base.is_free() {
        return vec![grid.center_node()];
    }
    let h = grid.spacing();
    let mut cand: Vec<(f64, usize)> = grid
        .inner_nodes_of(grid.center_node())
        .into_iter()
        .map(|k| (base.domain().rho(grid.node(k)), k))
        .filter(|(r, _)| *r > 0.5 * h)
        .collect();
    cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if cand.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = (cand[0].0.ln(), cand[cand.len() - 1].0.ln());
    let mut out: Vec<usize> = Vec::new();
    for i in 0..5 {
        let target = (hi + (lo - hi) * i as f64 / 4.0).exp();
        let best = cand
            .iter()
            .min_by(|a, b| (a.0 - target).abs().partial_cmp(&(b.0 - target).abs()).unwrap())
            .unwrap()
            .1;
        if !out.contains(&best) {
            out.push(best);
        }
    }
    out
}

pub fn contraction_estimate(base: &BaseKernel, b: &DriftField, grid: &GridSpec, t: f64) -> Result<Contraction> {
    contraction_estimate_at(base, b, grid, t, &default_targets(base, grid))
}

fn sup_ratio(values: &[f64], p0: &[f64], nodes: &[usize]) -> f64 {
    nodes.iter().map(|&k| values[k].abs() / p0[k]).fold(0.0, f64::max)
}

/// Σ_{k≤K} p_k with the geometric-decay diagnostics. Target anchors use the
/// adjoint recursion and carry gradients; source anchors use the direct one.
pub fn sum_series(
    base: &BaseKernel,
    b: &DriftField,
    grid: &GridSpec,
    anchor: Anchor,
    k_max: usize,
    tol: f64,
) -> Result<(KernelField, SeriesDiagnostics)> {
    sum_series_with(base, b, grid, anchor, k_max, tol, 0.2)
}

pub fn sum_series_with(
    base: &BaseKernel,
    b: &DriftField,
    grid: &GridSpec,
    anchor: Anchor,
    k_max: usize,
    tol: f64,
    slack: f64,
) -> Result<(KernelField, SeriesDiagnostics)> {
    let t = grid.horizon();
    let ctx = Ctx::new(base, b, grid);
    let p0 = ctx.p0_nodes(t, anchor.node());
    let (nodes, n_excluded) = ctx.checked(&p0, anchor.node());
    let c = contraction_estimate_at(base, b, grid, t, &[anchor.node()])?;
    if c.value >= 1.0 {
        return Err(Error::NonContraction { c_emp: c.value, horizon: t });
    }
    let p0_field = tabulate_base_kernel(base, grid, anchor)?;
    let mut sum = p0_field.clone();
    sum.label = "series".into();
    let mut ratios = vec![1.0];
    let mut k_used = 0;
    if !ctx.drift.zero {
        let mut prev = p0_field;
        for k in 1..=k_max {
            let next = match anchor {
                Anchor::Target { .. } => picard_step_adjoint(base, &prev, b, grid)?,
                Anchor::Source { .. } => picard_step(base, &prev, b, grid)?,
            };
            let r = sup_ratio(next.last(), &p0, &nodes);
            sum.add_scaled(&next, 1.0)?;
            ratios.push(r);
            k_used = k;
            prev = next;
            if r / (1.0 - c.value) < tol || r == 0.0 {
                break;
            }
        }
    }
    let ratio_of_sum: Vec<f64> = nodes.iter().map(|&k| sum.last()[k] / p0[k]).collect();
    let min_ratio = ratio_of_sum.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratio_of_sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let geometric_ok = ratios.windows(2).all(|w| w[1] <= w[0] * c.value * (1.0 + slack) || w[1] == 0.0);
    let r_last = *ratios.last().unwrap();
    let diag = SeriesDiagnostics {
        residual_bound: if k_used == 0 { 0.0 } else { r_last * c.value / (1.0 - c.value) },
        ratios,
        c_emp: c.value,
        truncation_index: k_used,
        slack,
        geometric_ok,
        min_ratio,
        max_ratio,
        tail_bound: grid.tail_bound(base),
        n_nodes: nodes.len(),
        n_excluded,
    };
    if min_ratio < -slack {
        return Err(Error::ConvergenceQuality(format!(
            "partial sum reaches {min_ratio:.3}·p0 on the checked nodes"
        )));
    }
    sum.signed = min_ratio < 0.0;
    Ok((sum, diag))
}

/// Σ ∇ₓ p_k for a target anchor, via the adjoint recursion differentiated
/// in x (the returned field carries values and gradients).
pub fn gradient_series(base: &BaseKernel, b: &DriftField, grid: &GridSpec, target: usize, k_max: usize, tol: f64) -> Result<KernelField> {
    Ok(sum_series(base, b, grid, Anchor::Target { node: target }, k_max, tol)?.0)
}

/// Right side of the dual Duhamel identity, p₀ + ∫∫ p₀ b·∇_z p^{b}, from
/// a summed target-anchored series; values at the horizon.
pub fn dual_duhamel_rhs(base: &BaseKernel, series: &KernelField, b: &DriftField, grid: &GridSpec) -> Result<Vec<f64>> {
    let step = picard_step_adjoint(base, series, b, grid)?;
    let ctx = Ctx::new(base, b, grid);
    let p0 = ctx.p0_nodes(grid.horizon(), series.anchor.node());
    Ok(p0.iter().zip(step.last()).map(|(a, b)| a + b).collect())
}

/// Semigroup values t ↦ ∫ p^{b}(t,x,y) f(y) dy on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupField {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub terms: usize,
}

impl SemigroupField {
    pub fn last(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

/// P^b_t f on the lattice at times j·t/steps, summing k ≤ k_max terms of
/// u_k(t) = ∫₀ᵗ P⁰_{t−s}(b·∇u_{k−1}(s)) ds with u₀ = P⁰_t f. `f_grad`
/// defaults to finite differences of `f`.
pub fn semigroup_series(
    base: &BaseKernel,
    b: &DriftField,
    grid: &GridSpec,
    f: &[f64],
    f_grad: Option<[Vec<f64>; 2]>,
    t: f64,
    steps: usize,
    k_max: usize,
) -> Result<SemigroupField> {
    let ctx = Ctx::new(base, b, grid);
    let lat = ctx.lat;
    if f.len() != lat.len() {
        return Err(Error::Contract("test function does not match the lattice".into()));
    }
    let steps = steps.max(1);
    let times: Vec<f64> = (0..=steps).map(|j| t * j as f64 / steps as f64).collect();
    let table = base.table();
    let n = lat.len();
    let nn = lat.n() * lat.n();
    let apply = |fft: &mut Fft2, tau: f64, g: &[f64], gx: Option<(&[f64], &[f64])>| -> [Vec<f64>; 3] {
        let amp = base.lattice_amplitude(&lat, tau);
        let w = cell_density(&lat, table, tau);
        let gm: Vec<f64> = (0..n).map(|k| amp.mu(k) * g[k]).collect();
        let (sw, sg) = fft.forward_pair(&w, &lat.embed(&gm));
        let mut z = vec![C64::new(0.0, 0.0); nn];
        mul(&sw, &sg, 1.0, &mut z);
        fft.inverse(&mut z);
        let q = lat.extract(&z);
        let (qx, qy) = match (gx, amp.is_unit()) {
            (Some((a, c)), true) => {
                // Both gradient convolutions share one inverse: real and imaginary parts.
                let (s1, s2) = fft.forward_pair(&lat.embed(a), &lat.embed(c));
                let mut packed: Vec<C64> = (0..nn).map(|i| sw[i] * (s1[i] + s2[i] * C64::new(0.0, 1.0))).collect();
                fft.inverse(&mut packed);
                let (m, nl) = (lat.m, lat.n());
                let mut ox = vec![0.0; n];
                let mut oy = vec![0.0; n];
                for i in 0..m {
                    for j in 0..m {
                        ox[i * m + j] = packed[i * nl + j].re;
                        oy[i * m + j] = packed[i * nl + j].im;
                    }
                }
                (ox, oy)
            }
            _ => lat.gradient(&q),
        };
        if amp.is_unit() {
            return [q, qx, qy];
        }
        let mut v = vec![0.0; n];
        let mut vx = vec![0.0; n];
        let mut vy = vec![0.0; n];
        for k in 0..n {
            let (a, g) = (amp.a(k), amp.grad(k));
            v[k] = a * q[k];
            vx[k] = g[0] * q[k] + a * qx[k];
            vy[k] = g[1] * q[k] + a * qy[k];
        }
        [v, vx, vy]
    };
    let mut fft = Fft2::new(lat.n());
    let (f0x, f0y) = match &f_grad {
        Some([a, c]) => (a.clone(), c.clone()),
        None => lat.gradient(f),
    };
    // u₀ at the grid times, with gradients; u₀(0) = f.
    let mut cur: Vec<[Vec<f64>; 3]> = Vec::with_capacity(times.len());
    cur.push([f.to_vec(), f0x.clone(), f0y.clone()]);
    for &tj in &times[1..] {
        cur.push(apply(&mut fft, tj, f, Some((&f0x, &f0y))));
    }
    let mut total: Vec<Vec<f64>> = cur.iter().map(|u| u[0].clone()).collect();
    let mut terms = 0;
    if !ctx.drift.zero {
        let d = &ctx.drift;
        let (gl, gw) = gauss_legendre_on(6, 0.0, 1.0);
        for _ in 1..=k_max {
            let prev = cur;
            let interp = |s: f64| -> Vec<f64> {
                let x = s / t * steps as f64;
                let i = (x.floor() as usize).min(steps - 1);
                let u = x - i as f64;
                (0..n)
                    .map(|k| {
                        let a = d.bx[k] * prev[i][1][k] + d.by[k] * prev[i][2][k];
                        let c = d.bx[k] * prev[i + 1][1][k] + d.by[k] * prev[i + 1][2][k];
                        (1.0 - u) * a + u * c
                    })
                    .collect()
            };
            let mut next: Vec<[Vec<f64>; 3]> = vec![[vec![0.0; n], vec![0.0; n], vec![0.0; n]]];
            for &tj in &times[1..] {
                let mut v = vec![0.0; n];
                for half in 0..2 {
                    for (u, w) in gl.iter().zip(&gw) {
                        let s = 0.5 * tj * (half as f64 + u);
                        let phi = interp(s);
                        let [q, _, _] = apply(&mut fft, tj - s, &phi, None);
                        for k in 0..n {
                            v[k] += 0.5 * tj * w * q[k];
                        }
                    }
                }
                let (vx, vy) = lat.gradient(&v);
                next.push([v, vx, vy]);
            }
            for (tot, u) in total.iter_mut().zip(&next) {
                for (a, b) in tot.iter_mut().zip(&u[0]) {
                    *a += b;
                }
            }
            terms += 1;
            cur = next;
        }
    }
    Ok(SemigroupField { times, values: total, terms })
}
