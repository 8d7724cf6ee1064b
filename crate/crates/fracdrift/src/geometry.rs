//! Planar domains D, the distance ρ to the complement, and lattice
//! quadrature grids on D.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre_on, integrate_breaks, QuadConfig};

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn norm2(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    /// {x : n·x > offset} with unit inward normal n.
    HalfSpace { normal: Vec2, offset: f64 },
    Ball { center: Vec2, radius: f64 },
    /// All of R²; ρ ≡ ∞.
    Whole,
}

/// An open set D ⊂ R² with its boundary smoothness metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(flatten)]
    pub kind: DomainKind,
    #[serde(default = "one")]
    pub theta: f64,
    /// Inert (r₀, Λ) metadata.
    #[serde(default)]
    pub characteristics: Option<(f64, f64)>,
}

fn one() -> f64 {
    1.0
}

impl Domain {
    pub fn half_space(normal: Vec2, offset: f64) -> Result<Self> {
        let n = norm2(normal);
        if !(n > 0.0) {
            return Err(Error::Domain("half-space normal must be nonzero".into()));
        }
        Ok(Domain {
            kind: DomainKind::HalfSpace {
                normal: scale(normal, 1.0 / n),
                offset: offset / n,
            },
            theta: 1.0,
            characteristics: None,
        })
    }

    pub fn ball(center: Vec2, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("ball radius {radius} must be positive")));
        }
        Ok(Domain {
            kind: DomainKind::Ball { center, radius },
            theta: 1.0,
            characteristics: Some((radius, 1.0 / radius)),
        })
    }

    pub fn whole() -> Self {
        Domain {
            kind: DomainKind::Whole,
            theta: 1.0,
            characteristics: None,
        }
    }

    pub fn is_whole(&self) -> bool {
        matches!(self.kind, DomainKind::Whole)
    }

    /// Checks the metadata and the θ > α/2 pairing.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        match &self.kind {
            DomainKind::HalfSpace { normal, .. } => {
                if (norm2(*normal) - 1.0).abs() > 1e-9 {
                    return Err(Error::config("domain.normal", "normal must be a unit vector"));
                }
            }
            DomainKind::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::config("domain.radius", "radius must be positive"));
                }
            }
            DomainKind::Whole => {}
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::config("domain.theta", "theta must lie in (0, 1]"));
        }
        if self.theta <= 0.5 * alpha {
            return Err(Error::config(
                "domain.theta",
                format!("theta = {} must exceed alpha/2 = {}", self.theta, 0.5 * alpha),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, x: Vec2) -> bool {
        self.rho(x) > 0.0
    }

    /// Distance from x to the complement of D (0 outside D).
    pub fn rho(&self, x: Vec2) -> f64 {
        match &self.kind {
            DomainKind::HalfSpace { normal, offset } => (dot(*normal, x) - offset).max(0.0),
            DomainKind::Ball { center, radius } => (radius - norm2(sub(x, *center))).max(0.0),
            DomainKind::Whole => f64::INFINITY,
        }
    }

    /// Unit vector pointing into D at the boundary point nearest to x.
    pub fn inward_direction(&self, x: Vec2) -> Vec2 {
        match &self.kind {
            DomainKind::HalfSpace { normal, .. } => *normal,
            DomainKind::Ball { center, .. } => {
                let v = sub(*center, x);
                let n = norm2(v);
                if n == 0.0 {
                    [1.0, 0.0]
                } else {
                    scale(v, 1.0 / n)
                }
            }
            DomainKind::Whole => [0.0, 0.0],
        }
    }

    /// Area and centroid of D ∩ [lo, hi] (a rectangle).
    pub fn clip_rect(&self, lo: Vec2, hi: Vec2) -> (f64, Vec2) {
        match &self.kind {
            DomainKind::Whole => rect_moments(lo, hi),
            DomainKind::HalfSpace { normal, offset } => {
                let poly = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
                let clipped = clip_polygon(&poly, *normal, *offset);
                polygon_moments(&clipped)
            }
            DomainKind::Ball { center, radius } => disk_rect_moments(*center, *radius, lo, hi),
        }
    }
}

fn rect_moments(lo: Vec2, hi: Vec2) -> (f64, Vec2) {
    (
        (hi[0] - lo[0]) * (hi[1] - lo[1]),
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])],
    )
}

/// Sutherland–Hodgman clip against {n·x > c}.
fn clip_polygon(poly: &[Vec2], n: Vec2, c: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let fa = dot(n, a) - c;
        let fb = dot(n, b) - c;
        if fa >= 0.0 {
            out.push(a);
        }
        if (fa >= 0.0) != (fb >= 0.0) {
            let s = fa / (fa - fb);
            out.push(add(a, scale(sub(b, a), s)));
        }
    }
    out
}

fn polygon_moments(poly: &[Vec2]) -> (f64, Vec2) {
    if poly.len() < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let cr = p[0] * q[1] - q[0] * p[1];
        a += cr;
        cx += (p[0] + q[0]) * cr;
        cy += (p[1] + q[1]) * cr;
    }
    a *= 0.5;
    if a.abs() < 1e-300 {
        return (0.0, [0.0, 0.0]);
    }
    (a.abs(), [cx / (6.0 * a), cy / (6.0 * a)])
}

fn disk_rect_moments(c: Vec2, r: f64, lo: Vec2, hi: Vec2) -> (f64, Vec2) {
    let x0 = lo[0].max(c[0] - r);
    let x1 = hi[0].min(c[0] + r);
    if x1 <= x0 {
        return (0.0, [0.0, 0.0]);
    }
    // Vertical chord of the disk clipped to [lo.y, hi.y].
    let chord = |x: f64| {
        let h = (r * r - (x - c[0]).powi(2)).max(0.0).sqrt();
        let y0 = lo[1].max(c[1] - h);
        let y1 = hi[1].min(c[1] + h);
        if y1 > y0 {
            (y0, y1)
        } else {
            (0.0, 0.0)
        }
    };
    // Breakpoints where the circle crosses the horizontal edges.
    let mut pts = vec![x0, x1];
    for &y in &[lo[1], hi[1]] {
        let dy = y - c[1];
        if dy.abs() < r {
            let w = (r * r - dy * dy).sqrt();
            for xb in [c[0] - w, c[0] + w] {
                if xb > x0 && xb < x1 {
                    pts.push(xb);
                }
            }
        }
    }
    if c[0] > x0 && c[0] < x1 {
        pts.push(c[0]);
    }
    pts.sort_by(f64::total_cmp);
    let cfg = QuadConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-16,
        max_subdivisions: 200,
    };
    let area = integrate_breaks(
        |x| {
            let (a, b) = chord(x);
            b - a
        },
        &pts,
        &cfg,
    )
    .value;
    if area <= 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    let mx = integrate_breaks(
        |x| {
            let (a, b) = chord(x);
            x * (b - a)
        },
        &pts,
        &cfg,
    )
    .value;
    let my = integrate_breaks(
        |x| {
            let (a, b) = chord(x);
            0.5 * (b * b - a * a)
        },
        &pts,
        &cfg,
    )
    .value;
    (area, [mx / area, my / area])
}

/// Tensor lattice over a bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: Vec2,
    pub hi: Vec2,
    pub n: [usize; 2],
}

impl GridBox {
    /// Square lattice of m×m cells centred at `center` with spacing h.
    pub fn centered(center: Vec2, h: f64, m: usize) -> Self {
        let half = 0.5 * h * m as f64;
        GridBox {
            lo: [center[0] - half, center[1] - half],
            hi: [center[0] + half, center[1] + half],
            n: [m, m],
        }
    }

    pub fn spacing(&self) -> Vec2 {
        [
            (self.hi[0] - self.lo[0]) / self.n[0] as f64,
            (self.hi[1] - self.lo[1]) / self.n[1] as f64,
        ]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        let h = self.spacing();
        [
            self.lo[0] + (i as f64 + 0.5) * h[0],
            self.lo[1] + (j as f64 + 0.5) * h[1],
        ]
    }

    pub fn cell_bounds(&self, i: usize, j: usize) -> (Vec2, Vec2) {
        let h = self.spacing();
        let lo = [self.lo[0] + i as f64 * h[0], self.lo[1] + j as f64 * h[1]];
        (lo, [lo[0] + h[0], lo[1] + h[1]])
    }

    /// Cell containing x, if inside the box.
    pub fn locate(&self, x: Vec2) -> Option<(usize, usize)> {
        let h = self.spacing();
        let fi = (x[0] - self.lo[0]) / h[0];
        let fj = (x[1] - self.lo[1]) / h[1];
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        (i < self.n[0] && j < self.n[1]).then_some((i, j))
    }
}

/// One quadrature node of a domain grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: Vec2,
    pub weight: f64,
    pub cell: (usize, usize),
    pub rho: f64,
    /// True when the cell is cut by the boundary.
    pub cut: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorGrid {
    pub bbox: GridBox,
    pub points: Vec<GridPoint>,
}

impl InteriorGrid {
    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lookup table from lattice cell to point index.
    pub fn cell_index(&self) -> Vec<Option<usize>> {
        let [nx, ny] = self.bbox.n;
        let mut idx = vec![None; nx * ny];
        for (k, p) in self.points.iter().enumerate() {
            idx[p.cell.0 * ny + p.cell.1] = Some(k);
        }
        idx
    }
}

/// Cell quadrature for ∫_{D ∩ box}: full cells use their centre, cut cells
/// their clipped centroid and area. Cut-cell nodes closer than h/10 to the
/// boundary are moved inward to depth h/10, which keeps the weights exact
/// and leaves a graded layer of nodes with ρ ∈ [h/10, h].
pub fn interior_grid(domain: &Domain, spec: &GridBox) -> Result<InteriorGrid> {
    if spec.n[0] < 2 || spec.n[1] < 2 {
        return Err(Error::Domain("grid resolution must be at least 2 per axis".into()));
    }
    if !(spec.hi[0] > spec.lo[0] && spec.hi[1] > spec.lo[1]) {
        return Err(Error::Domain("grid box must have positive extent".into()));
    }
    let h = spec.spacing();
    let hmin = h[0].min(h[1]);
    let mut points = Vec::new();
    for i in 0..spec.n[0] {
        for j in 0..spec.n[1] {
            let (lo, hi) = spec.cell_bounds(i, j);
            let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
            let inside = corners.iter().filter(|c| domain.rho(**c) > 0.0).count();
            if inside == 4 {
                let x = spec.cell_center(i, j);
                points.push(GridPoint {
                    x,
                    weight: h[0] * h[1],
                    cell: (i, j),
                    rho: domain.rho(x),
                    cut: false,
                });
                continue;
            }
            let (area, mut c) = domain.clip_rect(lo, hi);
            if area <= 1e-14 * h[0] * h[1] {
                continue;
            }
            let floor = 0.1 * hmin;
            let r = domain.rho(c);
            if r < floor {
                let dir = domain.inward_direction(c);
                c = add(c, scale(dir, floor - r));
            }
            points.push(GridPoint {
                x: c,
                weight: area,
                cell: (i, j),
                rho: domain.rho(c),
                cut: true,
            });
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid("bounding box does not meet the domain".into()));
    }
    Ok(InteriorGrid { bbox: *spec, points })
}

/// Average of `f·1_D` over an axis-aligned cell by a k×k Gauss rule.
pub fn cell_average(domain: &Domain, lo: Vec2, hi: Vec2, k: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let (xs, wx) = gauss_legendre_on(k, lo[0], hi[0]);
    let (ys, wy) = gauss_legendre_on(k, lo[1], hi[1]);
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let mut acc = 0.0;
    for (x, a) in xs.iter().zip(&wx) {
        for (y, b) in ys.iter().zip(&wy) {
            let p = [*x, *y];
            if domain.rho(p) > 0.0 {
                acc += a * b * f(p);
            }
        }
    }
    acc / area
}
