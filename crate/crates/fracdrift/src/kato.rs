//! Drift fields and their Kato-class moduli in the plane.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interior_grid, norm2, sub, Domain, DomainKind, GridBox, Vec2};
use crate::quad::{integrate_breaks, QuadConfig};
use crate::stable_core::StableParams;

/// Catalog of drifts addressable from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    Constant { b: Vec2 },
    /// `amplitude · exp(1 − 1/(1 − |y−c|²/R²))` on B(c, R).
    Bump { center: Vec2, radius: f64, amplitude: Vec2 },
    /// `scale · |y − pole|^{−exponent} · direction`.
    Singular {
        pole: Vec2,
        exponent: f64,
        direction: Vec2,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// A drift b on R², extended by zero outside D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftField {
    pub spec: DriftSpec,
    pub domain: Domain,
    /// Inside this radius around a singular pole, |b| is frozen at its value
    /// on the sphere of that radius.
    #[serde(default)]
    pub cap_radius: Option<f64>,
    #[serde(default = "one")]
    pub factor: f64,
}

impl DriftField {
    pub fn new(spec: DriftSpec, domain: Domain) -> Result<Self> {
        if let DriftSpec::Singular { exponent, direction, .. } = &spec {
            if !(*exponent > 0.0 && *exponent < 2.0) {
                return Err(Error::config("drift.exponent", "exponent must lie in (0, 2)"));
            }
            if norm2(*direction) == 0.0 {
                return Err(Error::config("drift.direction", "direction must be nonzero"));
            }
        }
        if let DriftSpec::Bump { radius, .. } = &spec {
            if !(*radius > 0.0) {
                return Err(Error::config("drift.radius", "radius must be positive"));
            }
        }
        Ok(DriftField {
            spec,
            domain,
            cap_radius: None,
            factor: 1.0,
        })
    }

    pub fn zero(domain: Domain) -> Self {
        DriftField::new(DriftSpec::Zero, domain).expect("zero drift is valid")
    }

    pub fn constant(b: Vec2, domain: Domain) -> Self {
        DriftField::new(DriftSpec::Constant { b }, domain).expect("constant drift is valid")
    }

    /// The same drift multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.factor *= c;
        out
    }

    /// The drift with its pole capped at radius `eps`.
    pub fn capped(&self, eps: f64) -> Self {
        let mut out = self.clone();
        out.cap_radius = Some(eps);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.factor == 0.0
            || match &self.spec {
                DriftSpec::Zero => true,
                DriftSpec::Constant { b } => b[0] == 0.0 && b[1] == 0.0,
                DriftSpec::Bump { amplitude, .. } => amplitude[0] == 0.0 && amplitude[1] == 0.0,
                DriftSpec::Singular { scale, .. } => *scale == 0.0,
            }
    }

    /// Constant vector if b is constant on D.
    pub fn constant_value(&self) -> Option<Vec2> {
        match &self.spec {
            DriftSpec::Zero => Some([0.0, 0.0]),
            DriftSpec::Constant { b } => Some([b[0] * self.factor, b[1] * self.factor]),
            _ => None,
        }
    }

    pub fn pole(&self) -> Option<(Vec2, f64)> {
        match &self.spec {
            DriftSpec::Singular { pole, exponent, .. } => Some((*pole, *exponent)),
            _ => None,
        }
    }

    /// Sup norm of b on D when finite.
    pub fn bound_hint(&self) -> Option<f64> {
        let f = self.factor.abs();
        match &self.spec {
            DriftSpec::Zero => Some(0.0),
            DriftSpec::Constant { b } => Some(norm2(*b) * f),
            DriftSpec::Bump { amplitude, .. } => Some(norm2(*amplitude) * f),
            DriftSpec::Singular { exponent, scale, direction, .. } => self
                .cap_radius
                .map(|e| scale.abs() * norm2(*direction) * e.powf(-exponent) * f),
        }
    }

    pub fn description(&self) -> String {
        let base = match &self.spec {
            DriftSpec::Zero => "zero".to_string(),
            DriftSpec::Constant { b } => format!("constant({}, {})", b[0], b[1]),
            DriftSpec::Bump { center, radius, .. } => {
                format!("bump(c=({}, {}), R={radius})", center[0], center[1])
            }
            DriftSpec::Singular { pole, exponent, .. } => {
                format!("singular(pole=({}, {}), p={exponent})", pole[0], pole[1])
            }
        };
        let mut s = base;
        if self.factor != 1.0 {
            s = format!("{}*{s}", self.factor);
        }
        if let Some(e) = self.cap_radius {
            s.push_str(&format!(" capped at {e}"));
        }
        s
    }

    /// b(y) for y ∈ D, zero outside.
    pub fn eval(&self, y: Vec2) -> Vec2 {
        if !self.domain.contains(y) {
            return [0.0, 0.0];
        }
        let v = self.raw(y);
        [v[0] * self.factor, v[1] * self.factor]
    }

    fn raw(&self, y: Vec2) -> Vec2 {
        match &self.spec {
            DriftSpec::Zero => [0.0, 0.0],
            DriftSpec::Constant { b } => *b,
            DriftSpec::Bump { center, radius, amplitude } => {
                let s = (y[0] - center[0]).powi(2) + (y[1] - center[1]).powi(2);
                let s = s / (radius * radius);
                if s >= 1.0 {
                    [0.0, 0.0]
                } else {
                    let e = (1.0 - 1.0 / (1.0 - s)).exp();
                    [amplitude[0] * e, amplitude[1] * e]
                }
            }
            DriftSpec::Singular { pole, exponent, direction, scale } => {
                let mut r = norm2(sub(y, *pole));
                if let Some(eps) = self.cap_radius {
                    r = r.max(eps);
                }
                if r == 0.0 {
                    return [f64::INFINITY, f64::INFINITY];
                }
                let m = scale * r.powf(-exponent);
                [direction[0] * m, direction[1] * m]
            }
        }
    }

    pub fn norm(&self, y: Vec2) -> f64 {
        norm2(self.eval(y))
    }

    /// div b inside D by central differences (exact zero for constant drifts).
    pub fn divergence(&self, y: Vec2) -> f64 {
        if self.constant_value().is_some() || !self.domain.contains(y) {
            return 0.0;
        }
        let h = 1e-5;
        let dx = self.raw([y[0] + h, y[1]])[0] - self.raw([y[0] - h, y[1]])[0];
        let dy = self.raw([y[0], y[1] + h])[1] - self.raw([y[0], y[1] - h])[1];
        self.factor * (dx + dy) / (2.0 * h)
    }
}

/// Angular intervals {θ : x + ρ(cos θ, sin θ) ∈ D}.
pub fn arcs_in_domain(domain: &Domain, x: Vec2, rho: f64) -> Vec<(f64, f64)> {
    match &domain.kind {
        DomainKind::Whole => vec![(0.0, 2.0 * PI)],
        DomainKind::HalfSpace { normal, offset } => {
            let k = (offset - (normal[0] * x[0] + normal[1] * x[1])) / rho;
            if k <= -1.0 {
                vec![(0.0, 2.0 * PI)]
            } else if k >= 1.0 {
                vec![]
            } else {
                let tn = normal[1].atan2(normal[0]);
                let w = k.acos();
                vec![(tn - w, tn + w)]
            }
        }
        DomainKind::Ball { center, radius } => {
            let v = sub(x, *center);
            let nv = norm2(v);
            if nv == 0.0 {
                return if rho < *radius { vec![(0.0, 2.0 * PI)] } else { vec![] };
            }
            let k = (radius * radius - nv * nv - rho * rho) / (2.0 * rho * nv);
            if k >= 1.0 {
                vec![(0.0, 2.0 * PI)]
            } else if k <= -1.0 {
                vec![]
            } else {
                let tv = v[1].atan2(v[0]);
                let w = k.acos();
                vec![(tv + w, tv + 2.0 * PI - w)]
            }
        }
    }
}

fn arc_length(arcs: &[(f64, f64)]) -> f64 {
    arcs.iter().map(|(a, b)| b - a).sum()
}

/// Probe set for the sup over x ∈ D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct KatoProbes {
    #[serde(default)]
    pub grid: Option<GridBox>,
    #[serde(default)]
    pub points: Vec<Vec2>,
}

impl KatoProbes {
    pub fn points(points: Vec<Vec2>) -> Self {
        KatoProbes { grid: None, points }
    }

    fn collect(&self, b: &DriftField, domain: &Domain) -> Result<Vec<Vec2>> {
        let mut pts: Vec<Vec2> = Vec::new();
        if let Some(g) = &self.grid {
            pts.extend(interior_grid(domain, g)?.points.iter().map(|p| p.x));
        }
        pts.extend(self.points.iter().copied().filter(|p| domain.contains(*p)));
        if let Some((pole, _)) = b.pole() {
            if domain.contains(pole) && !pts.contains(&pole) {
                pts.push(pole);
            }
        }
        if pts.is_empty() {
            return Err(Error::EmptyGrid("no probe point lies in the domain".into()));
        }
        Ok(pts)
    }
}

/// θ-integral of |b(x + ρe_θ)| over the part of the circle inside D.
fn angular_mass(b: &DriftField, domain: &Domain, x: Vec2, rho: f64, cfg: &QuadConfig) -> f64 {
    let arcs = arcs_in_domain(domain, x, rho);
    if arcs.is_empty() {
        return 0.0;
    }
    if let Some(c) = b.constant_value() {
        return norm2(c) * arc_length(&arcs);
    }
    let mut total = 0.0;
    for (a0, a1) in arcs {
        let mut pts = vec![a0, a1];
        let mut center_angle = None;
        if let Some((pole, _)) = b.pole() {
            let v = sub(pole, x);
            center_angle = Some(v[1].atan2(v[0]));
        }
        if let DriftSpec::Bump { center, .. } = &b.spec {
            let v = sub(*center, x);
            center_angle = Some(v[1].atan2(v[0]));
        }
        if let Some(ca) = center_angle {
            for k in -1..=1 {
                let a = ca + 2.0 * PI * k as f64;
                if a > a0 && a < a1 {
                    pts.push(a);
                }
            }
        }
        pts.sort_by(f64::total_cmp);
        total += integrate_breaks(
            |th| b.norm([x[0] + rho * th.cos(), x[1] + rho * th.sin()]),
            &pts,
            cfg,
        )
        .value;
    }
    total
}

/// Radii at which the angular mass is not smooth.
fn radial_breaks(b: &DriftField, domain: &Domain, x: Vec2, lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    let mut push = |r: f64| {
        if r > lo && r < hi {
            pts.push(r);
        }
    };
    match &domain.kind {
        DomainKind::Whole => {}
        DomainKind::HalfSpace { .. } => push(domain.rho(x)),
        DomainKind::Ball { center, radius } => {
            let d = norm2(sub(x, *center));
            push(radius - d);
            push(radius + d);
        }
    }
    if let Some((pole, _)) = b.pole() {
        push(norm2(sub(pole, x)));
        if let Some(e) = b.cap_radius {
            push(norm2(sub(pole, x)) - e);
            push(norm2(sub(pole, x)) + e);
        }
    }
    if let DriftSpec::Bump { center, radius, .. } = &b.spec {
        let d = norm2(sub(*center, x));
        push(d - radius);
        push(d + radius);
        push(d);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// ∫_{ρ∈[lo,hi]} ρ^{e} Θ(ρ) dρ with e > −1, substituting u = ρ^{e+1}.
fn radial_power_integral(
    b: &DriftField,
    domain: &Domain,
    x: Vec2,
    e: f64,
    lo: f64,
    hi: f64,
    cfg: &QuadConfig,
) -> f64 {
    let q = e + 1.0;
    let breaks: Vec<f64> = radial_breaks(b, domain, x, lo, hi)
        .into_iter()
        .map(|r| r.powf(q))
        .collect();
    integrate_breaks(
        |u| {
            let rho = u.powf(1.0 / q);
            if rho <= 0.0 {
                return 0.0;
            }
            angular_mass(b, domain, x, rho, cfg) / q
        },
        &breaks,
        cfg,
    )
    .value
}

/// ∫_{ρ>lo} ρ^{e} Θ(ρ) dρ with e < −1, substituting v = ρ^{e+1}.
fn radial_tail_integral(b: &DriftField, domain: &Domain, x: Vec2, e: f64, lo: f64, cfg: &QuadConfig) -> f64 {
    let q = -(e + 1.0);
    let far = match (&b.spec, &domain.kind) {
        (DriftSpec::Bump { center, radius, .. }, _) => norm2(sub(*center, x)) + radius,
        (_, DomainKind::Ball { center, radius }) => norm2(sub(*center, x)) + radius,
        _ => f64::INFINITY,
    };
    if far <= lo {
        return 0.0;
    }
    let mut breaks: Vec<f64> = radial_breaks(b, domain, x, lo, far.min(1e300))
        .into_iter()
        .map(|r| r.powf(-q))
        .collect();
    if far.is_infinite() {
        breaks.push(0.0);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    integrate_breaks(
        |v| {
            if v <= 0.0 {
                return 0.0;
            }
            let rho = v.powf(-1.0 / q);
            angular_mass(b, domain, x, rho, cfg) / q
        },
        &breaks,
        cfg,
    )
    .value
}

/// Whether the singular part of b makes ∫ |b(y)||x−y|^{e−1} dy diverge at x.
fn pole_diverges(b: &DriftField, x: Vec2, exponent_sum: f64) -> bool {
    match b.pole() {
        Some((pole, p)) => b.cap_radius.is_none() && pole == x && p >= exponent_sum,
        None => false,
    }
}

fn probe_integral(b: &DriftField, domain: &Domain, x: Vec2, e: f64, r: f64, cfg: &QuadConfig) -> f64 {
    // At the pole itself the integrand is ρ^{e−p}; integrate in that power.
    if let Some((pole, p)) = b.pole() {
        if pole == x && b.cap_radius.is_none() {
            let q = e + 1.0 - p;
            let scale = match &b.spec {
                DriftSpec::Singular { scale, direction, .. } => scale.abs() * norm2(*direction) * b.factor.abs(),
                _ => unreachable!(),
            };
            let lim = r.min(domain.rho(x));
            // Exact part on the ball around the pole where the circle lies in D.
            let inner = 2.0 * PI * scale * lim.powf(q) / q;
            let outer = if r > lim {
                radial_power_integral(b, domain, x, e, lim, r, cfg)
            } else {
                0.0
            };
            return inner + outer;
        }
    }
    radial_power_integral(b, domain, x, e, 0.0, r, cfg)
}

/// sup_x ∫_{D∩B(x,r)} |b(y)| |x−y|^{α−1−d} dy over the probe set (d = 2).
pub fn kato_modulus(
    params: &StableParams,
    b: &DriftField,
    domain: &Domain,
    r: f64,
    probes: &KatoProbes,
    cfg: &QuadConfig,
) -> Result<f64> {
    require_plane(params)?;
    if !(r > 0.0) {
        return Err(Error::Domain(format!("radius {r} must be positive")));
    }
    if b.is_zero() {
        return Ok(0.0);
    }
    let alpha = params.alpha();
    let e = alpha - 2.0;
    let pts = probes.collect(b, domain)?;
    if pts.iter().any(|x| pole_diverges(b, *x, alpha - 1.0)) {
        return Ok(f64::INFINITY);
    }
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|x| probe_integral(b, domain, *x, e, r, cfg))
        .collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// sup_x ∫_D (|y−x|^{α−1−d} ∧ t^β |y−x|^{α−1−d−αβ}) |b(y)| dy (d = 2).
pub fn beta_criterion(
    params: &StableParams,
    b: &DriftField,
    domain: &Domain,
    beta: f64,
    t: f64,
    probes: &KatoProbes,
    cfg: &QuadConfig,
) -> Result<f64> {
    require_plane(params)?;
    let alpha = params.alpha();
    if !(beta > (alpha - 1.0) / alpha) {
        return Err(Error::Domain(format!(
            "beta = {beta} must exceed (alpha-1)/alpha = {}",
            (alpha - 1.0) / alpha
        )));
    }
    crate::stable_core::check_time(t)?;
    if b.is_zero() {
        return Ok(0.0);
    }
    let pts = probes.collect(b, domain)?;
    if pts.iter().any(|x| pole_diverges(b, *x, alpha - 1.0)) {
        return Ok(f64::INFINITY);
    }
    let rs = t.powf(1.0 / alpha);
    let e_in = alpha - 2.0;
    let e_out = alpha - 2.0 - alpha * beta;
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|x| {
            let inner = probe_integral(b, domain, *x, e_in, rs, cfg);
            let outer = t.powf(beta) * radial_tail_integral(b, domain, *x, e_out, rs, cfg);
            inner + outer
        })
        .collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

fn require_plane(params: &StableParams) -> Result<()> {
    if params.d() != 2 {
        return Err(Error::Unsupported("Kato moduli are implemented for d = 2".into()));
    }
    if params.alpha() <= 1.0 {
        return Err(Error::Domain("Kato moduli need alpha > 1".into()));
    }
    Ok(())
}

/// Closed form of the modulus for a constant drift on R².
pub fn constant_kato_closed_form(alpha: f64, bnorm: f64, r: f64) -> f64 {
    2.0 * PI * bnorm * r.powf(alpha - 1.0) / (alpha - 1.0)
}

/// Closed form of the β-criterion for a constant drift on R².
pub fn constant_beta_closed_form(alpha: f64, bnorm: f64, beta: f64, t: f64) -> f64 {
    2.0 * PI * bnorm * t.powf(1.0 - 1.0 / alpha) * (1.0 / (alpha - 1.0) + 1.0 / (alpha * beta + 1.0 - alpha))
}

/// A sequence "vanishes" when it is finite, nonincreasing and its last
/// entry is at most a tenth of its first.
pub fn sequence_vanishes(seq: &[f64]) -> bool {
    if seq.len() < 2 || seq.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if seq[0] <= 0.0 {
        return seq.iter().all(|v| *v == 0.0);
    }
    let monotone = seq.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    monotone && seq[seq.len() - 1] <= 0.1 * seq[0]
}

/// Moduli along dyadic sequences r = t = 2^{-k}, k = 0..n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Covanishing {
    pub scales: Vec<f64>,
    pub kato: Vec<f64>,
    pub beta: Vec<f64>,
    pub kato_vanishes: bool,
    pub beta_vanishes: bool,
}

impl Covanishing {
    pub fn consistent(&self) -> bool {
        self.kato_vanishes == self.beta_vanishes
    }
}

pub fn covanishing(
    params: &StableParams,
    b: &DriftField,
    domain: &Domain,
    beta: f64,
    n: usize,
    probes: &KatoProbes,
    cfg: &QuadConfig,
) -> Result<Covanishing> {
    let scales: Vec<f64> = (0..=n).map(|k| 2f64.powi(-(k as i32))).collect();
    let mut kato = Vec::with_capacity(scales.len());
    let mut bc = Vec::with_capacity(scales.len());
    for &s in &scales {
        kato.push(kato_modulus(params, b, domain, s, probes, cfg)?);
        bc.push(beta_criterion(params, b, domain, beta, s, probes, cfg)?);
    }
    Ok(Covanishing {
        kato_vanishes: sequence_vanishes(&kato),
        beta_vanishes: sequence_vanishes(&bc),
        scales,
        kato,
        beta: bc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arcs_cover_expected_length() {
        let h = Domain::half_space([0.0, 1.0], 0.0).unwrap();
        let a = arcs_in_domain(&h, [0.0, 0.0], 1.0);
        assert!((arc_length(&a) - PI).abs() < 1e-12);
        let ball = Domain::ball([0.0, 0.0], 1.0).unwrap();
        let a = arcs_in_domain(&ball, [0.5, 0.0], 0.2);
        assert!((arc_length(&a) - 2.0 * PI).abs() < 1e-12);
        assert!(arcs_in_domain(&ball, [0.5, 0.0], 1.6).is_empty());
    }

    #[test]
    fn vanishing_rule() {
        assert!(sequence_vanishes(&[1.0, 0.5, 0.05]));
        assert!(!sequence_vanishes(&[1.0, 0.5, 0.2]));
        assert!(!sequence_vanishes(&[f64::INFINITY, 1.0]));
        assert!(sequence_vanishes(&[0.0, 0.0]));
    }
}
