//! The boundary-decay envelope q^D and numerical checks of the inequality
//! lemmas that close the Picard contraction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{norm2, sub, Domain, DomainKind, Vec2};
use crate::quad::{integrate_breaks, QuadConfig};
use crate::report::{CheckReport, Comparison, Provenance};
use crate::rng::stream_rng;
use crate::stable_core::{eval_free_kernel, rho_gamma_radial, KernelTable, StableParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub params: StableParams,
    pub domain: Domain,
    pub horizon: f64,
}

impl EnvelopeParams {
    pub fn new(params: StableParams, domain: Domain, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::config("horizon", "horizon must be positive"));
        }
        domain.validate(params.alpha())?;
        Ok(EnvelopeParams { params, domain, horizon })
    }

    fn table(&self) -> std::sync::Arc<KernelTable> {
        KernelTable::shared(&self.params)
    }
}

/// q̃(t,x) = 1 ∧ ρ(x)^{α/2}/√t.
pub fn q_tilde(env: &EnvelopeParams, t: f64, x: Vec2) -> f64 {
    q_tilde_rho(env.params.alpha(), t, env.domain.rho(x))
}

pub(crate) fn q_tilde_rho(alpha: f64, t: f64, rho: f64) -> f64 {
    if rho.is_infinite() {
        return 1.0;
    }
    (rho.powf(0.5 * alpha) / t.sqrt()).min(1.0)
}

/// q^D(t,x,y) = q̃(t,x) q̃(t,y) p(t,x,y) through the exact kernel path.
pub fn q_envelope(env: &EnvelopeParams, t: f64, x: Vec2, y: Vec2) -> Result<f64> {
    let (a, b) = (q_tilde(env, t, x), q_tilde(env, t, y));
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    Ok(a * b * eval_free_kernel(&env.params, t, norm2(sub(x, y)))?)
}

/// q^D through the tabulated kernel.
pub fn q_envelope_fast(env: &EnvelopeParams, table: &KernelTable, t: f64, x: Vec2, y: Vec2) -> f64 {
    let (a, b) = (q_tilde(env, t, x), q_tilde(env, t, y));
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    a * b * table.density(t, norm2(sub(x, y)))
}

fn gam_range(params: &StableParams, gamma: f64) -> Result<()> {
    let hi = params.d() as f64 / params.alpha();
    if !(gamma > -1.0 && gamma < hi) {
        return Err(Error::Domain(format!("gamma = {gamma} must lie in (-1, {hi})")));
    }
    Ok(())
}

/// ∫₀^t ϱ^γ(s,x) ds, substituting v = s^{1+γ}.
pub fn gam_lhs(params: &StableParams, gamma: f64, t: f64, r: f64, cfg: &QuadConfig) -> Result<f64> {
    gam_range(params, gamma)?;
    if !(r > 0.0) {
        return Err(Error::Domain("the lemma needs x ≠ 0".into()));
    }
    let alpha = params.alpha();
    let dpa = params.d() as f64 + alpha;
    let q = 1.0 + gamma;
    let vt = t.powf(q);
    let mut pts = vec![0.0, vt];
    let knee = r.powf(alpha * q);
    if knee < vt {
        pts.insert(1, knee);
    }
    let res = integrate_breaks(
        |v| {
            let s = v.powf(1.0 / q);
            (r + s.powf(1.0 / alpha)).powf(-dpa) / q
        },
        &pts,
        cfg,
    );
    res.require(cfg, "gam integral")
}

/// |x|^{αγ−d} ∧ t^{1+γ}|x|^{−d−α}.
pub fn gam_rhs(params: &StableParams, gamma: f64, t: f64, r: f64) -> f64 {
    let d = params.d() as f64;
    let alpha = params.alpha();
    r.powf(alpha * gamma - d).min(t.powf(1.0 + gamma) * r.powf(-d - alpha))
}

/// One sample of (gam).
pub fn check_gam(env: &EnvelopeParams, gamma: f64, t: f64, x: Vec2) -> Result<CheckReport> {
    crate::stable_core::check_time(t)?;
    let r = norm2(x);
    let cfg = QuadConfig::default().with_rel_tol(1e-10);
    let lhs = gam_lhs(&env.params, gamma, t, r, &cfg)?;
    let rhs = gam_rhs(&env.params, gamma, t, r);
    Ok(CheckReport::new("gam", Provenance::Quadrature)
        .with_params(json!({"alpha": env.params.alpha(), "gamma": gamma, "t": t, "x": x}))
        .with_samples(1, 0)
        .with_sides(&[lhs], &[rhs])
        .decide(lhs / rhs, f64::INFINITY, Comparison::AtMost)
        .note("single sample; a constant is fitted by the sweep"))
}

/// q^D(t−s,x,z) q^D(s,z,y) / q^D(t,x,y) and ρ(z)^α(ϱ⁰(t−s,x−z) + ϱ⁰(s,z−y)).
pub fn three_p_sides(
    env: &EnvelopeParams,
    table: &KernelTable,
    t: f64,
    s: f64,
    x: Vec2,
    y: Vec2,
    z: Vec2,
) -> Result<(f64, f64)> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    let den = q_envelope_fast(env, table, t, x, y);
    if den == 0.0 {
        return Err(Error::UndefinedRatio("q^D(t,x,y) vanishes".into()));
    }
    let lhs = q_envelope_fast(env, table, t - s, x, z) * q_envelope_fast(env, table, s, z, y) / den;
    let p = &env.params;
    let rz = env.domain.rho(z);
    let rhs = rz.powf(p.alpha())
        * (rho_gamma_radial(p, 0.0, t - s, norm2(sub(x, z))) + rho_gamma_radial(p, 0.0, s, norm2(sub(z, y))));
    Ok((lhs, rhs))
}

pub fn check_3p(env: &EnvelopeParams, t: f64, s: f64, x: Vec2, y: Vec2, z: Vec2) -> Result<CheckReport> {
    if t > env.horizon {
        return Err(Error::Domain(format!("t = {t} exceeds the horizon {}", env.horizon)));
    }
    let table = env.table();
    let (lhs, rhs) = three_p_sides(env, &table, t, s, x, y, z)?;
    Ok(CheckReport::new("3p", Provenance::Quadrature)
        .with_params(json!({"alpha": env.params.alpha(), "t": t, "s": s, "x": x, "y": y, "z": z}))
        .with_samples(1, 0)
        .with_sides(&[lhs], &[rhs])
        .decide(lhs / rhs, f64::INFINITY, Comparison::AtMost)
        .note("single sample; a constant is fitted by the sweep"))
}

/// Both sides of the integral inequality, s = u^{α/(α−1)} removing s^{−1/α}.
pub fn integral_26_sides(
    env: &EnvelopeParams,
    table: &KernelTable,
    t: f64,
    y: Vec2,
    z: Vec2,
    cfg: &QuadConfig,
) -> Result<(f64, f64)> {
    let alpha = env.params.alpha();
    if alpha <= 1.0 {
        return Err(Error::Domain("the integral inequality needs alpha > 1".into()));
    }
    let e = alpha / (alpha - 1.0);
    let jac = e; // s^{-1/α} ds = e du
    let r = norm2(sub(z, y));
    let (rz, ry) = (env.domain.rho(z), env.domain.rho(y));
    let umax = (0.5 * t).powf(1.0 / e);
    let mut pts = vec![0.0, umax];
    for knee in [r.powf(alpha), rz.powf(alpha), ry.powf(alpha)] {
        let u = knee.powf(1.0 / e);
        if u > 0.0 && u < umax {
            pts.push(u);
        }
    }
    pts.sort_by(f64::total_cmp);
    let p = &env.params;
    let left = integrate_breaks(
        |u| {
            let s = u.powf(e);
            if s <= 0.0 {
                return 0.0;
            }
            jac * q_tilde_rho(alpha, s, rz) * q_tilde_rho(alpha, s, ry) * table.density(s, r)
        },
        &pts,
        cfg,
    )
    .require(cfg, "integral inequality, left side")?;
    let right = integrate_breaks(
        |u| {
            let s = u.powf(e);
            if s <= 0.0 {
                return 0.0;
            }
            jac * q_tilde_rho(alpha, s, rz) * rho_gamma_radial(p, 1.0, s, r)
        },
        &pts,
        cfg,
    )
    .require(cfg, "integral inequality, right side")?;
    Ok((q_tilde_rho(alpha, t, rz) * left, q_tilde_rho(alpha, t, ry) * right))
}

pub fn check_integral_26(env: &EnvelopeParams, t: f64, y: Vec2, z: Vec2) -> Result<CheckReport> {
    if !(t > 0.0 && t <= env.horizon) {
        return Err(Error::Domain(format!("t = {t} must lie in (0, {}]", env.horizon)));
    }
    let table = env.table();
    let cfg = QuadConfig::default().with_rel_tol(1e-8);
    let (l, r) = integral_26_sides(env, &table, t, y, z, &cfg)?;
    Ok(CheckReport::new("integral_26", Provenance::Quadrature)
        .with_params(json!({"alpha": env.params.alpha(), "t": t, "y": y, "z": z}))
        .with_samples(1, 0)
        .with_sides(&[l], &[r])
        .decide(l / r, f64::INFINITY, Comparison::AtMost)
        .note("single sample; a constant is fitted by the sweep"))
}

/// Which lemma a sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    Gam,
    ThreeP,
    Integral26,
}

impl Lemma {
    pub fn id(&self) -> &'static str {
        match self {
            Lemma::Gam => "gam",
            Lemma::ThreeP => "3p",
            Lemma::Integral26 => "integral_26",
        }
    }
}

/// Exponents used by the (gam) sweep.
pub fn gam_exponents(params: &StableParams) -> Vec<f64> {
    let hi = params.d() as f64 / params.alpha();
    vec![-0.5, 0.0, 1.0 - 1.0 / params.alpha(), 1.0, 0.9 * hi]
}

/// Samples a point of D: uniform in a bounded window, or with probability
/// `boost` at depth ρ < 0.05 below a uniform boundary point.
pub fn sample_point(domain: &Domain, rng: &mut impl Rng, boost: f64) -> Vec2 {
    let layer = rng.gen::<f64>() < boost;
    match &domain.kind {
        DomainKind::Ball { center, radius } => {
            let th = 2.0 * PI * rng.gen::<f64>();
            let rad = if layer {
                radius - 0.05 * rng.gen::<f64>()
            } else {
                radius * rng.gen::<f64>().sqrt()
            };
            let rad = rad.min(radius * (1.0 - 1e-12));
            [center[0] + rad * th.cos(), center[1] + rad * th.sin()]
        }
        DomainKind::HalfSpace { normal, offset } => {
            let tang = [-normal[1], normal[0]];
            let u = 4.0 * rng.gen::<f64>() - 2.0;
            let depth = if layer { 0.05 * rng.gen::<f64>() } else { 4.0 * rng.gen::<f64>() };
            let depth = depth.max(1e-12);
            let base = [normal[0] * offset, normal[1] * offset];
            [
                base[0] + u * tang[0] + depth * normal[0],
                base[1] + u * tang[1] + depth * normal[1],
            ]
        }
        DomainKind::Whole => [4.0 * rng.gen::<f64>() - 2.0, 4.0 * rng.gen::<f64>() - 2.0],
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp()
}

/// Ratio lhs/rhs of one random sample of `lemma`; the sample is a pure
/// function of `(seed, index)`.
fn lemma_sample(
    env: &EnvelopeParams,
    table: &KernelTable,
    lemma: Lemma,
    seed: u64,
    index: u64,
    cfg: &QuadConfig,
) -> Result<(f64, f64, serde_json::Value)> {
    let mut rng = stream_rng(seed, index);
    let t_lo = 1e-3 * env.horizon;
    match lemma {
        Lemma::Gam => {
            let gs = gam_exponents(&env.params);
            let gamma = gs[(index as usize) % gs.len()];
            let t = log_uniform(&mut rng, t_lo, env.horizon);
            let r = log_uniform(&mut rng, 1e-3, 10.0);
            let l = gam_lhs(&env.params, gamma, t, r, cfg)?;
            let rr = gam_rhs(&env.params, gamma, t, r);
            Ok((l, rr, json!({"gamma": gamma, "t": t, "r": r})))
        }
        Lemma::ThreeP => {
            let t = log_uniform(&mut rng, t_lo, env.horizon);
            let s = t * rng.gen::<f64>().clamp(1e-9, 1.0 - 1e-9);
            let x = sample_point(&env.domain, &mut rng, 0.2);
            let y = sample_point(&env.domain, &mut rng, 0.2);
            let z = sample_point(&env.domain, &mut rng, 0.2);
            let (l, r) = three_p_sides(env, table, t, s, x, y, z)?;
            Ok((l, r, json!({"t": t, "s": s, "x": x, "y": y, "z": z})))
        }
        Lemma::Integral26 => {
            let t = log_uniform(&mut rng, t_lo, env.horizon);
            let y = sample_point(&env.domain, &mut rng, 0.2);
            let z = sample_point(&env.domain, &mut rng, 0.2);
            let (l, r) = integral_26_sides(env, table, t, y, z, cfg)?;
            Ok((l, r, json!({"t": t, "y": y, "z": z})))
        }
    }
}

/// Result of a randomized lemma sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub lemma: Lemma,
    pub n: usize,
    pub constant_n: f64,
    pub constant_2n: f64,
    pub report: CheckReport,
}

/// Fits one constant over `n` samples and again over the first `2n`
/// (a superset); passes when the constant is finite and grows by at most
/// `slack` under doubling.
pub fn lemma_sweep(env: &EnvelopeParams, lemma: Lemma, n: usize, seed: u64, slack: f64) -> Result<SweepOutcome> {
    use rayon::prelude::*;
    let table = env.table();
    let cfg = QuadConfig::default().with_rel_tol(1e-7);
    let samples: Vec<Result<(f64, f64, serde_json::Value)>> = (0..2 * n as u64)
        .into_par_iter()
        .map(|i| lemma_sample(env, &table, lemma, seed, i, &cfg))
        .collect();
    let mut lhs = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    let mut meta = Vec::with_capacity(2 * n);
    let mut excluded = 0;
    for s in samples {
        match s {
            Ok((l, r, m)) if l.is_finite() && r.is_finite() && r > 0.0 => {
                lhs.push(l);
                rhs.push(r);
                meta.push(m);
            }
            Ok(_) | Err(Error::UndefinedRatio(_)) => {
                excluded += 1;
                lhs.push(f64::NAN);
                rhs.push(f64::NAN);
                meta.push(serde_json::Value::Null);
            }
            Err(e) => return Err(e),
        }
    }
    let ratios: Vec<f64> = lhs.iter().zip(&rhs).map(|(l, r)| l / r).collect();
    let max_of = |v: &[f64]| v.iter().filter(|x| !x.is_nan()).fold(0.0f64, |a, b| a.max(*b));
    let c_n = max_of(&ratios[..n]);
    let c_2n = max_of(&ratios);
    let argmax = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_nan())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let growth = if c_n > 0.0 { c_2n / c_n } else { f64::INFINITY };
    let report = CheckReport::new(lemma.id(), Provenance::Quadrature)
        .with_params(json!({
            "alpha": env.params.alpha(),
            "domain": env.domain,
            "horizon": env.horizon,
            "seed": seed,
        }))
        .with_samples(2 * n, excluded)
        .with_sides(&lhs, &rhs)
        .with_argmax(meta[argmax].clone())
        .with_fitted(c_2n)
        .decide(growth, slack, Comparison::AtMost)
        .note(format!("fitted constant over {n} samples: {c_n:.6e}; over {}: {c_2n:.6e}", 2 * n));
    Ok(SweepOutcome {
        lemma,
        n,
        constant_n: c_n,
        constant_2n: c_2n,
        report,
    })
}
