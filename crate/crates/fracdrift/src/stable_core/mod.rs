//! Free isotropic α-stable heat kernel, its gradient, the comparison
//! function ϱ^γ and the fractional Laplacian of test functions.
//!
//! The kernel is computed by subordination of the Gaussian kernel to the
//! one-sided (α/2)-stable subordinator, whose density comes from the
//! Zolotarev single-integral representation. Symbol convention:
//! `E exp(iξ·X_t) = exp(-t|ξ|^α)`.

mod table;
mod testfn;

pub use table::KernelTable;
pub use testfn::TestFunction;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_breaks, QuadConfig};

/// Dimension and stability index of the free process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct StableParams {
    d: usize,
    alpha: f64,
    paper_regime: bool,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    d: usize,
    alpha: f64,
}

impl TryFrom<RawParams> for StableParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        StableParams::new(r.d, r.alpha)
    }
}

impl From<StableParams> for RawParams {
    fn from(p: StableParams) -> Self {
        RawParams {
            d: p.d,
            alpha: p.alpha,
        }
    }
}

impl StableParams {
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        if d < 1 {
            return Err(Error::Domain(format!("dimension d = {d} must be at least 1")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 2)")));
        }
        Ok(StableParams {
            d,
            alpha,
            paper_regime: d >= 2 && alpha > 1.0,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// True when d ≥ 2 and 1 < α < 2, the regime where drift perturbation
    /// is well posed.
    pub fn paper_regime(&self) -> bool {
        self.paper_regime
    }

    /// Index of the subordinator, α/2.
    pub fn beta(&self) -> f64 {
        0.5 * self.alpha
    }

    /// Natural length at time t, t^{1/α}.
    pub fn length_scale(&self, t: f64) -> f64 {
        t.powf(1.0 / self.alpha)
    }
}

/// A time–space point with t > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(params: &StableParams, t: f64, x: Vec<f64>) -> Result<Self> {
        check_time(t)?;
        if x.len() != params.d {
            return Err(Error::Domain(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                params.d
            )));
        }
        Ok(SpaceTimePoint { t, x })
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time t = {t} must be positive")))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Constant c_{d,α} of the Lévy kernel c|z|^{-d-α} for symbol -|ξ|^α.
pub fn levy_constant(d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    alpha * 2f64.powf(alpha - 1.0) * libm::tgamma(0.5 * (df + alpha))
        / (PI.powf(0.5 * df) * libm::tgamma(1.0 - 0.5 * alpha))
}

/// Zolotarev's function A(φ) for index β ∈ (0,1).
pub(crate) fn zolotarev_a(beta: f64, phi: f64) -> f64 {
    let b1 = 1.0 - beta;
    let sbp = (beta * phi).sin();
    let sp = phi.sin();
    let s1 = (b1 * phi).sin();
    (sbp / sp).powf(1.0 / b1) * s1 / sbp
}

/// Density at s of the subordinator at unit time, Laplace transform
/// exp(-λ^β).
pub fn subordinator_density(beta: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let z = s.powf(-beta);
    if z <= 0.3 {
        return subordinator_series(beta, s);
    }
    let b1 = 1.0 - beta;
    let kappa = beta / b1;
    let eps = s.powf(-kappa);
    let a0 = beta.powf(kappa) * b1;
    if eps * a0 > 745.0 {
        return 0.0;
    }
    let integrand = |phi: f64| {
        let a = zolotarev_a(beta, phi);
        let e = eps * a;
        if e > 745.0 || !a.is_finite() {
            0.0
        } else {
            (a.ln() - e).exp()
        }
    };
    // The integrand peaks where εA(φ) = 1; A increases on (0, π).
    let mut pts = vec![0.0, PI];
    if 1.0 / eps > a0 {
        let (mut lo, mut hi) = (0.0, PI);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eps * zolotarev_a(beta, mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = 0.5 * (lo + hi);
        if p > 1e-9 && p < PI - 1e-12 {
            pts = vec![0.0, p, PI];
        }
    }
    let cfg = QuadConfig {
        rel_tol: 1e-12,
        abs_tol: 0.0,
        max_subdivisions: 400,
    };
    let r = integrate_breaks(integrand, &pts, &cfg);
    kappa / PI * s.powf(-1.0 / b1) * r.value
}

fn subordinator_series(beta: f64, s: f64) -> f64 {
    let z = s.powf(-beta);
    let mut sum = 0.0;
    let mut zk = 1.0;
    for k in 1..80 {
        let kf = k as f64;
        zk *= z;
        let coef = (libm::lgamma(kf * beta + 1.0) - libm::lgamma(kf + 1.0)).exp();
        let term = coef * (kf * PI * beta).sin() * zk;
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if coef * zk < 1e-18 * sum.abs() {
            break;
        }
    }
    sum / (PI * s)
}

/// Lower end of the subordinator support that matters numerically, in log s.
pub(crate) fn log_s_lower(beta: f64) -> f64 {
    let b1 = 1.0 - beta;
    let kappa = beta / b1;
    let a0 = beta.powf(kappa) * b1;
    (a0 / 800.0).ln() / kappa
}

/// p(1, r) or 2s-weighted variants via the subordination integral.
/// `power` = 0 gives the density, 1 gives G with ∇p(1,x) = -x G(|x|).
fn subordinated_unit(params: &StableParams, r: f64, power: i32, cfg: &QuadConfig) -> Result<f64> {
    let beta = params.beta();
    let half_d = 0.5 * params.d as f64;
    let r2 = r * r;
    let u_lo = log_s_lower(beta);
    let u_hi = r2.max(1.0).ln() + 50.0 / (half_d + beta);
    let integrand = |u: f64| {
        let s = u.exp();
        let gauss = if r2 > 0.0 {
            let e = r2 / (4.0 * s);
            if e > 745.0 {
                return 0.0;
            }
            (-e).exp()
        } else {
            1.0
        };
        let g = subordinator_density(beta, s);
        s * (4.0 * PI * s).powf(-half_d) * (2.0 * s).powi(-power) * gauss * g
    };
    let mut pts = vec![u_lo];
    let peak = (r2 / (2.0 * params.d as f64 + 4.0 * power as f64)).max(1e-300).ln();
    if peak > u_lo + 0.5 && peak < u_hi - 0.5 {
        pts.push(peak);
    }
    if 0.0 > u_lo && 0.0 < u_hi && (peak - 0.0).abs() > 0.5 {
        pts.push(0.0);
        pts.sort_by(f64::total_cmp);
    }
    pts.push(u_hi);
    let inner = QuadConfig {
        rel_tol: cfg.rel_tol.min(1e-10),
        ..*cfg
    };
    let res = integrate_breaks(integrand, &pts, &inner);
    if res.abs_err > cfg.rel_tol * res.value.abs() + cfg.abs_tol {
        return Err(Error::Accuracy {
            achieved: res.abs_err / res.value.abs().max(f64::MIN_POSITIVE),
            requested: cfg.rel_tol,
            context: format!("free kernel at r = {r}"),
        });
    }
    Ok(res.value)
}

/// p(t,x,y) for |x − y| = r by direct quadrature (default accuracy).
pub fn eval_free_kernel(params: &StableParams, t: f64, r: f64) -> Result<f64> {
    eval_free_kernel_with(params, t, r, &QuadConfig::default())
}

pub fn eval_free_kernel_with(params: &StableParams, t: f64, r: f64, cfg: &QuadConfig) -> Result<f64> {
    check_time(t)?;
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("radius r = {r} must be nonnegative")));
    }
    let ls = params.length_scale(t);
    let v = subordinated_unit(params, r / ls, 0, cfg)?;
    Ok(v * ls.powi(-(params.d as i32)))
}

/// ∇_x p(t, x) by differentiating under the subordination integral.
pub fn eval_free_kernel_gradient(params: &StableParams, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    eval_free_kernel_gradient_with(params, t, x, &QuadConfig::default())
}

pub fn eval_free_kernel_gradient_with(
    params: &StableParams,
    t: f64,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<Vec<f64>> {
    check_time(t)?;
    if x.len() != params.d {
        return Err(Error::Domain(format!(
            "point has {} coordinates, expected {}",
            x.len(),
            params.d
        )));
    }
    let ls = params.length_scale(t);
    let r = norm(x);
    let g = subordinated_unit(params, r / ls, 1, cfg)? * ls.powi(-(params.d as i32 + 2));
    Ok(x.iter().map(|xi| -xi * g).collect())
}

/// ϱ^γ(t,x) = t^γ / (|x| + t^{1/α})^{d+α}.
pub fn eval_rho_gamma(params: &StableParams, gamma: f64, t: f64, x: &[f64]) -> Result<f64> {
    check_time(t)?;
    Ok(rho_gamma_radial(params, gamma, t, norm(x)))
}

pub(crate) fn rho_gamma_radial(params: &StableParams, gamma: f64, t: f64, r: f64) -> f64 {
    t.powf(gamma) / (r + params.length_scale(t)).powf(params.d as f64 + params.alpha)
}

/// Δ^{α/2} f(x) as the compensated singular integral split at |z| = 1.
pub fn frac_laplacian_apply(
    params: &StableParams,
    f: &TestFunction,
    x: &[f64],
    cfg: &QuadConfig,
) -> Result<f64> {
    let d = params.d;
    let alpha = params.alpha;
    if x.len() != d || f.dim() != d {
        return Err(Error::Domain("dimension mismatch in frac_laplacian_apply".into()));
    }
    let c = levy_constant(d, alpha);
    let fx = f.value(x);
    let dist_c = norm(&sub(x, f.center()));
    let reach = dist_c + f.support_radius();
    let near = (dist_c - f.support_radius()).max(1.0);
    let taylor_r: f64 = 1e-3;
    let hess = f.hessian(x);
    let lap: f64 = (0..d).map(|i| hess[i * d + i]).sum();
    let inner_cfg = QuadConfig {
        rel_tol: cfg.rel_tol.min(1e-10),
        abs_tol: cfg.abs_tol.max(1e-14),
        ..*cfg
    };
    let mut total_err = 0.0;
    let value = match d {
        1 => {
            let taylor = lap * taylor_r.powf(2.0 - alpha) / (2.0 - alpha);
            let inner = integrate(
                |rho: f64| (f.value(&[x[0] + rho]) + f.value(&[x[0] - rho]) - 2.0 * fx) * rho.powf(-1.0 - alpha),
                taylor_r,
                1.0,
                &inner_cfg,
            );
            total_err += inner.abs_err;
            let mut outer_val = 0.0;
            if reach > 1.0 {
                let outer = integrate(
                    |rho: f64| (f.value(&[x[0] + rho]) + f.value(&[x[0] - rho])) * rho.powf(-1.0 - alpha),
                    near,
                    reach,
                    &inner_cfg,
                );
                total_err += outer.abs_err;
                outer_val = outer.value;
            }
            taylor + inner.value + outer_val - fx * 2.0 / alpha
        }
        2 => {
            // Angular average of e^T H e over [0, π) is |e|-independent: π/2·tr H.
            let taylor = lap * 0.5 * PI * taylor_r.powf(2.0 - alpha) / (2.0 - alpha);
            let ang_cfg = QuadConfig {
                rel_tol: inner_cfg.rel_tol,
                abs_tol: 1e-15,
                max_subdivisions: 200,
            };
            let mut ang_err = 0.0f64;
            let mut inner_ring = |rho: f64| {
                let r = integrate(
                    |th: f64| {
                        let (s, c) = th.sin_cos();
                        let p = [x[0] + rho * c, x[1] + rho * s];
                        let m = [x[0] - rho * c, x[1] - rho * s];
                        f.value(&p) + f.value(&m) - 2.0 * fx
                    },
                    0.0,
                    PI,
                    &ang_cfg,
                );
                ang_err = ang_err.max(r.abs_err);
                r.value * rho.powf(-1.0 - alpha)
            };
            let inner = integrate(&mut inner_ring, taylor_r, 1.0, &inner_cfg);
            total_err += inner.abs_err;
            let mut outer_val = 0.0;
            if reach > 1.0 {
                let outer = integrate(
                    |rho: f64| {
                        let r = integrate(
                            |th: f64| {
                                let (s, c) = th.sin_cos();
                                f.value(&[x[0] + rho * c, x[1] + rho * s])
                            },
                            0.0,
                            2.0 * PI,
                            &ang_cfg,
                        );
                        r.value * rho.powf(-1.0 - alpha)
                    },
                    near,
                    reach,
                    &inner_cfg,
                );
                total_err += outer.abs_err;
                outer_val = outer.value;
            }
            taylor + inner.value + outer_val - fx * 2.0 * PI / alpha
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "fractional Laplacian quadrature implemented for d ≤ 2, got d = {d}"
            )))
        }
    };
    let scale = value.abs().max(fx.abs()).max(1e-300);
    if total_err > (cfg.rel_tol * scale).max(cfg.abs_tol).max(1e-9 * scale) {
        return Err(Error::Accuracy {
            achieved: total_err / scale,
            requested: cfg.rel_tol,
            context: "fractional Laplacian".into(),
        });
    }
    Ok(c * value)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
