//! Browser bindings: free kernel profiles, Dirichlet envelopes on the unit
//! disc and Monte Carlo survival curves.

use fracdrift::envelope::{q_envelope_fast, EnvelopeParams};
use fracdrift::geometry::Domain;
use fracdrift::kato::DriftField;
use fracdrift::montecarlo::{estimate_survival, PathConfig};
use fracdrift::stable_core::{eval_rho_gamma, KernelTable, StableParams};
use wasm_bindgen::prelude::*;

fn params(alpha: f64) -> fracdrift::Result<StableParams> {
    StableParams::new(2, alpha)
}

fn disc() -> Domain {
    Domain::ball([0.0, 0.0], 1.0).expect("unit disc")
}

/// p(t, r) at n radii in [0, r_max], then ρ₁(t, r) at the same radii.
pub fn free_profile_values(alpha: f64, t: f64, r_max: f64, n: usize) -> fracdrift::Result<Vec<f64>> {
    let p = params(alpha)?;
    let table = KernelTable::shared(&p);
    let radii: Vec<f64> = (0..n).map(|i| r_max * i as f64 / (n.max(2) - 1) as f64).collect();
    let mut out: Vec<f64> = radii.iter().map(|&r| table.density(t, r)).collect();
    for &r in &radii {
        out.push(eval_rho_gamma(&p, 1.0, t, &[r, 0.0])?);
    }
    Ok(out)
}

/// Along the diameter x = (s, 0), s ∈ [−1, 1]: the envelope q^D(t, x, y)
/// for the unit disc, then the free kernel p(t, x − y).
pub fn envelope_line_values(alpha: f64, t: f64, y: [f64; 2], n: usize) -> fracdrift::Result<Vec<f64>> {
    let p = params(alpha)?;
    let env = EnvelopeParams::new(p, disc(), t)?;
    let table = KernelTable::shared(&p);
    let xs: Vec<[f64; 2]> = (0..n).map(|i| [-1.0 + 2.0 * i as f64 / (n.max(2) - 1) as f64, 0.0]).collect();
    let mut out: Vec<f64> = xs.iter().map(|&x| q_envelope_fast(&env, &table, t, x, y)).collect();
    for x in &xs {
        out.push(table.density(t, (x[0] - y[0]).hypot(x[1] - y[1])));
    }
    Ok(out)
}

/// P(τ > t) at `steps` equally spaced times in (0, t_max] for the process
/// started at x0 in the unit disc with constant drift b; survival values
/// then 95% half-widths.
#[allow(clippy::too_many_arguments)]
pub fn survival_values(alpha: f64, b: [f64; 2], x0: [f64; 2], n_paths: usize, t_max: f64, steps: usize, seed: u64) -> fracdrift::Result<Vec<f64>> {
    let d = disc();
    let dt = t_max / (4 * steps) as f64;
    let cfg = PathConfig {
        params: params(alpha)?,
        dt,
        horizon: t_max,
        n_paths,
        seed,
        domain: Some(d.clone()),
        drift: DriftField::constant(b, d),
        cap_radius: None,
    };
    let times: Vec<f64> = (1..=steps).map(|k| 4.0 * k as f64 * dt).collect();
    let curve = estimate_survival(&cfg, x0, &times)?;
    Ok(curve.survival.into_iter().chain(curve.ci).collect())
}

fn js(e: fracdrift::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn free_profile(alpha: f64, t: f64, r_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    free_profile_values(alpha, t, r_max, n).map_err(js)
}

#[wasm_bindgen]
pub fn envelope_line(alpha: f64, t: f64, yx: f64, yy: f64, n: usize) -> Result<Vec<f64>, JsError> {
    envelope_line_values(alpha, t, [yx, yy], n).map_err(js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn survival(alpha: f64, bx: f64, by: f64, x0x: f64, x0y: f64, n_paths: usize, t_max: f64, steps: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    survival_values(alpha, [bx, by], [x0x, x0y], n_paths, t_max, steps, seed as u64).map_err(js)
}
