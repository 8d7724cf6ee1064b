//! Killed kernels tabulated from Monte Carlo histograms, smoothed through
//! their ratio to the envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cell_average;
use crate::montecarlo::{estimate_density_multi, DensityEstimate, PathConfig};

use super::base::BaseKernel;
use super::field::{Anchor, GridSpec, KernelField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McBaseQuality {
    /// Median relative 95% half-width over the cells carrying most of the
    /// envelope mass, per time.
    pub median_rel_ci: Vec<f64>,
    /// Median relative half-width after smoothing, per time.
    pub noise_level: Vec<f64>,
    pub n_paths: usize,
}

/// Cell averages of the envelope q^D(t, x0, ·) on the grid.
fn envelope_cells(env: &BaseKernel, grid: &GridSpec, t: f64, x0: [f64; 2]) -> Vec<f64> {
    let h = grid.spacing();
    (0..grid.len())
        .map(|k| {
            let c = grid.node(k);
            let lo = [c[0] - 0.5 * h, c[1] - 0.5 * h];
            let hi = [c[0] + 0.5 * h, c[1] + 0.5 * h];
            cell_average(env.domain(), lo, hi, 4, |y| env.value(t, x0, y))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Smooth a histogram through r = p̂/q^D: a 3×3 average of r weighted by
/// expected counts, multiplied back by q^D.
fn smooth(est: &DensityEstimate, q: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = m * m;
    let mut out = vec![0.0; n];
    let mut ci = vec![0.0; n];
    for k in 0..n {
        if q[k] <= 0.0 || est.areas[k] <= 0.0 {
            continue;
        }
        let (i, j) = ((k / m) as isize, (k % m) as isize);
        let (mut num, mut den, mut var) = (0.0, 0.0, 0.0);
        for di in -1..=1 {
            for dj in -1..=1 {
                let (a, b) = (i + di, j + dj);
                if a < 0 || b < 0 || a >= m as isize || b >= m as isize {
                    continue;
                }
                let l = a as usize * m + b as usize;
                if q[l] <= 0.0 || est.areas[l] <= 0.0 {
                    continue;
                }
                let w = q[l] * est.areas[l];
                num += w * est.values[l] / q[l];
                var += (w * est.ci[l] / q[l]).powi(2);
                den += w;
            }
        }
        if den > 0.0 {
            out[k] = q[k] * num / den;
            ci[k] = q[k] * var.sqrt() / den;
        }
    }
    (out, ci)
}

/// p^D(t, x0, ·) from `cfg.n_paths` killed paths started at a grid node, on
/// the grid's cells at `times` (multiples of cfg.dt). Gradients are finite
/// differences of the smoothed field over the free slot.
pub fn tabulate_mc_base_kernel(
    cfg: &PathConfig,
    grid: &GridSpec,
    source: usize,
    times: &[f64],
    max_rel_ci: f64,
) -> Result<(KernelField, McBaseQuality)> {
    let domain = cfg
        .domain
        .clone()
        .ok_or_else(|| Error::config("mc.domain", "a Monte Carlo base kernel needs a domain"))?;
    let env = BaseKernel::envelope(&cfg.params, &domain)?;
    let x0 = grid.node(source);
    let ests = estimate_density_multi(cfg, x0, times, &grid.bbox, 20)?;
    let lat = grid.lattice();
    let m = grid.m();
    let mut values = Vec::new();
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut raw_ci = Vec::new();
    let mut noise = Vec::new();
    for (est, &t) in ests.iter().zip(times) {
        let q = envelope_cells(&env, grid, t, x0);
        let qmax = q.iter().copied().fold(0.0, f64::max);
        let bulk: Vec<usize> = (0..q.len()).filter(|&k| q[k] >= 0.05 * qmax && est.areas[k] > 0.0).collect();
        let rel = |v: &[f64], c: &[f64]| -> f64 {
            median(bulk.iter().map(|&k| if v[k] > 0.0 { c[k] / v[k] } else { f64::INFINITY }).collect())
        };
        let r = rel(&est.values, &est.ci);
        if !(r <= max_rel_ci) {
            return Err(Error::Quality(format!(
                "Monte Carlo base at t = {t}: median relative CI {r:.3} exceeds {max_rel_ci}"
            )));
        }
        let (s, sci) = smooth(est, &q, m);
        noise.push(rel(&s, &sci));
        raw_ci.push(r);
        let (a, b) = lat.gradient(&s);
        values.push(s);
        gx.push(a);
        gy.push(b);
    }
    let field = KernelField {
        label: "p0[monte_carlo]".into(),
        anchor: Anchor::Source { node: source },
        bbox: grid.bbox,
        times: times.to_vec(),
        values,
        grad_x: Some(gx),
        grad_y: Some(gy),
        signed: false,
    };
    Ok((
        field,
        McBaseQuality {
            median_rel_ci: raw_ci,
            noise_level: noise,
            n_paths: cfg.n_paths,
        },
    ))
}
