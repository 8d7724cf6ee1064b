//! Monte Carlo simulation of the drifted α-stable process, killed on
//! leaving D.
//!
//! Paths use an Euler scheme whose noise increments are exact α-stable
//! draws obtained by subordinating a Gaussian. Each path owns a random
//! stream derived from `(seed, path index)`, and histograms hold integer
//! counts, so results are bit-identical for any thread count.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, GridBox, Vec2};
use crate::kato::DriftField;
use crate::rng::stream_rng;
use crate::stable_core::{zolotarev_a, StableParams};

/// Paths are processed in fixed chunks so that partial sums never depend
/// on scheduling.
const CHUNK: usize = 1024;

/// One-sided β-stable variate with E exp(−λS) = exp(−tλ^β) (Kanter's
/// representation of the Chambers–Mallows–Stuck transform).
pub fn sample_subordinator(alpha_half: f64, t: f64, rng: &mut impl Rng) -> f64 {
    let beta = alpha_half;
    let u = PI * rng.gen::<f64>();
    let e = -(1.0 - rng.gen::<f64>()).ln();
    let a = zolotarev_a(beta, u.max(1e-300));
    let s = (a / e).powf((1.0 - beta) / beta);
    t.powf(1.0 / beta) * s
}

/// √(2S)·Z with S the α/2-subordinator at time dt; E exp(iξ·ΔX) = exp(−dt|ξ|^α).
pub fn sample_stable_increment(params: &StableParams, dt: f64, rng: &mut impl Rng) -> Vec<f64> {
    let s = sample_subordinator(params.beta(), dt, rng);
    let sd = (2.0 * s).sqrt();
    (0..params.d()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn increment2(beta: f64, dt: f64, rng: &mut impl Rng) -> Vec2 {
    let s = sample_subordinator(beta, dt, rng);
    let sd = (2.0 * s).sqrt();
    [sd * rng.sample::<f64, _>(StandardNormal), sd * rng.sample::<f64, _>(StandardNormal)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub params: StableParams,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Absent: whole space, no killing.
    pub domain: Option<Domain>,
    pub drift: DriftField,
    /// Radius used to cap a singular drift; defaults to 0.01.
    #[serde(default)]
    pub cap_radius: Option<f64>,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.params.d() != 2 {
            return Err(Error::Unsupported("simulation is implemented for d = 2".into()));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::config("mc.dt", "need 0 < dt <= horizon"));
        }
        if self.n_paths == 0 {
            return Err(Error::config("mc.n_paths", "need at least one path"));
        }
        Ok(())
    }

    /// The drift actually simulated: singular poles are capped.
    pub fn effective_drift(&self) -> DriftField {
        if self.drift.pole().is_some() && self.drift.cap_radius.is_none() {
            self.drift.capped(self.cap_radius.unwrap_or(0.01))
        } else {
            self.drift.clone()
        }
    }

    fn steps_to(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    fn inside(&self, x: Vec2) -> bool {
        self.domain.as_ref().map_or(true, |d| d.contains(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub killed: bool,
    /// Step time of death, or the horizon for survivors.
    pub time: f64,
    pub position: Vec2,
}

struct Stepper<'a> {
    cfg: &'a PathConfig,
    drift: DriftField,
    beta: f64,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a PathConfig) -> Self {
        Stepper {
            cfg,
            drift: cfg.effective_drift(),
            beta: cfg.params.beta(),
        }
    }

    /// Runs path `index` from x0, calling `visit(step, x)` after every step
    /// survived; returns the number of steps survived.
    fn run(&self, x0: Vec2, index: u64, n_steps: usize, mut visit: impl FnMut(usize, Vec2)) -> (usize, Vec2) {
        if !self.cfg.inside(x0) {
            return (0, x0);
        }
        let mut rng = stream_rng(self.cfg.seed, index);
        let mut x = x0;
        let dt = self.cfg.dt;
        for k in 1..=n_steps {
            let b = self.drift.eval(x);
            let dx = increment2(self.beta, dt, &mut rng);
            x = [x[0] + b[0] * dt + dx[0], x[1] + b[1] * dt + dx[1]];
            if !self.cfg.inside(x) {
                return (k - 1, x);
            }
            visit(k, x);
        }
        (n_steps, x)
    }
}

/// Simulates path `index` up to the horizon.
pub fn simulate_killed_path(cfg: &PathConfig, x0: Vec2, index: u64) -> Result<PathOutcome> {
    cfg.validate()?;
    let stepper = Stepper::new(cfg);
    let n = cfg.steps_to(cfg.horizon);
    if !cfg.inside(x0) {
        return Ok(PathOutcome { killed: true, time: 0.0, position: x0 });
    }
    let (survived, x) = stepper.run(x0, index, n, |_, _| {});
    let killed = survived < n;
    let time = if killed { (survived + 1) as f64 * cfg.dt } else { cfg.horizon };
    Ok(PathOutcome { killed, time, position: x })
}

/// Histogram density estimate on lattice cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bbox: GridBox,
    pub t: f64,
    pub n_paths: usize,
    pub counts: Vec<u64>,
    /// Area of each cell inside D.
    pub areas: Vec<f64>,
    pub values: Vec<f64>,
    pub ci: Vec<f64>,
    /// Paths alive at time t (inside or outside the box).
    pub n_effective: u64,
    pub min_count: u64,
}

impl DensityEstimate {
    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_center(&self, k: usize) -> Vec2 {
        let ny = self.bbox.n[1];
        self.bbox.cell_center(k / ny, k % ny)
    }

    pub fn high_confidence(&self, k: usize) -> bool {
        self.counts[k] >= self.min_count
    }

    /// ∫ estimate over the box.
    pub fn mass(&self) -> f64 {
        self.values.iter().zip(&self.areas).map(|(v, a)| v * a).sum()
    }

    /// 95% half-width of the box mass, a binomial proportion.
    pub fn mass_ci(&self) -> f64 {
        let p = self.counts.iter().sum::<u64>() as f64 / self.n_paths as f64;
        1.96 * (p * (1.0 - p) / self.n_paths as f64).sqrt()
    }

    /// Survival fraction at time t.
    pub fn survival(&self) -> f64 {
        self.n_effective as f64 / self.n_paths as f64
    }

    /// Rows of (x, y, value, ci, count).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,value,ci_halfwidth,n_hits\n");
        for k in 0..self.n_cells() {
            let c = self.cell_center(k);
            s.push_str(&format!("{},{},{:e},{:e},{}\n", c[0], c[1], self.values[k], self.ci[k], self.counts[k]));
        }
        s
    }
}

fn cell_areas(domain: Option<&Domain>, bbox: &GridBox) -> Vec<f64> {
    let mut out = Vec::with_capacity(bbox.n[0] * bbox.n[1]);
    for i in 0..bbox.n[0] {
        for j in 0..bbox.n[1] {
            let (lo, hi) = bbox.cell_bounds(i, j);
            out.push(match domain {
                None => (hi[0] - lo[0]) * (hi[1] - lo[1]),
                Some(d) => d.clip_rect(lo, hi).0,
            });
        }
    }
    out
}

/// Integer histogram of surviving positions at several step counts.
struct Histograms {
    counts: Vec<Vec<u64>>,
    alive: Vec<u64>,
}

/// Simulates paths `[first, first+n)` from starting points produced by
/// `start(index)`, binning survivors at each step count in `marks`.
fn histogram_paths(
    cfg: &PathConfig,
    start: &(dyn Fn(u64) -> Vec2 + Sync),
    first: u64,
    n: usize,
    marks: &[usize],
    bbox: &GridBox,
) -> Histograms {
    let stepper = Stepper::new(cfg);
    let ncell = bbox.n[0] * bbox.n[1];
    let last = *marks.iter().max().unwrap_or(&0);
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<Histograms> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut h = Histograms {
                counts: vec![vec![0u64; ncell]; marks.len()],
                alive: vec![0; marks.len()],
            };
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            for i in lo..hi {
                let idx = first + i as u64;
                let x0 = start(idx);
                let mut record = |k: usize, x: Vec2| {
                    for (m, &mk) in marks.iter().enumerate() {
                        if mk == k {
                            h.alive[m] += 1;
                            if let Some((a, b)) = bbox.locate(x) {
                                h.counts[m][a * bbox.n[1] + b] += 1;
                            }
                        }
                    }
                };
                if marks.contains(&0) && cfg.inside(x0) {
                    record(0, x0);
                }
                stepper.run(x0, idx, last, &mut record);
            }
            h
        })
        .collect();
    let mut out = Histograms {
        counts: vec![vec![0u64; ncell]; marks.len()],
        alive: vec![0; marks.len()],
    };
    for p in parts {
        for m in 0..marks.len() {
            out.alive[m] += p.alive[m];
            for (o, v) in out.counts[m].iter_mut().zip(&p.counts[m]) {
                *o += v;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn estimate_from_counts(
    bbox: &GridBox,
    areas: &[f64],
    t: f64,
    counts: Vec<u64>,
    alive: u64,
    n_paths: usize,
    min_count: u64,
) -> DensityEstimate {
    let n = n_paths as f64;
    let mut values = Vec::with_capacity(counts.len());
    let mut ci = Vec::with_capacity(counts.len());
    for (c, a) in counts.iter().zip(areas) {
        if *a <= 0.0 {
            values.push(0.0);
            ci.push(0.0);
            continue;
        }
        let p = *c as f64 / n;
        values.push(p / a);
        // Wilson-style floor keeps empty cells from claiming zero error.
        let var = (p * (1.0 - p)).max(1.0 / n) / n;
        ci.push(1.96 * var.sqrt() / a);
    }
    DensityEstimate {
        bbox: *bbox,
        t,
        n_paths,
        counts,
        areas: areas.to_vec(),
        values,
        ci,
        n_effective: alive,
        min_count,
    }
}

/// Histogram estimate of p^{b}(t,x0,·) or p^{b,D}(t,x0,·) on `bbox` cells.
pub fn estimate_density(cfg: &PathConfig, x0: Vec2, t: f64, bbox: &GridBox, min_count: u64) -> Result<DensityEstimate> {
    Ok(estimate_density_multi(cfg, x0, &[t], bbox, min_count)?.remove(0))
}

/// Estimates at several times from one set of paths.
pub fn estimate_density_multi(
    cfg: &PathConfig,
    x0: Vec2,
    times: &[f64],
    bbox: &GridBox,
    min_count: u64,
) -> Result<Vec<DensityEstimate>> {
    cfg.validate()?;
    let marks = marks_for(cfg, times)?;
    let areas = cell_areas(cfg.domain.as_ref(), bbox);
    let start = move |_: u64| x0;
    let h = histogram_paths(cfg, &start, 0, cfg.n_paths, &marks, bbox);
    Ok(h.counts
        .into_iter()
        .zip(h.alive)
        .zip(times)
        .map(|((c, a), &t)| estimate_from_counts(bbox, &areas, t, c, a, cfg.n_paths, min_count))
        .collect())
}

/// Like `estimate_density_multi` with starting points uniform in the cell
/// [lo, hi] ∩ D (rejection from the cell).
pub fn estimate_density_from_cell(
    cfg: &PathConfig,
    lo: Vec2,
    hi: Vec2,
    times: &[f64],
    bbox: &GridBox,
    min_count: u64,
) -> Result<Vec<DensityEstimate>> {
    cfg.validate()?;
    let marks = marks_for(cfg, times)?;
    let areas = cell_areas(cfg.domain.as_ref(), bbox);
    let seed = cfg.seed;
    let dom = cfg.domain.clone();
    let start = move |i: u64| {
        let mut rng = stream_rng(seed ^ 0x5eed_ce11, i);
        for _ in 0..1000 {
            let x = [lo[0] + (hi[0] - lo[0]) * rng.gen::<f64>(), lo[1] + (hi[1] - lo[1]) * rng.gen::<f64>()];
            if dom.as_ref().map_or(true, |d| d.contains(x)) {
                return x;
            }
        }
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
    };
    let h = histogram_paths(cfg, &start, 0, cfg.n_paths, &marks, bbox);
    Ok(h.counts
        .into_iter()
        .zip(h.alive)
        .zip(times)
        .map(|((c, a), &t)| estimate_from_counts(bbox, &areas, t, c, a, cfg.n_paths, min_count))
        .collect())
}

fn marks_for(cfg: &PathConfig, times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t <= cfg.horizon * (1.0 + 1e-12)) {
                return Err(Error::Domain(format!("time {t} outside [0, {}]", cfg.horizon)));
            }
            let k = cfg.steps_to(t);
            if ((k as f64) * cfg.dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Domain(format!("time {t} is not a multiple of dt = {}", cfg.dt)));
            }
            Ok(k)
        })
        .collect()
}

/// Survival probabilities with 95% half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub ci: Vec<f64>,
    pub n_paths: usize,
}

impl SurvivalCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,survival,ci_halfwidth\n");
        for i in 0..self.times.len() {
            s.push_str(&format!("{},{},{}\n", self.times[i], self.survival[i], self.ci[i]));
        }
        s
    }
}

/// P(τ_D > t) for each t in `times`.
pub fn estimate_survival(cfg: &PathConfig, x0: Vec2, times: &[f64]) -> Result<SurvivalCurve> {
    cfg.validate()?;
    let stepper = Stepper::new(cfg);
    let marks: Vec<usize> = times.iter().map(|&t| cfg.steps_to(t.max(0.0))).collect();
    let last = *marks.iter().max().unwrap_or(&0);
    let n = cfg.n_paths;
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<u64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut alive = vec![0u64; marks.len()];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (survived, _) = if cfg.inside(x0) {
                    stepper.run(x0, i as u64, last, |_, _| {})
                } else {
                    (0, x0)
                };
                let start_ok = cfg.inside(x0);
                for (m, &mk) in marks.iter().enumerate() {
                    if (mk == 0 && start_ok) || (mk > 0 && survived >= mk) {
                        alive[m] += 1;
                    }
                }
            }
            alive
        })
        .collect();
    let mut alive = vec![0u64; marks.len()];
    for p in parts {
        for (a, v) in alive.iter_mut().zip(p) {
            *a += v;
        }
    }
    let nf = n as f64;
    let survival: Vec<f64> = alive.iter().map(|a| *a as f64 / nf).collect();
    let ci = survival.iter().map(|p| 1.96 * (p * (1.0 - p) / nf).sqrt()).collect();
    Ok(SurvivalCurve {
        times: times.to_vec(),
        survival,
        ci,
        n_paths: n,
    })
}

/// Mean and 95% half-width of E[f(X_t) ; τ > t] for each (start, time),
/// evaluated for several test functions on shared paths. Returns
/// `out[start][time][function] = (mean, ci)`.
pub fn semigroup_estimates(
    cfg: &PathConfig,
    starts: &[Vec2],
    times: &[f64],
    fs: &[&(dyn Fn(Vec2) -> f64 + Sync)],
    first_path: u64,
) -> Result<Vec<Vec<Vec<(f64, f64)>>>> {
    cfg.validate()?;
    let marks = marks_for(cfg, times)?;
    let last = *marks.iter().max().unwrap_or(&0);
    let stepper = Stepper::new(cfg);
    let n = cfg.n_paths;
    let nf = fs.len();
    let mut out = Vec::with_capacity(starts.len());
    for (si, &x0) in starts.iter().enumerate() {
        let n_chunks = n.div_ceil(CHUNK);
        // Per chunk: sums and sums of squares for each (time, f).
        let parts: Vec<Vec<(f64, f64)>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![(0.0, 0.0); marks.len() * nf];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let idx = first_path + ((si as u64) << 40) + i as u64;
                    let mut record = |k: usize, x: Vec2| {
                        for (m, &mk) in marks.iter().enumerate() {
                            if mk == k {
                                for (j, f) in fs.iter().enumerate() {
                                    let v = f(x);
                                    let a = &mut acc[m * nf + j];
                                    a.0 += v;
                                    a.1 += v * v;
                                }
                            }
                        }
                    };
                    if marks.contains(&0) && cfg.inside(x0) {
                        record(0, x0);
                    }
                    stepper.run(x0, idx, last, &mut record);
                }
                acc
            })
            .collect();
        let mut acc = vec![(0.0, 0.0); marks.len() * nf];
        for p in parts {
            for (a, v) in acc.iter_mut().zip(p) {
                a.0 += v.0;
                a.1 += v.1;
            }
        }
        let nn = n as f64;
        let per_time: Vec<Vec<(f64, f64)>> = (0..marks.len())
            .map(|m| {
                (0..nf)
                    .map(|j| {
                        let (s, s2) = acc[m * nf + j];
                        let mean = s / nn;
                        let var = (s2 / nn - mean * mean).max(0.0);
                        (mean, 1.96 * (var / nn).sqrt())
                    })
                    .collect()
            })
            .collect();
        out.push(per_time);
    }
    Ok(out)
}
