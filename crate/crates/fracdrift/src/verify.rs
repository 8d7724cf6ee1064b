//! Checks of the kernel properties against series and Monte Carlo output.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde_json::json;

use crate::duhamel::{semigroup_series, Anchor, BaseKernel, GridSpec, KernelField};
use crate::error::{Error, Result};
use crate::geometry::{norm2, sub, Domain, Vec2};
use crate::kato::DriftField;
use crate::montecarlo::{estimate_density, semigroup_estimates, PathConfig};
use crate::quad::QuadConfig;
use crate::report::{CheckReport, Comparison, Provenance};
use crate::rng::stream_rng;
use crate::stable_core::{frac_laplacian_apply, TestFunction};

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// ∫ S(t−s, x, z) F(s, z, y) dz against F(t, x, y), with one source field
/// per x and a target field at y on the same grid.
pub fn check_chapman_kolmogorov(sources: &[KernelField], target: &KernelField, s: f64, t: f64, tol: f64) -> Result<CheckReport> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    let Anchor::Target { node: y } = target.anchor else {
        return Err(Error::Contract("the composition needs a target-anchored field".into()));
    };
    if sources.is_empty() {
        return Err(Error::Contract("no source fields to compose".into()));
    }
    let h = target.bbox.spacing();
    let area = h[0] * h[1];
    let f_s = target.slice(s)?;
    let f_t = target.slice(t)?;
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut nodes = Vec::new();
    for src in sources {
        let Anchor::Source { node: x } = src.anchor else {
            return Err(Error::Contract(format!("field `{}` is not source-anchored", src.label)));
        };
        if src.bbox != target.bbox {
            return Err(Error::Contract("source and target fields are on different lattices".into()));
        }
        let g = src.slice(t - s)?;
        let comp: f64 = g.iter().zip(&f_s).map(|(a, b)| a * b).sum::<f64>() * area;
        lhs.push(comp);
        rhs.push(f_t[x]);
        nodes.push(x);
    }
    let devs: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| rel_dev(*a, *b)).collect();
    let (k, worst) = devs
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    Ok(CheckReport::new("chapman_kolmogorov", Provenance::Series)
        .with_params(json!({ "s": s, "t": t, "target": y }))
        .with_samples(lhs.len(), 0)
        .with_sides(&lhs, &rhs)
        .with_argmax(json!({ "source": nodes[k] }))
        .decide(worst, tol, Comparison::AtMost))
}

/// E_x f(X_t) against Σ_cells p̂(t−s, x, c)|c| E_c f(X_s), both from killed
/// paths; passes within `k_ci` combined half-widths.
pub fn check_chapman_kolmogorov_mc(
    cfg: &PathConfig,
    x: Vec2,
    f: &TestFunction,
    grid: &GridSpec,
    s: f64,
    t: f64,
    inner_paths: usize,
    k_ci: f64,
) -> Result<CheckReport> {
    let fv = |p: Vec2| f.value(&p);
    let fs: [&(dyn Fn(Vec2) -> f64 + Sync); 1] = [&fv];
    let direct = semigroup_estimates(cfg, &[x], &[t], &fs, 0)?;
    let (lhs, lhs_ci) = direct[0][0][0];
    let est = estimate_density(cfg, x, t - s, &grid.bbox, 1)?;
    let cells: Vec<usize> = (0..est.n_cells()).filter(|&k| est.counts[k] > 0).collect();
    let centres: Vec<Vec2> = cells.iter().map(|&k| est.cell_center(k)).collect();
    let inner_cfg = PathConfig {
        n_paths: inner_paths,
        ..cfg.clone()
    };
    let inner = semigroup_estimates(&inner_cfg, &centres, &[s], &fs, 1 << 62)?;
    let n = cfg.n_paths as f64;
    let (mut mean, mut m2, mut var_inner) = (0.0, 0.0, 0.0);
    for (i, &k) in cells.iter().enumerate() {
        let w = est.counts[k] as f64 / n;
        let (v, ci) = inner[i][0][0];
        mean += w * v;
        m2 += w * v * v;
        var_inner += (w * ci / 1.96).powi(2);
    }
    // Multinomial variance of the outer sum plus the inner estimates' own.
    let var_outer = (m2 - mean * mean).max(0.0) / n;
    let rhs_ci = 1.96 * (var_outer + var_inner).sqrt();
    let band = (lhs_ci * lhs_ci + rhs_ci * rhs_ci).sqrt();
    let z = (lhs - mean).abs() / band;
    Ok(CheckReport::new("chapman_kolmogorov_mc", Provenance::Mc)
        .with_params(json!({ "s": s, "t": t, "x": x, "f": f.label(), "paths": cfg.n_paths, "inner_paths": inner_paths }))
        .with_samples(cells.len(), 0)
        .with_sides(&[lhs], &[mean])
        .note(format!("lhs {lhs:.5} ± {lhs_ci:.5}, composition {mean:.5} ± {rhs_ci:.5}"))
        .decide(z, k_ci, Comparison::AtMost))
}

/// Spread max/min of kernel/envelope over samples with both sides positive.
pub fn check_two_sided(id: &str, provenance: Provenance, kernel: &[f64], envelope: &[f64], bound: f64) -> CheckReport {
    let mut ratios = Vec::new();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut excluded = 0;
    for (k, e) in kernel.iter().zip(envelope) {
        if *e > 0.0 && *k > 0.0 && e.is_finite() {
            ratios.push(k / e);
            lhs.push(*k);
            rhs.push(*e);
        } else {
            excluded += 1;
        }
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let spread = if ratios.is_empty() { f64::NAN } else { hi / lo };
    CheckReport::new(id, provenance)
        .with_samples(ratios.len(), excluded)
        .with_sides(&lhs, &rhs)
        .decide(spread, bound, Comparison::AtMost)
}

/// C₂ = max |∇ₓ k|·(ρ(x) ∧ t^{1/α}) / p₀ over the checked nodes at the
/// field's horizon; passes when finite.
pub fn check_gradient_bound(field: &KernelField, base: &BaseKernel, grid: &GridSpec) -> Result<CheckReport> {
    let Anchor::Target { node: y } = field.anchor else {
        return Err(Error::Contract("the gradient bound needs a target-anchored field".into()));
    };
    let (gx, gy) = field
        .last_gradient()
        .ok_or_else(|| Error::Contract(format!("field `{}` carries no gradients", field.label)))?;
    let t = field.horizon();
    let ls = t.powf(1.0 / base.params().alpha());
    let yc = grid.node(y);
    let p0: Vec<f64> = (0..grid.len()).map(|k| base.value(t, grid.node(k), yc)).collect();
    let pmax = p0.iter().copied().fold(0.0, f64::max);
    let mut vals = Vec::new();
    let mut excluded = 0;
    let mut arg = 0;
    for k in grid.inner_nodes_of(y) {
        let x = grid.node(k);
        let rho = base.domain().rho(x);
        if p0[k] <= 1e-10 * pmax || rho <= 0.5 * grid.spacing() {
            excluded += 1;
            continue;
        }
        let v = gx[k].hypot(gy[k]) * rho.min(ls) / p0[k];
        if vals.iter().all(|w| v > *w) {
            arg = k;
        }
        vals.push(v);
    }
    let c = vals.iter().copied().fold(0.0, f64::max);
    let mut r = CheckReport::new("gradient_bound", Provenance::Series)
        .with_params(json!({ "t": t, "target": y, "h": grid.spacing() }))
        .with_samples(vals.len(), excluded)
        .with_ratios(&vals)
        .with_argmax(json!({ "x": grid.node(arg) }))
        .with_fitted(c)
        .decide(c, f64::INFINITY, Comparison::AtMost);
    if !base.is_free() {
        r = r.surrogate();
    }
    Ok(r)
}

/// Fitted constants before and after refinement agree within `factor`.
pub fn check_refinement_stable(id: &str, provenance: Provenance, coarse: f64, fine: f64, factor: f64) -> CheckReport {
    let ratio = (fine / coarse).max(coarse / fine);
    CheckReport::new(id, provenance)
        .with_params(json!({ "coarse": coarse, "fine": fine }))
        .with_samples(2, 0)
        .with_fitted(fine)
        .decide(ratio, factor, Comparison::AtMost)
}

/// (1 ∨ ρ(x)/ρ(y))^{α/2} (1 ∨ |x−y|/(T∧1)^{1/α})^{d+α}.
pub fn harnack_factor(domain: &Domain, alpha: f64, x: Vec2, y: Vec2, t: f64) -> f64 {
    let a = (domain.rho(x) / domain.rho(y)).max(1.0).powf(0.5 * alpha);
    let b = (norm2(sub(x, y)) / t.min(1.0).powf(1.0 / alpha)).max(1.0).powf(2.0 + alpha);
    a * b
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnackSample {
    pub f: usize,
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

/// The fitted Harnack constant max P_T f(x) / (factor · P_T f(y)) over
/// sampled tuples from killed paths, excluding pairs with P_T f(y) inside
/// its own noise.
pub fn check_harnack(
    cfg: &PathConfig,
    points: &[Vec2],
    fs: &[TestFunction],
    times: &[f64],
    n_tuples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let domain = cfg
        .domain
        .clone()
        .ok_or_else(|| Error::config("harnack.domain", "the Harnack check needs a domain"))?;
    let closures: Vec<Box<dyn Fn(Vec2) -> f64 + Sync>> = fs
        .iter()
        .map(|f| {
            let f = f.clone();
            Box::new(move |p: Vec2| f.value(&p)) as Box<dyn Fn(Vec2) -> f64 + Sync>
        })
        .collect();
    let refs: Vec<&(dyn Fn(Vec2) -> f64 + Sync)> = closures.iter().map(|b| b.as_ref()).collect();
    let est = semigroup_estimates(cfg, points, times, &refs, 0)?;
    let mut all = Vec::new();
    for f in 0..fs.len() {
        for x in 0..points.len() {
            for y in 0..points.len() {
                for t in 0..times.len() {
                    all.push(HarnackSample { f, x, y, t });
                }
            }
        }
    }
    let mut rng = stream_rng(seed, 0);
    all.shuffle(&mut rng);
    all.truncate(n_tuples);
    let alpha = cfg.params.alpha();
    let mut ratios = Vec::new();
    let mut excluded = 0;
    let mut best: Option<&HarnackSample> = None;
    let mut best_r = 0.0;
    for smp in &all {
        let (lx, _) = est[smp.x][smp.t][smp.f];
        let (ly, cy) = est[smp.y][smp.t][smp.f];
        if ly <= 3.0 * cy || ly <= 0.0 {
            excluded += 1;
            continue;
        }
        let r = lx / (harnack_factor(&domain, alpha, points[smp.x], points[smp.y], times[smp.t]) * ly);
        if r > best_r {
            best_r = r;
            best = Some(smp);
        }
        ratios.push(r);
    }
    let c = if ratios.is_empty() { f64::NAN } else { best_r };
    let arg = best.map_or(json!(null), |b| {
        json!({ "f": fs[b.f].label(), "x": points[b.x], "y": points[b.y], "t": times[b.t] })
    });
    Ok(CheckReport::new("harnack", Provenance::Mc)
        .with_params(json!({ "paths": cfg.n_paths, "tuples": all.len(), "seed": seed }))
        .with_samples(ratios.len(), excluded)
        .with_ratios(&ratios)
        .with_argmax(arg)
        .with_fitted(c)
        .decide(c, f64::INFINITY, Comparison::AtMost))
}

/// Nodal values of f and of L f = Δ^{α/2} f + b·∇f, with ∇f analytic.
pub struct Generator {
    pub f: Vec<f64>,
    pub grad: [Vec<f64>; 2],
    pub lf: Vec<f64>,
}

pub fn apply_generator(base: &BaseKernel, b: &DriftField, grid: &GridSpec, f: &TestFunction) -> Result<Generator> {
    let cfg = QuadConfig::default().with_rel_tol(1e-7).with_abs_tol(1e-10);
    let params = *base.params();
    let nodes: Vec<Vec2> = (0..grid.len()).map(|k| grid.node(k)).collect();
    let lf: Vec<f64> = nodes
        .par_iter()
        .map(|x| {
            let g = f.gradient(x);
            let v = b.eval(*x);
            frac_laplacian_apply(&params, f, x, &cfg).map(|l| l + v[0] * g[0] + v[1] * g[1])
        })
        .collect::<Result<_>>()?;
    let grads: Vec<Vec<f64>> = nodes.iter().map(|x| f.gradient(x)).collect();
    Ok(Generator {
        f: nodes.iter().map(|x| f.value(x)).collect(),
        grad: [grads.iter().map(|g| g[0]).collect(), grads.iter().map(|g| g[1]).collect()],
        lf,
    })
}

/// P_t f − f against ∫₀ᵗ P_s L f ds (Simpson over `steps` intervals), max
/// over the checked nodes relative to ‖f‖∞.
pub fn check_generator_identity(
    base: &BaseKernel,
    b: &DriftField,
    grid: &GridSpec,
    f: &TestFunction,
    t: f64,
    steps: usize,
    k_max: usize,
    tol: f64,
) -> Result<CheckReport> {
    let steps = steps + steps % 2;
    let g = apply_generator(base, b, grid, f)?;
    let left = semigroup_series(base, b, grid, &g.f, Some(g.grad.clone()), t, steps, k_max)?;
    let right = semigroup_series(base, b, grid, &g.lf, None, t, steps, k_max)?;
    let dt = t / steps as f64;
    let nodes = grid.inner_nodes_of(grid.center_node());
    let fmax = g.f.iter().copied().fold(0.0, f64::max);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for &k in &nodes {
        let integral: f64 = (0..=steps)
            .map(|j| {
                let w = if j == 0 || j == steps { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                w * right.values[j][k]
            })
            .sum::<f64>()
            * dt
            / 3.0;
        lhs.push(left.last()[k]);
        rhs.push(g.f[k] + integral);
    }
    let dev = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / fmax;
    let mut r = CheckReport::new("generator_identity", Provenance::Series)
        .with_params(json!({ "t": t, "f": f.label(), "steps": steps, "terms": left.terms }))
        .with_samples(nodes.len(), 0)
        .with_sides(&lhs, &rhs)
        .decide(dev, tol, Comparison::AtMost);
    if !base.is_free() {
        r = r.surrogate();
    }
    Ok(r)
}

/// ∫ p^b(t, x, ·) from a source-anchored series: 1 plus the lattice sum of
/// the drift terms (each integrates to zero in the whole space).
pub fn check_mass_series(series: &KernelField, base: &BaseKernel, grid: &GridSpec, tol: f64) -> Result<CheckReport> {
    let Anchor::Source { node: x } = series.anchor else {
        return Err(Error::Contract("the mass check needs a source-anchored field".into()));
    };
    if !base.is_free() {
        return Err(Error::Unsupported("series mass is checked in the whole space".into()));
    }
    let t = series.horizon();
    let xc = grid.node(x);
    let area = grid.spacing().powi(2);
    let drift_part: f64 = (0..grid.len())
        .map(|k| series.last()[k] - base.value(t, xc, grid.node(k)))
        .sum::<f64>()
        * area;
    let mass = 1.0 + drift_part;
    Ok(CheckReport::new("mass_whole_space", Provenance::Series)
        .with_params(json!({ "t": t, "source": x }))
        .with_samples(grid.len(), 0)
        .with_sides(&[mass], &[1.0])
        .decide((mass - 1.0).abs(), tol, Comparison::AtMost))
}

/// Surviving mass of killed paths does not exceed one beyond `k_ci`
/// half-widths; one report per start and time.
pub fn check_mass_mc(cfg: &PathConfig, starts: &[Vec2], times: &[f64], k_ci: f64) -> Result<CheckReport> {
    let one = |_: Vec2| 1.0;
    let fs: [&(dyn Fn(Vec2) -> f64 + Sync); 1] = [&one];
    let est = semigroup_estimates(cfg, starts, times, &fs, 0)?;
    let mut excess = Vec::new();
    let mut masses = Vec::new();
    for row in &est {
        for cell in row {
            let (m, ci) = cell[0];
            masses.push(m);
            // Binomial half-width, floored at one path.
            let band = ci.max(1.96 / cfg.n_paths as f64);
            excess.push((m - 1.0) / band);
        }
    }
    let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckReport::new("mass_killed", Provenance::Mc)
        .with_params(json!({ "paths": cfg.n_paths, "times": times }))
        .with_samples(masses.len(), 0)
        .with_ratios(&masses)
        .decide(worst, k_ci, Comparison::AtMost))
}

/// ‖P_t f − f‖∞ over the checked nodes at t = 2^{−k}, k = 1..=k_last;
/// passes when strictly decreasing in k.
pub fn check_strong_continuity(
    base: &BaseKernel,
    b: &DriftField,
    grid: &GridSpec,
    f: &TestFunction,
    k_last: u32,
    k_max: usize,
) -> Result<(CheckReport, Vec<f64>)> {
    let nodes = grid.inner_nodes_of(grid.center_node());
    let fv: Vec<f64> = (0..grid.len()).map(|k| f.value(&grid.node(k))).collect();
    let grads: Vec<Vec<f64>> = (0..grid.len()).map(|k| f.gradient(&grid.node(k))).collect();
    let fg = [grads.iter().map(|g| g[0]).collect(), grads.iter().map(|g| g[1]).collect()];
    let mut sups = Vec::new();
    for k in 1..=k_last {
        let t = 0.5f64.powi(k as i32);
        let u = semigroup_series(base, b, grid, &fv, Some(fg.clone()), t, 4, k_max)?;
        sups.push(nodes.iter().map(|&n| (u.last()[n] - fv[n]).abs()).fold(0.0, f64::max));
    }
    let worst_step = sups.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let report = CheckReport::new("strong_continuity", Provenance::Series)
        .with_params(json!({ "f": f.label(), "k_last": k_last, "sup_norms": sups }))
        .with_samples(sups.len(), 0)
        .with_ratios(&sups)
        .decide(worst_step, 1.0 - 1e-12, Comparison::AtMost);
    Ok((report, sups))
}
