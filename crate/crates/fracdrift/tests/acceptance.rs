//! Acceptance criteria 1–9. Each test prints one line with its verdict.

use std::f64::consts::PI;
use std::sync::OnceLock;

use fracdrift::duhamel::{sum_series, Anchor, BaseKernel, GridSpec};
use fracdrift::experiment::{run, ExperimentConfig, RunOutput};
use fracdrift::geometry::Domain;
use fracdrift::kato::{covanishing, DriftField, DriftSpec, KatoProbes};
use fracdrift::quad::QuadConfig;
use fracdrift::report::CheckReport;
use fracdrift::stable_core::{eval_free_kernel, KernelTable, StableParams};
use serde_json::{json, Value};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n} ({name}): {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn config(v: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

fn report<'a>(out: &'a RunOutput, id: &str) -> &'a CheckReport {
    out.manifest
        .reports
        .iter()
        .find(|r| r.check_id == id)
        .unwrap_or_else(|| panic!("no report `{id}`"))
}

fn whole_plane() -> &'static RunOutput {
    static OUT: OnceLock<RunOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let cfg = ExperimentConfig::from_json(include_str!("../../../configs/whole_plane.json")).unwrap();
        run(&cfg).unwrap()
    })
}

fn ball() -> &'static RunOutput {
    static OUT: OnceLock<RunOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let cfg = ExperimentConfig::from_json(include_str!("../../../configs/ball.json")).unwrap();
        run(&cfg).unwrap()
    })
}

#[test]
fn criterion_1_free_kernel() {
    // Cauchy kernel t / (2π (t² + r²)^{3/2}) at α = 1.
    let p1 = StableParams::new(2, 1.0).unwrap();
    let mut cauchy: f64 = 0.0;
    for &(t, r) in &[(1.0f64, 0.0f64), (1.0, 0.5), (0.3, 1.7), (2.0, 10.0), (1.0, 100.0)] {
        let want = t / (2.0 * PI * (t * t + r * r).powf(1.5));
        cauchy = cauchy.max((eval_free_kernel(&p1, t, r).unwrap() / want - 1.0).abs());
    }
    let mut worst = [0.0f64; 3];
    for alpha in [1.2, 1.5, 1.8] {
        let out = run(&config(json!({
            "name": "free", "params": { "alpha": alpha }, "grid": { "horizon": 1.0, "m": 8 },
            "checks": [ { "id": "free_normalization" }, { "id": "free_scaling" }, { "id": "free_gradient" } ]
        })))
        .unwrap();
        for (w, id) in worst.iter_mut().zip(["free_normalization", "free_scaling", "free_gradient"]) {
            *w = w.max(report(&out, id).statistic);
        }
    }
    let pass = cauchy < 1e-6 && worst[0] < 1e-3 && worst[1] < 1e-8 && worst[2] < 1e-4;
    verdict(
        1,
        "free kernel",
        pass,
        format!("cauchy {cauchy:.2e}, mass {:.2e}, scaling {:.2e}, gradient {:.2e}", worst[0], worst[1], worst[2]),
    );
}

#[test]
fn criterion_2_envelope_spread() {
    let out = run(&config(json!({
        "name": "spread", "params": { "alpha": 1.5 }, "grid": { "horizon": 1.0, "m": 32 },
        "checks": [ { "id": "two_sided" } ]
    })))
    .unwrap();
    let r = report(&out, "two_sided");
    verdict(2, "envelope spread", r.pass && r.statistic < 100.0, format!("spread {:.3}", r.statistic));
}

#[test]
fn criterion_3_kato() {
    let mut worst: f64 = 0.0;
    for alpha in [1.2, 1.5, 1.8] {
        let out = run(&config(json!({
            "name": "kato", "params": { "alpha": alpha }, "grid": { "horizon": 1.0, "m": 8 },
            "checks": [ { "id": "kato_closed_form" } ]
        })))
        .unwrap();
        worst = worst.max(report(&out, "kato_closed_form").statistic);
    }
    // Catalog with known membership: bounded and mildly singular drifts
    // vanish, an exponent past α − 1 does not.
    let p = StableParams::new(2, 1.5).unwrap();
    let d = Domain::ball([0.0, 0.0], 1.0).unwrap();
    let probes = KatoProbes::points(vec![[0.0, 0.0], [0.5, 0.0]]);
    let cfg = QuadConfig::default().with_rel_tol(1e-8);
    let singular = |e: f64| {
        DriftField::new(DriftSpec::Singular { pole: [0.1, 0.0], exponent: e, direction: [0.0, 1.0], scale: 1.0 }, d.clone()).unwrap()
    };
    let catalog = [(DriftField::constant([0.3, 0.0], d.clone()), true), (singular(0.2), true), (singular(0.7), false)];
    let mut cov_ok = true;
    for (b, expect) in &catalog {
        let cv = covanishing(&p, b, &d, 0.5, 30, &probes, &cfg).unwrap();
        cov_ok &= cv.consistent() && cv.kato_vanishes == *expect;
    }
    verdict(3, "kato", worst < 1e-6 && cov_ok, format!("closed form {worst:.2e}, covanishing consistent: {cov_ok}"));
}

#[test]
fn criterion_4_lemmas() {
    let mut growth = Vec::new();
    let mut pass = true;
    for domain in [json!({ "kind": "ball", "center": [0.0, 0.0], "radius": 1.0 }), json!({ "kind": "half_space", "normal": [0.0, 1.0], "offset": 0.0 })] {
        let out = run(&config(json!({
            "name": "lemmas", "params": { "alpha": 1.5 }, "domain": domain, "grid": { "horizon": 1.0, "m": 8 },
            "mc": { "n_paths": 1, "dt": 0.5, "seed": 21 },
            "checks": [ { "id": "lemma_sweep", "samples": 10000, "stability": 1.5 } ]
        })))
        .unwrap();
        for id in ["gam", "3p", "integral_26"] {
            let r = report(&out, id);
            pass &= r.pass && r.n_samples == 20000 && r.fitted_constant.is_some_and(f64::is_finite);
            growth.push(r.statistic);
        }
    }
    verdict(4, "lemma sweeps", pass, format!("growth under doubling {growth:.3?}"));
}

#[test]
fn criterion_5_contraction() {
    let r = report(whole_plane(), "contraction");
    let c = r.fitted_constant.unwrap();
    verdict(
        5,
        "contraction",
        r.pass && c < 0.25 && r.statistic <= 1.2,
        format!("C = {c:.4} at horizon {}, max decay/C {:.3}", r.params["horizon"], r.statistic),
    );
}

#[test]
fn criterion_6_translation_oracle() {
    let p = StableParams::new(2, 1.5).unwrap();
    let base = BaseKernel::free(&p).unwrap();
    let table = KernelTable::shared(&p);
    let bv = [0.3, 0.0];
    let grid = GridSpec::new(&p, 0.5, 64, [0.0, 0.0]).unwrap();
    let y = grid.center_node();
    let b = DriftField::constant(bv, Domain::whole());
    let (f, _) = sum_series(&base, &b, &grid, Anchor::Target { node: y }, 10, 1e-4).unwrap();
    let yc = grid.node(y);
    let (mut values, mut grads): (f64, f64) = (0.0, 0.0);
    for t in [0.25, 0.5] {
        let i = f.time_index(t).unwrap();
        let (gx, gy) = (&f.grad_x.as_ref().unwrap()[i], &f.grad_y.as_ref().unwrap()[i]);
        let (mut gerr, mut gsup): (f64, f64) = (0.0, 0.0);
        for k in grid.inner_nodes_of(y) {
            let x = grid.node(k);
            // p^b(t, x, y) = p(t, y − x − tb)
            let e = [x[0] - yc[0] + t * bv[0], x[1] - yc[1] + t * bv[1]];
            let (v, g) = table.density_and_grad(t, e[0].hypot(e[1]));
            values = values.max((f.values[i][k] - v).abs() / v);
            gerr = gerr.max((gx[k] + e[0] * g).hypot(gy[k] + e[1] * g));
            gsup = gsup.max(e[0].hypot(e[1]) * g);
        }
        grads = grads.max(gerr / gsup);
    }
    let runner = report(whole_plane(), "translation_oracle").pass && report(whole_plane(), "translation_oracle_gradient").pass;
    verdict(
        6,
        "translation oracle",
        values < 0.05 && grads < 0.07 && runner,
        format!("values {values:.2e}, gradients {grads:.2e}"),
    );
}

#[test]
fn criterion_7_theorem_items() {
    let w = whole_plane();
    let b = ball();
    let parts = [
        ("(i) mc ratio spread < 200", report(b, "two_sided_mc").pass && report(b, "two_sided_mc").statistic < 200.0),
        ("(ii) gradient constant finite", report(w, "gradient_bound").fitted_constant.is_some_and(f64::is_finite)),
        ("(ii) gradient refinement", report(w, "gradient_refinement").pass),
        ("(ii) dual duhamel < 5%", report(w, "dual_duhamel").pass && report(w, "dual_duhamel").statistic < 0.05),
        ("(iii) series CK < 5%", report(w, "chapman_kolmogorov").pass && report(w, "chapman_kolmogorov").statistic < 0.05),
        ("(iii) mc CK within 3 CI", report(b, "chapman_kolmogorov_mc").pass && report(b, "chapman_kolmogorov_mc").tolerance == 3.0),
        ("(iv) generator identity < 1e-2", report(w, "generator_identity").pass && report(w, "generator_identity").statistic < 1e-2),
        ("(v) whole-space mass", report(w, "mass_whole_space").pass),
        ("(v) killed mass at most one", report(b, "mass_killed").pass),
        ("(vi) strong continuity", report(w, "strong_continuity").pass),
    ];
    let failed: Vec<&str> = parts.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let covered = w.manifest.missing_items().is_empty() && b.manifest.missing_items().is_empty();
    verdict(
        7,
        "theorem items",
        failed.is_empty() && covered,
        format!("{} of {} parts, failed {failed:?}", parts.len() - failed.len(), parts.len()),
    );
}

#[test]
fn criterion_8_harnack() {
    let b = ball();
    let h = report(b, "harnack");
    let s = report(b, "harnack_stability");
    let pass = h.pass && h.n_samples + h.n_excluded == 200 && h.fitted_constant.is_some_and(f64::is_finite) && s.pass;
    verdict(
        8,
        "harnack",
        pass,
        format!("C = {:.3}, growth under path quadrupling {:.3}", h.fitted_constant.unwrap_or(f64::NAN), s.statistic),
    );
}

#[test]
fn criterion_9_reproducibility() {
    let cfg = config(json!({
        "name": "repro", "params": { "alpha": 1.5 },
        "domain": { "kind": "ball", "center": [0.0, 0.0], "radius": 1.0 },
        "drift": { "kind": "constant", "b": [0.3, 0.0] },
        "grid": { "horizon": 0.2, "m": 16, "spacing": 0.1375 },
        "series": { "k_max": 4, "tol": 1e-3 },
        "mc": { "n_paths": 4000, "dt": 0.01, "seed": 5 },
        "checks": [ { "id": "two_sided" }, { "id": "mass" }, { "id": "dual_duhamel" } ]
    }));
    let hashes: Vec<String> = [1, 2, 3]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| run(&cfg).unwrap()).manifest.manifest_hash
        })
        .collect();
    let same = hashes.windows(2).all(|w| w[0] == w[1]);
    verdict(9, "reproducibility", same, format!("manifest hashes {:?}", hashes.iter().map(|h| &h[..12]).collect::<Vec<_>>()));
}
