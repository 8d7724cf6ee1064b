use fracdrift::envelope::*;
use fracdrift::geometry::Domain;
use fracdrift::quad::QuadConfig;
use fracdrift::stable_core::{eval_free_kernel, KernelTable, StableParams};
use proptest::prelude::*;

fn half(alpha: f64) -> EnvelopeParams {
    EnvelopeParams::new(StableParams::new(2, alpha).unwrap(), Domain::half_space([0.0, 1.0], 0.0).unwrap(), 1.0).unwrap()
}

fn ball(alpha: f64) -> EnvelopeParams {
    EnvelopeParams::new(StableParams::new(2, alpha).unwrap(), Domain::ball([0.0, 0.0], 1.0).unwrap(), 1.0).unwrap()
}

#[test]
fn envelope_composition() {
    let env = half(1.5);
    let v = q_envelope(&env, 1.0, [0.0, 0.01], [0.0, 4.0]).unwrap();
    let want = 0.01f64.powf(0.75) * eval_free_kernel(&env.params, 1.0, 3.99).unwrap();
    assert!((v - want).abs() < 1e-14 * want);
    let deep = q_envelope(&env, 0.1, [0.0, 5.0], [0.3, 6.0]).unwrap();
    assert_eq!(deep, eval_free_kernel(&env.params, 0.1, (0.09f64 + 1.0).sqrt()).unwrap());
    let x = [0.2, 0.3];
    let diag = q_envelope(&env, 1.0, x, x).unwrap();
    let qt = q_tilde(&env, 1.0, x);
    assert!((diag - qt * qt * eval_free_kernel(&env.params, 1.0, 0.0).unwrap()).abs() < 1e-15);
    assert_eq!(q_envelope(&env, 1.0, [0.0, -1.0], x).unwrap(), 0.0);
}

#[test]
fn theta_must_exceed_half_alpha() {
    let mut d = Domain::ball([0.0, 0.0], 1.0).unwrap();
    d.theta = 0.6;
    assert!(EnvelopeParams::new(StableParams::new(2, 1.5).unwrap(), d, 1.0).is_err());
}

#[test]
fn gam_example_and_exact_branch() {
    let env = half(1.5);
    let gamma = 1.0 - 1.0 / 1.5;
    let r = check_gam(&env, gamma, 1.0, [2.0, 0.0]).unwrap();
    let ratio = r.max_ratio.unwrap();
    assert!(ratio.is_finite() && ratio > 0.0 && ratio <= 1.0);
    // |x| ≥ t^{1/α}: lhs ≤ t^{1+γ}/((1+γ)|x|^{d+α}), and the integrand is nearly flat.
    let cfg = QuadConfig::default().with_rel_tol(1e-12);
    let x = 2.0;
    for t in [1e-4, 1e-2, 1.0] {
        let lhs = gam_lhs(&env.params, gamma, t, x, &cfg).unwrap();
        let bound = t.powf(1.0 + gamma) / ((1.0 + gamma) * x.powf(3.5));
        assert!(lhs <= bound * (1.0 + 1e-12));
    }
    // The relative gap is O(t^{1/α}/|x|), so the bound is reached as t → 0.
    let t = 1e-10;
    let lhs = gam_lhs(&env.params, gamma, t, x, &cfg).unwrap();
    let bound = t.powf(1.0 + gamma) / ((1.0 + gamma) * x.powf(3.5));
    assert!((lhs / bound - 1.0).abs() < 1e-6);
    assert!(gam_lhs(&env.params, 2.0, 1.0, 1.0, &cfg).is_err());
}

#[test]
fn gam_ratio_bounded_as_t_shrinks() {
    let env = half(1.5);
    let cfg = QuadConfig::default().with_rel_tol(1e-10);
    for gamma in gam_exponents(&env.params) {
        let ratios: Vec<f64> = (0..=6)
            .map(|k| {
                let t = 10f64.powi(-k);
                gam_lhs(&env.params, gamma, t, 0.5, &cfg).unwrap() / gam_rhs(&env.params, gamma, t, 0.5)
            })
            .collect();
        let mx = ratios.iter().cloned().fold(0.0, f64::max);
        let mn = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mx.is_finite() && mn > 0.0 && mx / mn < 50.0, "gamma {gamma}: {ratios:?}");
    }
}

#[test]
fn three_p_deep_interior_uses_scaling() {
    let env = half(1.5);
    let x = [0.0, 50.0];
    let rep = check_3p(&env, 1.0, 0.5, x, x, x).unwrap();
    // All q̃ = 1: lhs = p(1/2,0)²/p(1,0) = 2^{2d/α}p(1,0), rhs = ρ^α·2·(1/2)^{-(d+α)/α}.
    let p0 = eval_free_kernel(&env.params, 1.0, 0.0).unwrap();
    let lhs = 2f64.powf(4.0 / 1.5) * p0;
    let rhs = 50f64.powf(1.5) * 2.0 * 2f64.powf(3.5 / 1.5);
    let l = rep.lhs.unwrap().max;
    let r = rep.rhs.unwrap().max;
    assert!((l - lhs).abs() < 1e-8 * lhs, "{l} vs {lhs}");
    assert!((r - rhs).abs() < 1e-10 * rhs);
}

#[test]
fn three_p_near_boundary_sequence() {
    let env = ball(1.5);
    let table = KernelTable::shared(&env.params);
    let mut ratios = Vec::new();
    let mut last = (f64::INFINITY, f64::INFINITY);
    for k in 1..=6 {
        let z = [1.0 - 10f64.powi(-k), 0.0];
        let (l, r) = three_p_sides(&env, &table, 0.5, 0.2, [0.0, 0.3], [-0.2, -0.1], z).unwrap();
        assert!(l < last.0 && r < last.1);
        last = (l, r);
        ratios.push(l / r);
    }
    let mx = ratios.iter().cloned().fold(0.0, f64::max);
    let mn = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(mx / mn < 10.0, "{ratios:?}");
    assert!(check_3p(&env, 0.5, 0.2, [2.0, 0.0], [0.0, 0.0], [0.0, 0.0]).is_err());
}

#[test]
fn integral_26_regimes() {
    let env = half(1.5);
    // Easy case: ρ(y) ≥ (t/2)^{1/α}.
    let rep = check_integral_26(&env, 0.5, [0.0, 2.0], [0.3, 0.1]).unwrap();
    let r = rep.max_ratio.unwrap();
    assert!(r > 0.01 && r < 100.0, "{r}");
    // Same point up to a tiny offset deep inside: identical integrands.
    let rep = check_integral_26(&env, 0.5, [0.0, 5.0], [1e-3, 5.0]).unwrap();
    let r = rep.max_ratio.unwrap();
    assert!(r > 0.01 && r < 100.0, "{r}");
}

#[test]
fn integral_26_case_one_asymptotics() {
    // (t/2)^{1/α} < ρ(z)/2 < |z−y| with ρ(y) small. For s ≤ t/2 the kernel
    // is in its tail, p(s,r) ≈ c s r^{−d−α}, and q̃(s,y) = ρ(y)^{α/2}/√s, so
    // L ≈ c ρ(y)^{α/2} |z−y|^{−d−α} (t/2)^{3/2−1/α} / (3/2 − 1/α).
    let env = half(1.5);
    let table = KernelTable::shared(&env.params);
    let cfg = QuadConfig::default().with_rel_tol(1e-10);
    let t = 0.01;
    let z = [0.0, 1.0];
    let c = fracdrift::stable_core::levy_constant(2, 1.5);
    let mut ratios = Vec::new();
    for k in 3..=6 {
        let ry = 10f64.powi(-k);
        let y = [1.5, ry];
        let r = ((1.5f64).powi(2) + (1.0 - ry).powi(2)).sqrt();
        let (l, rr) = integral_26_sides(&env, &table, t, y, z, &cfg).unwrap();
        let e = 1.5 - 1.0 / 1.5;
        let closed = c * ry.powf(0.75) * r.powf(-3.5) * (0.5 * t).powf(e) / e;
        assert!((l / closed - 1.0).abs() < 0.05, "k={k}: {l} vs {closed}");
        ratios.push(l / rr);
    }
    let mx = ratios.iter().cloned().fold(0.0, f64::max);
    let mn = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(mx / mn < 1.05 && mx < 10.0 && mn > 0.1, "{ratios:?}");
}

#[test]
fn sweeps_are_reproducible() {
    let env = ball(1.5);
    let a = lemma_sweep(&env, Lemma::ThreeP, 200, 7, 1.5).unwrap();
    let b = lemma_sweep(&env, Lemma::ThreeP, 200, 7, 1.5).unwrap();
    assert_eq!(a.constant_2n, b.constant_2n);
    assert!(a.constant_2n >= a.constant_n);
    let mut rng = fracdrift::rng::stream_rng(1, 2);
    let mut near = 0;
    for _ in 0..2000 {
        let p = sample_point(&env.domain, &mut rng, 0.2);
        assert!(env.domain.contains(p));
        if env.domain.rho(p) < 0.05 {
            near += 1;
        }
    }
    assert!(near > 300);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn envelope_symmetric_and_dominated(x in prop::array::uniform2(-1.0..1.0f64), y in prop::array::uniform2(-1.0..1.0f64), t in 0.01..1.0f64) {
        let env = ball(1.5);
        let table = KernelTable::shared(&env.params);
        let a = q_envelope_fast(&env, &table, t, x, y);
        let b = q_envelope_fast(&env, &table, t, y, x);
        prop_assert_eq!(a, b);
        let p = table.density(t, ((x[0]-y[0]).powi(2) + (x[1]-y[1]).powi(2)).sqrt());
        prop_assert!(a <= p);
    }

    #[test]
    fn q_tilde_monotone_in_t(y in 0.0..2.0f64, t in 0.01..1.0f64) {
        let env = half(1.5);
        prop_assert!(q_tilde(&env, 1.5 * t, [0.0, y]) <= q_tilde(&env, t, [0.0, y]));
    }
}
