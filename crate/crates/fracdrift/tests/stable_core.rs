use std::f64::consts::PI;

use fracdrift::quad::{integrate, QuadConfig};
use fracdrift::stable_core::{
    eval_free_kernel, eval_free_kernel_gradient, frac_laplacian_apply, levy_constant,
    KernelTable, StableParams, TestFunction,
};
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

fn params(alpha: f64) -> StableParams {
    StableParams::new(2, alpha).unwrap()
}

fn cauchy(t: f64, r: f64) -> f64 {
    t / (2.0 * PI * (t * t + r * r).powf(1.5))
}

#[test]
fn cauchy_closed_form() {
    let p = params(1.0);
    let v0 = eval_free_kernel(&p, 1.0, 0.0).unwrap();
    assert!((v0 - 1.0 / (2.0 * PI)).abs() / v0 < 1e-6);
    for &(t, r) in &[(1.0, 0.5), (1.0, 2.0), (0.3, 1.7), (2.0, 10.0), (1.0, 100.0)] {
        let v = eval_free_kernel(&p, t, r).unwrap();
        let e = cauchy(t, r);
        assert!((v / e - 1.0).abs() < 1e-6, "t={t} r={r}: {v} vs {e}");
    }
}

#[test]
fn cauchy_gradient() {
    let p = params(1.0);
    let g = eval_free_kernel_gradient(&p, 1.0, &[1.0, 0.0]).unwrap();
    let e = -3.0 / (2.0 * PI * 2f64.powf(2.5));
    assert!((g[0] / e - 1.0).abs() < 1e-6, "{} vs {e}", g[0]);
    assert_eq!(g[1], 0.0);
    let g0 = eval_free_kernel_gradient(&params(1.5), 1.0, &[0.0, 0.0]).unwrap();
    assert_eq!(g0, vec![0.0, 0.0]);
}

#[test]
fn scaling_identity() {
    let p = params(1.5);
    let lhs = eval_free_kernel(&p, 2f64.powf(1.5), 2.0).unwrap();
    let rhs = 0.25 * eval_free_kernel(&p, 1.0, 1.0).unwrap();
    assert!((lhs / rhs - 1.0).abs() < 1e-8);
    for &alpha in &[1.2, 1.8] {
        let p = params(alpha);
        for &(t, r) in &[(0.1, 0.3), (7.0, 4.0)] {
            let lhs = eval_free_kernel(&p, t, r).unwrap();
            let ls = t.powf(1.0 / alpha);
            let rhs = eval_free_kernel(&p, 1.0, r / ls).unwrap() / (ls * ls);
            assert!((lhs / rhs - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let p = params(1.5);
    let x = [0.3, -0.4];
    let t = 0.7;
    let g = eval_free_kernel_gradient(&p, t, &x).unwrap();
    let h = 1e-4;
    let f = |y: [f64; 2]| eval_free_kernel(&p, t, (y[0] * y[0] + y[1] * y[1]).sqrt()).unwrap();
    let fd = [
        (f([x[0] + h, x[1]]) - f([x[0] - h, x[1]])) / (2.0 * h),
        (f([x[0], x[1] + h]) - f([x[0], x[1] - h])) / (2.0 * h),
    ];
    for i in 0..2 {
        assert!((g[i] / fd[i] - 1.0).abs() < 1e-4, "{i}: {} vs {}", g[i], fd[i]);
    }
    // Parallel to x.
    assert!((g[0] * x[1] - g[1] * x[0]).abs() < 1e-14);
}

#[test]
fn normalization_exact_path() {
    let p = params(1.5);
    let cfg = QuadConfig::default().with_rel_tol(1e-9);
    let r_cut: f64 = 1e3;
    let body = integrate(
        |v: f64| {
            let r = v.exp();
            2.0 * PI * r * r * eval_free_kernel(&p, 1.0, r).unwrap()
        },
        -12.0,
        r_cut.ln(),
        &cfg,
    );
    // Tail beyond r_cut from the leading power law t·c|x|^{-d-α}.
    let tail = 2.0 * PI * levy_constant(2, 1.5) * r_cut.powf(-1.5) / 1.5;
    let mass = body.value + tail;
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
}

#[test]
fn normalization_table_all_alphas() {
    for &alpha in &[1.2, 1.5, 1.8] {
        let p = params(alpha);
        let tab = KernelTable::shared(&p);
        for &t in &[0.1, 1.0, 10.0] {
            // Tail mass at radius 0 is the total mass; cross-check by
            // integrating the density profile.
            assert!((tab.tail_mass(t, 0.0) - 1.0).abs() < 1e-9);
            let ls = t.powf(1.0 / alpha);
            let cfg = QuadConfig::default().with_rel_tol(1e-10);
            let inner = integrate(
                |v: f64| {
                    let r = v.exp();
                    2.0 * PI * r * r * tab.density(t, r)
                },
                (1e-8 * ls).ln(),
                (50.0 * ls).ln(),
                &cfg,
            )
            .value;
            let total = inner + tab.tail_mass(t, 50.0 * ls);
            assert!((total - 1.0).abs() < 1e-6, "alpha={alpha} t={t}: {total}");
        }
    }
}

#[test]
fn fourier_bessel_cross_check() {
    for &alpha in &[1.2, 1.5, 1.8] {
        let p = params(alpha);
        let cfg = QuadConfig::default().with_rel_tol(1e-12).with_abs_tol(1e-15);
        for &r in &[0.0, 0.5, 2.0] {
            let hankel = integrate(
                |rho: f64| (-rho.powf(alpha)).exp() * libm::j0(r * rho) * rho,
                0.0,
                40.0,
                &cfg,
            )
            .value
                / (2.0 * PI);
            let v = eval_free_kernel(&p, 1.0, r).unwrap();
            assert!((v / hankel - 1.0).abs() < 1e-7, "alpha={alpha} r={r}: {v} vs {hankel}");
        }
    }
}

#[test]
fn table_matches_exact_path() {
    for &alpha in &[1.2, 1.5, 1.8] {
        let p = params(alpha);
        let tab = KernelTable::shared(&p);
        for &r in &[0.0, 1e-3, 0.05, 0.37, 1.0, 2.9, 17.0, 250.0, 4e4, 3e6] {
            let exact = eval_free_kernel(&p, 1.0, r).unwrap();
            let approx = tab.p1(r);
            assert!((approx / exact - 1.0).abs() < 1e-8, "alpha={alpha} r={r}: {approx} vs {exact}");
            if r > 0.0 {
                let g = eval_free_kernel_gradient(&p, 1.0, &[r, 0.0]).unwrap()[0];
                let ga = -r * tab.g1(r);
                assert!((ga / g - 1.0).abs() < 1e-8, "grad alpha={alpha} r={r}");
            }
        }
    }
}

#[test]
fn table_tails_and_l1_norm() {
    let cfg = QuadConfig::default().with_rel_tol(1e-11);
    for &alpha in &[1.2, 1.5, 1.8] {
        let p = params(alpha);
        let tab = KernelTable::shared(&p);
        // ∫|∇p(1,·)| = Γ(1 + 1/α) in d = 2.
        let l1 = libm::tgamma(1.0 + 1.0 / alpha);
        assert!((tab.grad_l1_unit() / l1 - 1.0).abs() < 1e-9, "alpha={alpha}");
        for &r in &[0.2f64, 1.0, 5.0] {
            let tail = integrate(|v: f64| {
                let s = v.exp();
                2.0 * PI * s * s * tab.p1(s)
            }, r.ln(), 60.0, &cfg)
            .value;
            assert!((tab.tail1(r) / tail - 1.0).abs() < 1e-7);
            let gtail = integrate(|v: f64| {
                let s = v.exp();
                2.0 * PI * s * s * s * tab.g1(s)
            }, r.ln(), 60.0, &cfg)
            .value;
            assert!((tab.grad_tail1(r) / gtail - 1.0).abs() < 1e-7);
        }
        // Leading tail p(1,r) ~ c_{d,α} r^{-d-α}.
        let r: f64 = 1e4;
        let lead = tab.p1(r) * r.powf(2.0 + alpha) / levy_constant(2, alpha);
        assert!((lead - 1.0).abs() < 1e-4, "alpha={alpha}: {lead}");
    }
}

#[test]
fn test_function_derivatives() {
    let f = TestFunction::bump(vec![0.2, -0.1], 1.3, 2.0);
    let pl = TestFunction::plateau(vec![0.0, 0.0], 1.0, 2.0);
    let h = 1e-5;
    for tf in [&f, &pl] {
        for &x in &[[0.5, 0.3], [-0.4, 0.9], [1.0, 1.0], [0.1, -1.2]] {
            let g = tf.gradient(&x);
            let hs = tf.hessian(&x);
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (tf.value(&xp) - tf.value(&xm)) / (2.0 * h);
                assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "{} grad {i} at {x:?}", tf.label());
                let gp = tf.gradient(&xp);
                let gm = tf.gradient(&xm);
                for j in 0..2 {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                    assert!((hs[j * 2 + i] - fd2).abs() <= 1e-5 * fd2.abs().max(1e-2));
                }
            }
        }
    }
}

#[test]
fn frac_laplacian_of_constant_vanishes() {
    let p = params(1.5);
    let f = TestFunction::plateau(vec![0.0, 0.0], 1e5, 2e5);
    let cfg = QuadConfig::default();
    let v = frac_laplacian_apply(&p, &f, &[0.0, 0.0], &cfg).unwrap();
    assert!(v.abs() < 1e-6, "{v}");
}

#[test]
fn frac_laplacian_translation_covariance() {
    let p = params(1.5);
    let f = TestFunction::bump(vec![0.0, 0.0], 1.0, 1.0);
    let v = [0.7, -0.3];
    let g = f.translated(&v);
    let cfg = QuadConfig::default();
    for &x in &[[0.2, 0.1], [1.5, 0.0], [3.0, -2.0]] {
        let a = frac_laplacian_apply(&p, &f, &x, &cfg).unwrap();
        let b = frac_laplacian_apply(&p, &g, &[x[0] + v[0], x[1] + v[1]], &cfg).unwrap();
        assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-3), "{a} vs {b}");
    }
}

/// Δ^{α/2} f at the origin by the multiplier −|ξ|^α on a periodic grid.
fn spectral_frac_laplacian(f: &TestFunction, alpha: f64, period: f64, n: usize) -> f64 {
    let h = period / n as f64;
    let mut data: Vec<Complex<f64>> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let xi = if i < n / 2 { i as f64 } else { i as f64 - n as f64 } * h;
            let xj = if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * h;
            Complex::new(f.value(&[xi, xj]), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let fft2 = |data: &mut Vec<Complex<f64>>, plan: &std::sync::Arc<dyn rustfft::Fft<f64>>| {
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = data[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                data[i * n + j] = col[i];
            }
        }
    };
    fft2(&mut data, &fwd);
    // Value at the origin of the inverse transform is the plain mean.
    let dk = 2.0 * PI / period;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let ki = if i < n / 2 { i as f64 } else { i as f64 - n as f64 } * dk;
            let kj = if j < n / 2 { j as f64 } else { j as f64 - n as f64 } * dk;
            let m = -(ki * ki + kj * kj).sqrt().powf(alpha);
            acc += m * data[i * n + j].re;
        }
    }
    acc / (n * n) as f64
}

#[test]
fn frac_laplacian_spectral_oracle() {
    let p = params(1.5);
    let f = TestFunction::bump(vec![0.0, 0.0], 1.0, 1.0);
    let quad = frac_laplacian_apply(&p, &f, &[0.0, 0.0], &QuadConfig::default()).unwrap();
    let spec = spectral_frac_laplacian(&f, 1.5, 40.0, 1024);
    assert!((quad / spec - 1.0).abs() < 1e-3, "{quad} vs {spec}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_radially_decreasing(r in 0.0f64..50.0, dr in 1e-3f64..5.0) {
        let tab = KernelTable::shared(&params(1.5));
        prop_assert!(tab.p1(r) > 0.0);
        prop_assert!(tab.p1(r + dr) < tab.p1(r));
        prop_assert!(tab.tail1(r + dr) < tab.tail1(r));
    }

    #[test]
    fn table_scaling(t in 0.01f64..10.0, r in 0.0f64..20.0) {
        let tab = KernelTable::shared(&params(1.5));
        let ls = t.powf(1.0 / 1.5);
        let lhs = tab.density(t, r);
        let rhs = tab.p1(r / ls) / (ls * ls);
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
    }
}
