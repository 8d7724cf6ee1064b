use fracdrift_demo::*;

#[test]
fn free_profile_pairs_kernel_and_envelope() {
    let v = free_profile_values(1.5, 1.0, 4.0, 9).unwrap();
    assert_eq!(v.len(), 18);
    let (p, rho) = v.split_at(9);
    assert!(p.windows(2).all(|w| w[1] < w[0]));
    // Both sides are comparable: the ratio stays within the spread bound.
    let ratios: Vec<f64> = p.iter().zip(rho).map(|(a, b)| a / b).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(hi / lo < 100.0);
    assert!(free_profile_values(2.5, 1.0, 4.0, 9).is_err());
}

#[test]
fn envelope_vanishes_on_the_boundary() {
    let v = envelope_line_values(1.5, 0.1, [0.0, 0.0], 21).unwrap();
    let (q, p) = v.split_at(21);
    assert_eq!(q[0], 0.0);
    assert_eq!(q[20], 0.0);
    assert!(q.iter().zip(p).all(|(a, b)| a <= b));
}

#[test]
fn survival_decreases_from_one() {
    let v = survival_values(1.5, [0.3, 0.0], [0.0, 0.0], 500, 0.5, 5, 1).unwrap();
    let (s, ci) = v.split_at(5);
    assert!(s.windows(2).all(|w| w[1] <= w[0]));
    assert!(s[0] <= 1.0 && s[4] > 0.0 && ci.iter().all(|c| *c >= 0.0));
}
