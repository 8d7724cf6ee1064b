use fracdrift::geometry::{interior_grid, norm2, sub, Domain, GridBox};
use proptest::prelude::*;

#[test]
fn distance_examples() {
    let h = Domain::half_space([0.0, 1.0], 0.0).unwrap();
    assert_eq!(h.rho([3.0, 2.0]), 2.0);
    let b = Domain::ball([0.0, 0.0], 1.0).unwrap();
    assert_eq!(b.rho([0.0, 0.0]), 1.0);
    assert_eq!(b.rho([2.0, 0.0]), 0.0);
    assert!(Domain::whole().rho([5.0, 5.0]).is_infinite());
}

#[test]
fn unnormalized_normal_is_rescaled() {
    let h = Domain::half_space([0.0, 2.0], 1.0).unwrap();
    assert!((h.rho([0.0, 1.5]) - 1.0).abs() < 1e-15);
}

#[test]
fn theta_pairing() {
    let b = Domain::ball([0.0, 0.0], 1.0).unwrap();
    assert!(b.validate(1.5).is_ok());
    let mut bad = b.clone();
    bad.theta = 0.7;
    assert!(bad.validate(1.5).is_err());
}

#[test]
fn coarse_ball_grid_is_inside() {
    let b = Domain::ball([0.0, 0.0], 1.0).unwrap();
    let g = interior_grid(&b, &GridBox { lo: [-1.0, -1.0], hi: [1.0, 1.0], n: [3, 3] }).unwrap();
    assert!(!g.is_empty());
    for p in &g.points {
        assert!(norm2(p.x) < 1.0);
        assert!(p.rho > 0.0);
    }
}

#[test]
fn half_space_weights_sum_to_area() {
    let h = Domain::half_space([0.3, 1.0], 0.1).unwrap();
    let bx = GridBox { lo: [-1.0, -1.0], hi: [1.0, 1.0], n: [37, 41] };
    let g = interior_grid(&h, &bx).unwrap();
    // Area of the square above the line 0.3x + y = 0.1·|n|, by polygon clipping of the whole box.
    let (area, _) = h.clip_rect(bx.lo, bx.hi);
    assert!((g.total_weight() - area).abs() < 1e-12, "{} vs {}", g.total_weight(), area);
}

#[test]
fn ball_weights_sum_to_area() {
    let b = Domain::ball([0.1, -0.2], 0.8).unwrap();
    let g = interior_grid(&b, &GridBox::centered([0.0, 0.0], 0.05, 40)).unwrap();
    assert!((g.total_weight() - std::f64::consts::PI * 0.64).abs() < 1e-11);
}

#[test]
fn boundary_layer_present() {
    let b = Domain::ball([0.0, 0.0], 1.0).unwrap();
    let bx = GridBox::centered([0.0, 0.0], 0.05, 44);
    let g = interior_grid(&b, &bx).unwrap();
    let h = 0.05;
    let layer: Vec<_> = g.points.iter().filter(|p| p.rho >= h / 10.0 - 1e-15 && p.rho <= h).collect();
    assert!(layer.len() > 20);
    assert!(g.points.iter().all(|p| p.rho >= h / 10.0 - 1e-15));
}

#[test]
fn empty_grid_is_an_error() {
    let b = Domain::ball([10.0, 10.0], 1.0).unwrap();
    assert!(interior_grid(&b, &GridBox::centered([0.0, 0.0], 0.1, 10)).is_err());
}

fn max_nn_spacing(points: &[[f64; 2]]) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| norm2(sub(*p, *q)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn refinement_halves_spacing() {
    let h = Domain::half_space([0.0, 1.0], -5.0).unwrap();
    let a = interior_grid(&h, &GridBox { lo: [0.0, 0.0], hi: [1.0, 1.0], n: [8, 8] }).unwrap();
    let b = interior_grid(&h, &GridBox { lo: [0.0, 0.0], hi: [1.0, 1.0], n: [16, 16] }).unwrap();
    let sa = max_nn_spacing(&a.points.iter().map(|p| p.x).collect::<Vec<_>>());
    let sb = max_nn_spacing(&b.points.iter().map(|p| p.x).collect::<Vec<_>>());
    assert!((sa / sb - 2.0).abs() < 1e-9);
}

#[test]
fn domain_serde_round_trip() {
    let b = Domain::ball([0.0, 1.0], 2.0).unwrap();
    let s = serde_json::to_string(&b).unwrap();
    assert!(s.contains("\"kind\":\"ball\""));
    let back: Domain = serde_json::from_str(&s).unwrap();
    assert_eq!(b, back);
    let h: Domain = serde_json::from_str(r#"{"kind":"half_space","normal":[0,1],"offset":0}"#).unwrap();
    assert_eq!(h.theta, 1.0);
}

fn domains() -> impl Strategy<Value = Domain> {
    prop_oneof![
        (-1.0..1.0f64, 0.1..2.0f64).prop_map(|(c, r)| Domain::ball([c, -c], r).unwrap()),
        (0.0..6.28f64, -1.0..1.0f64).prop_map(|(th, o)| Domain::half_space([th.cos(), th.sin()], o).unwrap()),
    ]
}

proptest! {
    #[test]
    fn rho_is_one_lipschitz(d in domains(), x in prop::array::uniform2(-3.0..3.0f64), y in prop::array::uniform2(-3.0..3.0f64)) {
        let lhs = (d.rho(x) - d.rho(y)).abs();
        prop_assert!(lhs <= norm2(sub(x, y)) + 1e-12);
        prop_assert!(d.rho(x) <= d.rho(y) + norm2(sub(x, y)) + 1e-12);
    }

    #[test]
    fn membership_matches_rho(d in domains(), x in prop::array::uniform2(-3.0..3.0f64)) {
        prop_assert_eq!(d.contains(x), d.rho(x) > 0.0);
    }
}
