//! End-to-end checks across modules: minimize, lift, classify, persist.

use std::f64::consts::PI;

use cholesteric::io::{read_complex, save_complex};
use cholesteric::lifting::DEFAULT_Q;
use cholesteric::minimize::{multistart_all, select_best};
use cholesteric::{
    classify_e0, energy_eps, energy_gamma, extract_jump_map, init_path, make_grid, minimize_free,
    minimize_winding_class, uniform_twist_field, winding_number, Kind, ModelParams, SolverOptions,
    Strategy, JUMP_COST,
};
use proptest::prelude::*;

#[test]
fn constrained_minimizer_stays_in_its_class() {
    let params = ModelParams::new(0.02, 0.5, 2, 1.0).unwrap();
    let grid = make_grid(801).unwrap();
    for m in 1..=3 {
        let r = minimize_winding_class(m, 0.5, &params, grid, &SolverOptions::default()).unwrap();
        assert!(r.converged, "M={m}");
        assert_eq!(winding_number(&r.field).unwrap(), m);
        let j = extract_jump_map(&r.field, DEFAULT_Q, &params).unwrap();
        assert_eq!(j.jump_count(), 0);
        // Relaxing the modulus can only lower the twist part below its limit value.
        let limit = 0.5 * params.l * (2.0 * PI * (m - 2) as f64 + 1.0).powi(2);
        assert!(r.breakdown.twist <= limit + 1e-9, "M={m}: {} vs {limit}", r.breakdown.twist);
    }
}

#[test]
fn jump_favoured_cell_minimizer_has_one_jump() {
    let (l, alpha) = (2.0, PI);
    let class = classify_e0(l, alpha);
    assert_eq!(class.kind, Kind::OneJumpFamily);
    let params = ModelParams::new(0.005, l, 1, alpha).unwrap();
    let grid = make_grid(4001).unwrap();
    let best = select_best(multistart_all(&params, grid, &Strategy::default_set(&params), &SolverOptions::default()))
        .unwrap();
    assert_eq!(best.jumps, Some(1));
    let j = extract_jump_map(&best.report.field, DEFAULT_Q, &params).unwrap();
    let e0 = energy_gamma(&j, l, params.target_rate()).unwrap();
    assert!((e0 - class.predicted_energy).abs() < 0.05 * class.predicted_energy, "{e0} vs {}", class.predicted_energy);
    assert!(e0 >= JUMP_COST);
}

#[test]
fn fields_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::new(0.05, 1.0, 1, 0.7).unwrap();
    let r = minimize_free(&uniform_twist_field(1, &params, make_grid(201).unwrap()), &params, &SolverOptions::default())
        .unwrap();
    let path = dir.path().join("u.csv");
    save_complex(&r.field, &path).unwrap();
    let back = read_complex(std::fs::File::open(&path).unwrap(), 0.7).unwrap();
    assert_eq!(back, r.field);
    assert_eq!(energy_eps(&back, &params).total, r.total());
}

#[test]
fn initial_path_joins_the_endpoints() {
    let params = ModelParams::new(0.04, 0.1, 1, 0.0).unwrap();
    let grid = make_grid(401).unwrap();
    let opts = SolverOptions::default();
    let a = minimize_free(&uniform_twist_field(0, &params, grid), &params, &opts).unwrap();
    let b = minimize_free(&uniform_twist_field(1, &params, grid), &params, &opts).unwrap();
    let p = init_path(&a.field, &b.field, 9, &params).unwrap();
    assert_eq!(p.len(), 9);
    assert_eq!(p.images()[0], a.field);
    assert_eq!(p.images()[8], b.field);
    let top = p.energies().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(top > a.total().max(b.total()));
    // Changing class forces some image through zero modulus.
    let deepest = p.images().iter().map(|u| u.min_modulus()).fold(f64::INFINITY, f64::min);
    assert!(deepest < 0.05, "{deepest}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimization_never_raises_energy(m in -1i64..=3, alpha in 0.0..6.2f64, l in 0.1..2.0f64) {
        let params = ModelParams::new(0.05, l, 1, alpha).unwrap();
        let u = uniform_twist_field(m, &params, make_grid(101).unwrap());
        let r = minimize_free(&u, &params, &SolverOptions::default()).unwrap();
        prop_assert!(r.total() <= energy_eps(&u, &params).total + 1e-12);
        prop_assert!(r.is_monotone());
    }

    #[test]
    fn classification_energy_is_the_lowest_limit_branch(l in 0.02..2.0f64, alpha in 0.1..6.18f64) {
        let c = classify_e0(l, alpha);
        let branch = |k: f64| 0.5 * l * (2.0 * PI * k + alpha).powi(2);
        let lowest = (-1..=1).map(|k| branch(k as f64)).fold(JUMP_COST, f64::min);
        prop_assert!((c.predicted_energy - lowest).abs() < 1e-12);
    }
}
