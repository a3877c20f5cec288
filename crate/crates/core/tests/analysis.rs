mod oracles;

use geocausal_core::analysis::{leading_canonical_correlation, ols, twfe};
use nalgebra::DMatrix;
use oracles::checks::{
    cca_against_projected_gradient, cca_full_correlation, meta_against_normal_equations, meta_exact_fixture,
    ols_against_normal_equations, random_panel, twfe_against_dummies,
};
use oracles::normal;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn twfe_recovers_beta_and_matches_sandwich() {
    let (exact, bgap, segap) = twfe_against_dummies(100, 21);
    assert!(exact < 1e-8, "noise-free β error {exact:.2e}");
    assert!(bgap < 1e-8, "β gap to dummy regression {bgap:.2e}");
    assert!(segap < 1e-8, "SE gap to sandwich {segap:.2e}");
}

#[test]
fn twfe_refuses_unidentified_designs() {
    let units: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
    let clusters: Vec<String> = ["g1", "g1", "g2", "g2"].iter().map(|s| s.to_string()).collect();
    let y = [1.0, 2.0, 3.0, 4.0];
    assert!(twfe(&y, &[1.0, 1.0, 0.0, 0.0], &units, &[0, 1, 0, 1], &clusters).is_err());
    let one: Vec<String> = vec!["g".into(); 4];
    assert!(twfe(&y, &[0.0, 1.0, 0.0, 0.0], &units, &[0, 1, 0, 1], &one).is_err());
    assert!(twfe(&y, &[0.0, 1.0, 0.0, 0.0], &units, &[0, 0, 0, 0], &clusters).is_err());
}

#[test]
fn meta_regression_matches_normal_equations() {
    let gap = meta_against_normal_equations(100, 22);
    assert!(gap < 1e-8, "gap {gap:.2e}");
    let gap = ols_against_normal_equations(100, 23);
    assert!(gap < 1e-8, "gap {gap:.2e}");
}

#[test]
fn meta_regression_recovers_exact_image_effect() {
    let (coef, adj) = meta_exact_fixture();
    assert!((coef + 2.0).abs() < 1e-10, "has_M {coef}");
    assert!((adj - 1.0).abs() < 1e-10, "adj R² {adj}");
}

#[test]
fn ols_drops_aliased_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = DMatrix::from_fn(30, 4, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
    let mut xa = DMatrix::zeros(30, 5);
    xa.columns_mut(0, 4).copy_from(&x);
    let combo = x.column(1) * 2.0 - x.column(3);
    xa.set_column(4, &combo);
    let y: Vec<f64> = (0..30).map(|_| normal(&mut rng)).collect();
    let names: Vec<String> = (0..5).map(|j| format!("x{j}")).collect();
    let fit = ols(&names, &xa, &y, None).unwrap();
    assert_eq!(fit.dropped, vec!["x4".to_string()]);
    let base = ols(&names[..4], &x, &y, None).unwrap();
    for (a, b) in fit.coef.iter().zip(&base.coef) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn canonical_correlation_of_matching_column_spaces_is_one() {
    let worst = cca_full_correlation(50, 24);
    assert!(worst < 1e-6, "distance from 1: {worst:.2e}");
}

#[test]
fn canonical_correlation_matches_projected_gradient() {
    let gap = cca_against_projected_gradient(20, 25);
    assert!(gap < 1e-3, "gap {gap:.2e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn twfe_ignores_additive_fixed_effects(seed in 0u64..10_000, shift_u in -50.0f64..50.0, shift_t in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_panel(&mut rng, 1.5, 1.0, 0.0);
        let Ok(base) = twfe(&p.y, &p.a, &p.units, &p.periods, &p.clusters) else { return Ok(()); };
        let y2: Vec<f64> = p.y.iter().zip(&p.units).zip(&p.periods)
            .map(|((v, u), &t)| v + if u.ends_with('3') { shift_u } else { 0.0 } + shift_t * t as f64)
            .collect();
        let moved = twfe(&y2, &p.a, &p.units, &p.periods, &p.clusters).unwrap();
        prop_assert!((moved.beta - base.beta).abs() < 1e-8);
        prop_assert!((moved.clustered_se - base.clustered_se).abs() < 1e-8);
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_kept_columns(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(25, 3, |_, j| if j == 0 { 1.0 } else { normal(&mut rng) });
        let y: Vec<f64> = (0..25).map(|_| normal(&mut rng)).collect();
        let names: Vec<String> = (0..3).map(|j| format!("x{j}")).collect();
        let fit = ols(&names, &x, &y, None).unwrap();
        for j in 0..3 {
            let dot: f64 = x.column(j).iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_correlation_is_scale_invariant_and_bounded(seed in 0u64..10_000, s in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(12, 3, |_, _| normal(&mut rng));
        let b = DMatrix::from_fn(12, 2, |_, _| normal(&mut rng));
        let r = leading_canonical_correlation(&a, &b, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let r2 = leading_canonical_correlation(&(&a * s), &b.add_scalar(3.0), 0.1).unwrap();
        prop_assert!((r - r2).abs() < 1e-9);
        let swapped = leading_canonical_correlation(&b, &a, 0.1).unwrap();
        prop_assert!((r - swapped).abs() < 1e-9);
    }
}
