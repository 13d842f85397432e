use std::sync::Arc;

use proptest::prelude::*;
use yieldnet::baselines::*;
use yieldnet::data::{CountyYearRecord, Crop, SequenceSample};
use yieldnet::experiments::{pearson_corr, rmse};
use yieldnet::features::InputTransform;

fn columns_to_rows(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..cols[0].len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

#[test]
fn lasso_full_shrinkage() {
    let x = columns_to_rows(&[vec![1.0, -1.0, 0.5, -0.5], vec![0.3, 0.1, -0.2, -0.2]]);
    let y = [3.0, 1.0, 4.0, 1.5];
    let m = fit_lasso(&x, &y, 1e6);
    assert!(m.coefficients.iter().all(|&b| b == 0.0));
    assert!((m.intercept - 2.375).abs() < 1e-12);
}

#[test]
fn lasso_matches_ols_on_orthonormal_columns() {
    let c1 = vec![1.0, 1.0, -1.0, -1.0];
    let c2 = vec![1.0, -1.0, 1.0, -1.0];
    let y = [3.0, 1.0, -2.0, 5.0];
    let x = columns_to_rows(&[c1.clone(), c2.clone()]);
    let m = fit_lasso(&x, &y, 0.0);
    let ols = |c: &[f64]| c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / 4.0;
    assert!((m.coefficients[0] - ols(&c1)).abs() < 1e-8);
    assert!((m.coefficients[1] - ols(&c2)).abs() < 1e-8);
    assert!((m.intercept - 1.75).abs() < 1e-8);
}

#[test]
fn lasso_soft_thresholds_a_single_feature() {
    let x: Vec<Vec<f64>> = [1.0, -1.0, 1.0, -1.0].iter().map(|&v| vec![v]).collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0]).collect();
    let m = fit_lasso(&x, &y, 0.5);
    assert!((m.coefficients[0] - 1.5).abs() < 1e-8);
    assert!(m.intercept.abs() < 1e-12);
}

#[test]
fn lasso_drops_constant_columns() {
    let x = columns_to_rows(&[vec![1.0, -1.0, 1.0, -1.0], vec![7.0; 4]]);
    let m = fit_lasso(&x, &[1.0, 0.0, 1.0, 0.0], 0.0);
    assert_eq!(m.coefficients[1], 0.0);
    assert!((m.coefficients[0] - 0.5).abs() < 1e-8);
}

fn design() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (3usize..12, 1usize..5).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p), n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn lasso_objective_never_rises((x, y) in design(), lambda in 0.0f64..2.0) {
        let (_, trace) = fit_lasso_traced(&x, &y, lambda, true);
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn lasso_l1_norm_shrinks_with_lambda((x, y) in design(), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = fit_lasso(&x, &y, lo).l1_norm();
        let large = fit_lasso(&x, &y, hi).l1_norm();
        prop_assert!(small >= large - 1e-6 * (1.0 + small), "{small} < {large}");
    }
}

#[test]
fn forest_on_constant_targets_is_all_stumps() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
    let f = fit_random_forest(&x, &[4.5; 20], &ForestConfig::default());
    assert_eq!(f.trees.len(), 50);
    for t in &f.trees {
        assert_eq!(t.nodes, vec![Node::Leaf { value: 4.5 }]);
    }
    assert_eq!(f.predict_row(&[100.0, -3.0]), 4.5);
}

#[test]
fn single_unpruned_tree_memorizes() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin()]).collect();
    let y: Vec<f64> = (0..30).map(|i| ((i * 13) % 11) as f64).collect();
    let cfg = ForestConfig {
        n_trees: 1,
        max_depth: None,
        min_leaf: 1,
        bootstrap: false,
        ..Default::default()
    };
    let f = fit_random_forest(&x, &y, &cfg);
    let pred: Vec<f64> = x.iter().map(|r| f.predict_row(r)).collect();
    assert_eq!(rmse(&pred, &y), 0.0);
}

#[test]
fn step_function_needs_one_split() {
    let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0 + 0.05]).collect();
    let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.5 { 1.0 } else { 0.0 }).collect();
    let cfg = ForestConfig {
        n_trees: 1,
        bootstrap: false,
        max_features: Some(1),
        ..Default::default()
    };
    let f = fit_random_forest(&x, &y, &cfg);
    assert_eq!(f.trees[0].depth(), 1);
    match f.trees[0].nodes[0] {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(feature, 0);
            assert!(threshold > 0.45 && threshold < 0.55);
        }
        other => panic!("expected a split, got {other:?}"),
    }
    let pred: Vec<f64> = x.iter().map(|r| f.predict_row(r)).collect();
    assert_eq!(pred, y);
}

fn noisy_table(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| next()).collect()).collect();
    let y = x.iter().map(|r| 3.0 * r[0] - r[1 % p] + next()).collect();
    (x, y)
}

#[test]
fn default_forest_respects_the_depth_limit() {
    let (x, y) = noisy_table(400, 4, 1);
    let f = fit_random_forest(&x, &y, &ForestConfig::default());
    assert!(f.trees.iter().all(|t| t.depth() <= 10));
    assert!(f.trees.iter().any(|t| t.depth() >= 5));
}

#[test]
fn forest_is_seed_deterministic() {
    let (x, y) = noisy_table(80, 3, 2);
    let cfg = ForestConfig { seed: 5, ..Default::default() };
    assert_eq!(fit_random_forest(&x, &y, &cfg), fit_random_forest(&x, &y, &cfg));
    let other = ForestConfig { seed: 6, ..Default::default() };
    assert_ne!(fit_random_forest(&x, &y, &cfg), fit_random_forest(&x, &y, &other));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn forest_prediction_ignores_tree_order(seed in 0u64..1000, shift in 1usize..49) {
        let (x, y) = noisy_table(40, 3, seed);
        let f = fit_random_forest(&x, &y, &ForestConfig { seed, ..Default::default() });
        let mut rotated = f.clone();
        rotated.trees.rotate_left(shift);
        rotated.trees.reverse();
        for row in x.iter().take(10) {
            let (a, b) = (f.predict_row(row), rotated.predict_row(row));
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn average_baseline_examples() {
    let m = average_baseline(&[10.0, 20.0]);
    assert_eq!(m.value, 15.0);
    let pred = FlatModel::Average(m).predict(&[vec![1.0], vec![99.0], vec![-5.0]]);
    assert_eq!(pred, vec![15.0; 3]);
    let truth = [12.0, 15.0, 21.0];
    assert_eq!(pearson_corr(&pred, &truth), 0.0);
    let by_hand = ((9.0 + 0.0 + 36.0) / 3.0f64).sqrt();
    assert!((rmse(&pred, &truth) - by_hand).abs() < 1e-12);
}

#[test]
#[should_panic]
fn average_of_nothing_panics() {
    average_baseline(&[]);
}

fn filled_sample(scale: f64) -> SequenceSample {
    let mut r = CountyYearRecord::zeroed(3, 1, 1999, Crop::Corn, 15);
    for (i, v) in r.weather.iter_mut().enumerate() {
        *v = scale * i as f64;
    }
    for (i, v) in r.soil_profile.iter_mut().enumerate() {
        *v = scale * (1000 + i) as f64;
    }
    for (i, v) in r.soil_surface.iter_mut().enumerate() {
        *v = scale * (2000 + i) as f64;
    }
    for (i, v) in r.management.iter_mut().enumerate() {
        *v = scale * (3000 + i) as f64;
    }
    SequenceSample::new(vec![Arc::new(r)], vec![scale * 77.0], false, None)
}

#[test]
fn flattening_order_and_length() {
    let v = flatten_features(&filled_sample(1.0));
    assert_eq!(v.len(), 312 + 90 + 4 + 15 + 1);
    assert_eq!(v[0], 0.0);
    assert_eq!(v[311], 311.0);
    assert_eq!(v[312], 1000.0);
    assert_eq!(v[402], 2000.0);
    assert_eq!(v[406], 3000.0);
    assert_eq!(v[421], 77.0);
    assert_eq!(v, flatten_features(&filled_sample(1.0)));
    assert!(flatten_features(&filled_sample(0.0)).iter().all(|&x| x == 0.0));
}

#[test]
#[should_panic(expected = "unfilled")]
fn flattening_rejects_missing_values() {
    let mut r = CountyYearRecord::zeroed(3, 1, 1999, Crop::Corn, 15);
    r.soil_profile[4] = f64::NAN;
    flatten_features(&SequenceSample::new(vec![Arc::new(r)], vec![1.0], false, None));
}

#[test]
fn flat_models_round_trip_through_containers() {
    let (x, y) = noisy_table(60, 3, 9);
    let transform = InputTransform::fit(x.iter().map(Vec::as_slice), 3);
    let z: Vec<Vec<f64>> = x.iter().map(|r| transform.apply(r)).collect();
    let models = [
        FlatModel::Lasso { model: fit_lasso(&z, &y, 0.3), transform },
        FlatModel::Forest(fit_random_forest(&x, &y, &ForestConfig { n_trees: 5, ..Default::default() })),
        FlatModel::Average(average_baseline(&y)),
    ];
    for m in models {
        let bytes = m.to_container().to_bytes();
        let back = yieldnet::model::Container::read_from(&mut bytes.as_slice()).unwrap();
        let back = FlatModel::from_container(&back).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&x), m.predict(&x));
    }
}
