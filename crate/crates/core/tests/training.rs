mod common;

use proptest::prelude::*;
use yieldnet::model::DfnnModel;
use yieldnet::training::*;
use yieldnet_autodiff::Tensor;

#[test]
fn mse_examples() {
    assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(mse(&[1.0, 2.0], &[3.0, 2.0]), 2.0);
}

#[test]
#[should_panic(expected = "empty")]
fn mse_of_nothing_panics() {
    mse(&[], &[]);
}

proptest! {
    #[test]
    fn mse_is_homogeneous(xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..20), c in -10.0f64..10.0) {
        let (p, t): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
        let base = mse(&p, &t);
        let scaled = mse(&p.iter().map(|v| v * c).collect::<Vec<_>>(), &t.iter().map(|v| v * c).collect::<Vec<_>>());
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
    }
}

#[test]
fn schedule_halves_every_sixty_thousand() {
    let c = TrainConfig::default();
    assert_eq!(lr_schedule(0, &c), 3e-4);
    assert_eq!(lr_schedule(59_999, &c), 3e-4);
    assert_eq!(lr_schedule(60_000, &c), 1.5e-4);
    assert_eq!(lr_schedule(120_000, &c), 7.5e-5);
}

#[test]
fn default_config_values() {
    let c = TrainConfig::default();
    assert_eq!((c.batch_size, c.max_iters, c.halve_every), (25, 20_000, 60_000));
    assert!(!c.all_step_loss);
}

#[test]
fn adam_ignores_a_zero_first_gradient() {
    let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
    let g = vec![Tensor::zeros(&[2])];
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &g, &mut s, 0.1).unwrap();
    assert_eq!(p[0].data(), &[1.0, -2.0]);
    assert_eq!(s.t, 1);
}

#[test]
fn adam_first_step_closed_form() {
    let mut p = vec![Tensor::scalar(1.0)];
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::scalar(4.0)], &mut s, 0.001).unwrap();
    let expected = 1.0 - 0.001 * 4.0 / (4.0 + 1e-8);
    assert!((p[0].item() - expected).abs() < 1e-15);
    assert!((p[0].item() - 0.999).abs() < 1e-9);
}

proptest! {
    #[test]
    fn adam_first_step_is_odd(g in -50.0f64..50.0, lr in 1e-5f64..1e-1) {
        let step = |g: f64| {
            let mut p = vec![Tensor::scalar(0.0)];
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::scalar(g)], &mut s, lr).unwrap();
            p[0].item()
        };
        prop_assert_eq!(step(g), -step(-g));
    }

    #[test]
    fn adam_descends_a_convex_quadratic(
        x in prop::collection::vec(-10.0f64..10.0, 1..6),
        lr in 1e-6f64..1e-2,
    ) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        // f(x) = Σ (i+1)·x_i², gradient 2(i+1)x_i.
        let f = |v: &[f64]| v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum::<f64>();
        let grad: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect();
        let mut p = vec![Tensor::vector(x.clone())];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(grad)], &mut s, lr).unwrap();
        prop_assert!(f(p[0].data()) < f(&x));
    }
}

#[test]
fn adam_rejects_non_finite_gradients_untouched() {
    let mut p = vec![Tensor::vector(vec![1.0, 2.0]), Tensor::scalar(3.0)];
    let mut s = AdamState::new(&p);
    let before = p.clone();
    let err = adam_step(&mut p, &[Tensor::vector(vec![1.0, 1.0]), Tensor::scalar(f64::NAN)], &mut s, 0.1).unwrap_err();
    assert_eq!(err.param, 1);
    assert_eq!(p, before);
    assert_eq!(s.t, 0);
}

#[test]
fn xavier_draws_stay_in_bounds() {
    let w = xavier_init(20, 30, 10_000, 9);
    let bound = (6.0f64 / 50.0).sqrt();
    assert!(w.iter().all(|v| v.abs() <= bound));
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max > 0.99 * bound);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let (model, data) = common::small_training_set(3);
    let before = model.params().to_vec();
    let cfg = TrainConfig {
        max_iters: 0,
        ..Default::default()
    };
    let trained = train(model, &data, None, &cfg).unwrap();
    assert_eq!(trained.model.params(), before.as_slice());
    assert!(trained.curve.rows.is_empty());
}

#[test]
fn training_is_deterministic_per_seed() {
    let run = |seed| {
        let (model, data) = common::small_training_set(3);
        let cfg = TrainConfig {
            max_iters: 15,
            seed,
            log_every: 5,
            ..Default::default()
        };
        train(model, &data, None, &cfg).unwrap()
    };
    let a = run(1);
    let b = run(1);
    let c = run(2);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.curve, b.curve);
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn empty_data_and_bad_configs_are_rejected() {
    let (model, mut data) = common::small_training_set(3);
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(matches!(train(model.clone(), &data, None, &bad), Err(TrainError::InvalidConfig(_))));
    data.prepared.clear();
    data.targets.clear();
    assert!(matches!(train(model, &data, None, &TrainConfig::default()), Err(TrainError::EmptyDataset)));
}

#[test]
fn non_finite_loss_aborts_with_the_last_good_model() {
    let (mut model, data) = common::small_training_set(3);
    model.target_scale.sd = f64::INFINITY;
    let cfg = TrainConfig {
        max_iters: 5,
        ..Default::default()
    };
    match train(model.clone(), &data, None, &cfg) {
        Err(TrainError::NonFinite { iteration, last_good, .. }) => {
            assert_eq!(iteration, 0);
            assert_eq!(last_good.params(), model.params());
        }
        other => panic!("expected a non-finite abort, got {:?}", other.err()),
    }
}

#[test]
fn curve_rows_and_monitor() {
    let (model, data) = common::small_training_set(3);
    let (_, monitor) = common::small_training_set(4);
    let cfg = TrainConfig {
        max_iters: 10,
        log_every: 4,
        ..Default::default()
    };
    let trained = train(model, &data, Some(&monitor), &cfg).unwrap();
    let iters: Vec<u64> = trained.curve.rows.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 4, 8, 9]);
    assert!(trained.curve.rows.iter().all(|r| r.monitor_loss.is_some()));
    let csv = trained.curve.to_csv();
    assert!(csv.starts_with("iter,lr,train_loss,monitor_loss\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn all_step_loss_trains() {
    let (model, data) = common::small_training_set(3);
    let cfg = TrainConfig {
        max_iters: 5,
        all_step_loss: true,
        ..Default::default()
    };
    let trained = train(model.clone(), &data, None, &cfg).unwrap();
    assert_ne!(trained.model.params(), model.params());
}

#[test]
fn dfnn_training_updates_running_statistics() {
    let mut model = DfnnModel::build(4, 0);
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 7) as f64, 1.0, -(i as f64)]).collect();
    let targets: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
    model.transform = yieldnet::features::InputTransform::fit(rows.iter().map(Vec::as_slice), 4);
    let data = FlatData::new(&model, &rows, targets);
    let cfg = TrainConfig {
        max_iters: 30,
        batch_size: 8,
        ..Default::default()
    };
    let before = model.running_mean.clone();
    let trained = train(model, &data, None, &cfg).unwrap();
    assert_ne!(trained.model.running_mean, before);
    assert!(trained.model.running_var.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn loss_falls_on_a_linear_fixture() {
    let (model, data) = common::linear_training_set();
    let cfg = TrainConfig {
        max_iters: 2000,
        ..Default::default()
    };
    let curve = train(model, &data, None, &cfg).unwrap().curve;
    let first = curve.rows.first().unwrap().train_loss;
    let last = curve.rows.last().unwrap().train_loss;
    assert!(last < 0.1 * first, "first {first} last {last}");
}
