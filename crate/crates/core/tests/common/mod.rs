#![allow(dead_code)]

use yieldnet::data::{assemble_sequences, gen_synthetic, prepare, Dataset, Phase, SequenceSample, SyntheticSpec};
use yieldnet::experiments::{fit_sequence_transform, ExperimentConfig};
use yieldnet::features::TargetScale;
use yieldnet::model::{CnnRnnConfig, CnnRnnModel, ConvSpec};
use yieldnet::training::SequenceData;

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        counties: 12,
        states: 3,
        start_year: 1990,
        end_year: 1999,
        seed,
        ..Default::default()
    }
}

pub fn small_dataset(seed: u64) -> Dataset {
    let spec = small_spec(seed);
    prepare(spec.crop, gen_synthetic(&spec).unwrap().records).unwrap()
}

pub fn tiny_config(k: usize) -> CnnRnnConfig {
    CnnRnnConfig {
        k,
        lstm_hidden: 6,
        fc_w_out: 5,
        fc_s_out: 4,
        management_dim: 15,
        weather_conv: vec![ConvSpec::pooled(3); 4],
        soil_conv: vec![ConvSpec::pooled(3), ConvSpec::pooled(3), ConvSpec::plain(3), ConvSpec::plain(3)],
    }
}

pub fn tiny_experiment(iters: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        k: 2,
        cnn: Some(tiny_config(2)),
        ..Default::default()
    };
    c.train.max_iters = iters;
    c.train.log_every = 10;
    c.forest.n_trees = 5;
    c
}

pub fn train_samples(ds: &Dataset, k: usize, before: i32) -> Vec<SequenceSample> {
    let years: Vec<i32> = ds.years().into_iter().filter(|&y| y < before).collect();
    let avg = ds.avg_yields(Some(before));
    assemble_sequences(ds, k, &years, Phase::Train, &avg).samples
}

fn standardized(model: &mut CnnRnnModel, samples: &[SequenceSample]) -> SequenceData {
    model.transform = fit_sequence_transform(samples, model.layout());
    let targets: Vec<f64> = samples
        .iter()
        .map(|s| s.target(yieldnet::data::Purpose::Fit).unwrap())
        .collect();
    model.target_scale = TargetScale::fit(&targets);
    SequenceData::new(model, samples)
}

/// Tiny model with standardized inputs over a small synthetic data set.
pub fn small_training_set(seed: u64) -> (CnnRnnModel, SequenceData) {
    let ds = small_dataset(seed);
    let samples = train_samples(&ds, 2, 1999);
    let mut model = CnnRnnModel::build(tiny_config(2), seed).unwrap();
    let data = standardized(&mut model, &samples);
    (model, data)
}

/// Default architecture on a fixture whose yield is linear in its inputs.
pub fn linear_training_set() -> (CnnRnnModel, SequenceData) {
    let spec = SyntheticSpec {
        gamma: 0.0,
        ..small_spec(5)
    };
    let ds = prepare(spec.crop, gen_synthetic(&spec).unwrap().records).unwrap();
    let samples = train_samples(&ds, 5, 2000);
    let mut model = CnnRnnModel::build(CnnRnnConfig::default(), 0).unwrap();
    let data = standardized(&mut model, &samples);
    (model, data)
}

/// Tiny untrained model with a fitted transform, plus its samples.
pub fn tiny_model(seed: u64) -> (CnnRnnModel, Vec<SequenceSample>) {
    let ds = small_dataset(seed);
    let samples = train_samples(&ds, 2, 1999);
    let mut model = CnnRnnModel::build(tiny_config(2), seed).unwrap();
    standardized(&mut model, &samples);
    (model, samples)
}
