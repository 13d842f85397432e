use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::pipeline::{cnn_config, fit_model, Fitted, ModelKind};
use super::{config_hash, Arm, ExperimentConfig, ExperimentError, ExperimentResult, PredictionRow, SplitMetrics};
use crate::attribution::{guided_attribute, select_top_fraction};
use crate::data::{assemble_sequences, substitute_weather, Dataset, Phase, Purpose, SequenceSample};
use crate::features::{FeatureGroup, FeatureLayout};
use crate::model::CnnRnnConfig;

/// Training and validation samples for one target year.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<SequenceSample>,
    pub validation: Vec<SequenceSample>,
    /// Training samples of the final training year.
    pub monitor: Vec<SequenceSample>,
    pub skipped: usize,
}

/// Train on target years `< validation_year`, validate at it. Average
/// yields come from `averages` (every county of the full data set) and
/// never include the validation year.
pub fn temporal_splits(
    train_data: &Dataset,
    validation_data: &Dataset,
    averages: &Dataset,
    k: usize,
    validation_year: i32,
) -> Result<Splits, ExperimentError> {
    let first = averages
        .years()
        .first()
        .copied()
        .ok_or_else(|| ExperimentError::Invalid("data set is empty".into()))?;
    let first_target = first + k as i32;
    if validation_year <= first_target {
        return Err(ExperimentError::InsufficientHistory(format!(
            "validation year {validation_year} needs training years after {first_target} (first year {first}, k={k})"
        )));
    }
    let avg = averages.avg_yields(Some(validation_year));
    let years: Vec<i32> = (first_target..validation_year).collect();
    let train = assemble_sequences(train_data, k, &years, Phase::Train, &avg);
    let validation = assemble_sequences(validation_data, k, &[validation_year], Phase::Test, &avg);
    if train.samples.is_empty() {
        return Err(ExperimentError::InsufficientHistory(format!(
            "no complete training windows before {validation_year}"
        )));
    }
    if validation.samples.is_empty() {
        return Err(ExperimentError::Invalid(format!(
            "no complete validation windows at {validation_year}"
        )));
    }
    let monitor = train
        .samples
        .iter()
        .filter(|s| s.target_year == validation_year - 1)
        .cloned()
        .collect();
    Ok(Splits {
        train: train.samples,
        validation: validation.samples,
        monitor,
        skipped: train.skipped + validation.skipped,
    })
}

/// Predicts `samples` and scores those with ground truth.
pub fn evaluate(model: &Fitted, samples: &[SequenceSample]) -> (Option<SplitMetrics>, Vec<PredictionRow>) {
    let preds = model.predict(samples);
    let rows: Vec<PredictionRow> = samples
        .iter()
        .zip(&preds)
        .map(|(s, &p)| PredictionRow {
            county_id: s.county_id,
            year: s.target_year,
            truth: s.target(Purpose::Metric),
            prediction: p,
        })
        .collect();
    (score(&rows), rows)
}

fn score(rows: &[PredictionRow]) -> Option<SplitMetrics> {
    let (p, t): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.truth.map(|t| (r.prediction, t))).unzip();
    (!p.is_empty()).then(|| SplitMetrics::compute(&p, &t))
}

/// Runs `f` with `years` sealed against fitting reads and fails if any
/// such read happened.
fn sealed<T>(dataset: &Dataset, years: &[i32], f: impl FnOnce() -> Result<T, ExperimentError>) -> Result<T, ExperimentError> {
    let audit = dataset.audit();
    let before = audit.violations().len();
    for &y in years {
        audit.seal(y);
    }
    let out = f();
    audit.unseal_all();
    let violations = audit.violations();
    if violations.len() > before {
        let v = &violations[before];
        return Err(ExperimentError::Audit(format!(
            "{} fitting reads of sealed targets, first county {} year {}",
            violations.len() - before,
            v.county_id,
            v.year
        )));
    }
    out
}

fn train_arm(
    label: &str,
    kind: ModelKind,
    splits: &Splits,
    config: &ExperimentConfig,
    cnn: &CnnRnnConfig,
    mask: Option<&[bool]>,
) -> Result<Arm, ExperimentError> {
    let monitor = config.monitor.then_some(splits.monitor.as_slice());
    let fit = fit_model(kind, &splits.train, monitor, config, cnn, mask)?;
    let (train, _) = evaluate(&fit.model, &splits.train);
    let (validation, predictions) = evaluate(&fit.model, &splits.validation);
    let validation = validation.ok_or_else(|| ExperimentError::Invalid("no validation sample has ground truth".into()))?;
    info!("{label}: validation RMSE {:.4}", validation.rmse);
    Ok(Arm {
        label: label.to_string(),
        kind,
        train,
        validation,
        predictions,
        model: Some(fit.model),
        curve: fit.curve,
    })
}

fn finish(
    experiment: &str,
    parameters: serde_json::Value,
    config: &ExperimentConfig,
    arms: Vec<Arm>,
    started: Instant,
) -> ExperimentResult {
    ExperimentResult {
        experiment: experiment.to_string(),
        config_hash: config_hash(experiment, &parameters, config),
        seed: config.seed,
        parameters,
        arms,
        sweep: None,
        attribution: None,
        runtime: started.elapsed(),
    }
}

/// Trains on every year before `validation_year` and validates at it.
pub fn temporal_holdout(
    dataset: &Dataset,
    validation_year: i32,
    kind: ModelKind,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let started = Instant::now();
    let cnn = cnn_config(config, dataset.layout(), dataset.crop);
    let arm = sealed(dataset, &[validation_year], || {
        let splits = temporal_splits(dataset, dataset, dataset, config.k, validation_year)?;
        train_arm(kind.name(), kind, &splits, config, &cnn, None)
    })?;
    let params = json!({ "crop": dataset.crop, "validation_year": validation_year, "model": kind });
    Ok(finish("holdout", params, config, vec![arm], started))
}

/// Seeded partition of `counties` into `folds` groups whose sizes differ by
/// at most one.
pub fn location_folds(counties: &[u32], folds: usize, seed: u64) -> Result<Vec<Vec<u32>>, ExperimentError> {
    if folds == 0 || counties.len() < folds {
        return Err(ExperimentError::Invalid(format!(
            "{} counties cannot fill {folds} non-empty folds",
            counties.len()
        )));
    }
    let mut shuffled = counties.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, c) in shuffled.into_iter().enumerate() {
        out[i % folds].push(c);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Leave-location-out cross-validation at `target_year`: each fold trains on
/// the remaining counties' years before it. The first arm pools all folds.
pub fn kfold_location_cv(
    dataset: &Dataset,
    folds: usize,
    target_year: i32,
    kind: ModelKind,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let started = Instant::now();
    let cnn = cnn_config(config, dataset.layout(), dataset.crop);
    let arms = sealed(dataset, &[target_year], || {
        let candidates = temporal_splits(dataset, dataset, dataset, config.k, target_year)?;
        let with_truth: Vec<u32> = candidates
            .validation
            .iter()
            .filter(|s| s.last().yield_bu_acre.is_some())
            .map(|s| s.county_id)
            .collect();
        let partition = location_folds(&with_truth, folds, config.seed)?;
        let fold_arms = partition
            .par_iter()
            .enumerate()
            .map(|(i, fold)| {
                let held: BTreeSet<u32> = fold.iter().copied().collect();
                let train_data = dataset.filtered(|r| !held.contains(&r.county_id));
                let val_data = dataset.filtered(|r| held.contains(&r.county_id));
                let splits = temporal_splits(&train_data, &val_data, dataset, config.k, target_year)?;
                train_arm(&format!("fold{}", i + 1), kind, &splits, config, &cnn, None)
            })
            .collect::<Result<Vec<Arm>, ExperimentError>>()?;
        let mut pooled_rows: Vec<PredictionRow> = fold_arms.iter().flat_map(|a| a.predictions.clone()).collect();
        pooled_rows.sort_by_key(|r| r.county_id);
        let validation = score(&pooled_rows).expect("folds have ground truth");
        let mut arms = vec![Arm {
            label: "pooled".into(),
            kind,
            train: None,
            validation,
            predictions: pooled_rows,
            model: None,
            curve: None,
        }];
        arms.extend(fold_arms);
        Ok(arms)
    })?;
    let params = json!({ "crop": dataset.crop, "target_year": target_year, "folds": folds, "model": kind });
    Ok(finish("cv", params, config, arms, started))
}

/// Input source kept by an ablation arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "W")]
    Weather,
    #[serde(rename = "S")]
    Soil,
    #[serde(rename = "M")]
    Management,
    #[serde(rename = "AVG")]
    Average,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Weather, Source::Soil, Source::Management, Source::Average];

    pub fn code(self) -> &'static str {
        match self {
            Source::Weather => "W",
            Source::Soil => "S",
            Source::Management => "M",
            Source::Average => "AVG",
        }
    }

    /// Keep-mask over the feature layout; `None` for the average model.
    pub fn mask(self, layout: FeatureLayout) -> Option<Vec<bool>> {
        let groups: &[FeatureGroup] = match self {
            Source::Weather => &[FeatureGroup::Weather],
            Source::Soil => &[FeatureGroup::SoilDepth, FeatureGroup::SoilSurface],
            Source::Management => &[FeatureGroup::Management],
            Source::Average => return None,
        };
        Some(
            (0..layout.len())
                .map(|i| {
                    let g = layout.group(i);
                    g == FeatureGroup::AvgYield || groups.contains(&g)
                })
                .collect(),
        )
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Source::ALL
            .into_iter()
            .find(|src| src.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown source '{s}' (expected W, S, M or AVG)"))
    }
}

/// CNN-RNN restricted to one input source (plus average yield), or the
/// average model for [`Source::Average`]. All arms share one split.
pub fn ablation_run(
    dataset: &Dataset,
    sources: &[Source],
    validation_year: i32,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    if sources.is_empty() {
        return Err(ExperimentError::Invalid("no ablation source given".into()));
    }
    let started = Instant::now();
    let cnn = cnn_config(config, dataset.layout(), dataset.crop);
    let layout = dataset.layout();
    let arms = sealed(dataset, &[validation_year], || {
        let splits = temporal_splits(dataset, dataset, dataset, config.k, validation_year)?;
        sources
            .par_iter()
            .map(|&src| {
                let label = format!("cnn-rnn-{}", src.code());
                match src.mask(layout) {
                    Some(mask) => train_arm(&label, ModelKind::CnnRnn, &splits, config, &cnn, Some(&mask)),
                    None => train_arm("average", ModelKind::Average, &splits, config, &cnn, None),
                }
            })
            .collect::<Result<Vec<Arm>, ExperimentError>>()
    })?;
    let params = json!({
        "crop": dataset.crop,
        "validation_year": validation_year,
        "sources": sources,
    });
    Ok(finish("ablation", params, config, arms, started))
}

/// Selects features by guided attribution on `select_year` using a model
/// trained on earlier years, then retrains the CNN-RNN on each top fraction
/// and validates at `eval_year`.
pub fn feature_subset_run(
    dataset: &Dataset,
    select_year: i32,
    eval_year: i32,
    fractions: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    if select_year >= eval_year {
        return Err(ExperimentError::Invalid(format!(
            "selection year {select_year} must precede evaluation year {eval_year}"
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(ExperimentError::Invalid(format!("fraction {f} outside (0, 1]")));
    }
    let started = Instant::now();
    let cnn = cnn_config(config, dataset.layout(), dataset.crop);
    let before_eval = dataset.filtered(|r| r.year < eval_year);
    let (report, arms) = sealed(dataset, &[select_year, eval_year], || {
        let select_splits = temporal_splits(&before_eval, &before_eval, &before_eval, config.k, select_year)?;
        let selector = fit_model(ModelKind::CnnRnn, &select_splits.train, None, config, &cnn, None)?;
        let Fitted::CnnRnn(selector) = selector.model else { unreachable!() };
        let report = guided_attribute(&selector, &select_splits.validation, config.attribution_source);
        Ok(report)
    })
    .and_then(|report| {
        sealed(dataset, &[eval_year], || {
            let splits = temporal_splits(dataset, dataset, dataset, config.k, eval_year)?;
            let arms = fractions
                .par_iter()
                .map(|&f| {
                    let mask = select_top_fraction(&report, f);
                    train_arm(&format!("fraction-{f:.2}"), ModelKind::CnnRnn, &splits, config, &cnn, Some(&mask))
                })
                .collect::<Result<Vec<Arm>, ExperimentError>>()?;
            Ok((report, arms))
        })
    })?;
    let params = json!({
        "crop": dataset.crop,
        "select_year": select_year,
        "eval_year": eval_year,
        "fractions": fractions,
    });
    let mut result = finish("subset", params, config, arms, started);
    result.attribution = Some(report);
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub weeks_updated: usize,
    pub rmse: f64,
    pub mean_pred: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Counties without prior-year weather.
    pub skipped: usize,
}

/// Starts from prior-year weather in `weeks`, then restores the true
/// weather `step` weeks at a time in calendar order, re-predicting after
/// each update.
pub fn weather_sweep(
    model: &Fitted,
    dataset: &Dataset,
    samples: &[SequenceSample],
    weeks: &[usize],
    step: usize,
) -> Result<Sweep, ExperimentError> {
    if step == 0 {
        return Err(ExperimentError::Invalid("update step must be positive".into()));
    }
    let mut usable = Vec::new();
    let mut skipped = 0;
    for s in samples {
        if s.last().yield_bu_acre.is_none() {
            continue;
        }
        match dataset.get(s.county_id, s.target_year - 1) {
            Some(prior) => usable.push((s, prior)),
            None => {
                warn!("county {} has no weather for {}; skipped", s.county_id, s.target_year - 1);
                skipped += 1;
            }
        }
    }
    if usable.is_empty() {
        return Err(ExperimentError::Invalid("no sample can be swept".into()));
    }
    let truth: Vec<f64> = usable.iter().map(|(s, _)| s.target(Purpose::Metric).unwrap()).collect();
    let mut counts: Vec<usize> = (0..=weeks.len()).step_by(step).collect();
    if counts.last() != Some(&weeks.len()) {
        counts.push(weeks.len());
    }
    let mut rows = Vec::with_capacity(counts.len());
    for u in counts {
        let modified: Vec<SequenceSample> = usable
            .iter()
            .map(|(s, prior)| substitute_weather(s, prior, &weeks[u..]).expect("same county"))
            .collect();
        let preds = model.predict(&modified);
        rows.push(SweepRow {
            weeks_updated: u,
            rmse: super::rmse(&preds, &truth),
            mean_pred: preds.iter().sum::<f64>() / preds.len() as f64,
        });
    }
    Ok(Sweep { rows, skipped })
}

/// Trains the CNN-RNN as in [`temporal_holdout`], then runs
/// [`weather_sweep`] over the validation samples.
pub fn weather_sweep_run(
    dataset: &Dataset,
    target_year: i32,
    weeks: &[usize],
    step: usize,
    pretrained: Option<&Fitted>,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let started = Instant::now();
    let cnn = cnn_config(config, dataset.layout(), dataset.crop);
    let (arm, sweep) = sealed(dataset, &[target_year], || {
        let splits = temporal_splits(dataset, dataset, dataset, config.k, target_year)?;
        let arm = match pretrained {
            Some(model) => {
                let (train, _) = evaluate(model, &splits.train);
                let (validation, predictions) = evaluate(model, &splits.validation);
                Arm {
                    label: model.kind().name().to_string(),
                    kind: model.kind(),
                    train,
                    validation: validation
                        .ok_or_else(|| ExperimentError::Invalid("no validation sample has ground truth".into()))?,
                    predictions,
                    model: None,
                    curve: None,
                }
            }
            None => train_arm("cnn-rnn", ModelKind::CnnRnn, &splits, config, &cnn, None)?,
        };
        let model = pretrained.or(arm.model.as_ref()).expect("a model");
        let sweep = weather_sweep(model, dataset, &splits.validation, weeks, step)?;
        Ok((arm, sweep))
    })?;
    let params = json!({
        "crop": dataset.crop,
        "target_year": target_year,
        "weeks": weeks,
        "step": step,
        "pretrained": pretrained.is_some(),
    });
    let mut result = finish("weather-sweep", params, config, vec![arm], started);
    result.sweep = Some(sweep);
    Ok(result)
}
