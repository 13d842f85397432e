use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::{rmse, ExperimentConfig, ExperimentError};
use crate::attribution::masked_transform;
use crate::baselines::{average_baseline, fit_lasso, fit_random_forest, flatten_features, FlatModel};
use crate::data::{Purpose, SequenceSample};
use crate::features::{FeatureLayout, InputTransform, TargetScale};
use crate::model::{CnnRnnConfig, CnnRnnModel, Container, DfnnModel, ModelError, ModelTag};
use crate::training::{train, FlatData, LossCurve, SequenceData, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CnnRnn,
    Dfnn,
    Rf,
    Lasso,
    Average,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::CnnRnn,
        ModelKind::Dfnn,
        ModelKind::Rf,
        ModelKind::Lasso,
        ModelKind::Average,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CnnRnn => "cnn-rnn",
            ModelKind::Dfnn => "dfnn",
            ModelKind::Rf => "rf",
            ModelKind::Lasso => "lasso",
            ModelKind::Average => "average",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model '{s}' (expected cnn-rnn, dfnn, rf, lasso or average)"))
    }
}

/// Any trained model.
#[derive(Clone, Debug)]
pub enum Fitted {
    CnnRnn(CnnRnnModel),
    Dfnn(DfnnModel),
    Flat(FlatModel),
}

impl Fitted {
    pub fn kind(&self) -> ModelKind {
        match self {
            Fitted::CnnRnn(_) => ModelKind::CnnRnn,
            Fitted::Dfnn(_) => ModelKind::Dfnn,
            Fitted::Flat(FlatModel::Lasso { .. }) => ModelKind::Lasso,
            Fitted::Flat(FlatModel::Forest(_)) => ModelKind::Rf,
            Fitted::Flat(FlatModel::Average(_)) => ModelKind::Average,
        }
    }

    /// Final-step prediction in bu/acre per sample.
    pub fn predict(&self, samples: &[SequenceSample]) -> Vec<f64> {
        if samples.is_empty() {
            return Vec::new();
        }
        match self {
            Fitted::CnnRnn(m) => m.predict(samples),
            Fitted::Dfnn(m) => m.predict(&flat_rows(samples)),
            Fitted::Flat(m) => m.predict(&flat_rows(samples)),
        }
    }

    pub fn to_container(&self) -> Container {
        match self {
            Fitted::CnnRnn(m) => m.to_container(),
            Fitted::Dfnn(m) => m.to_container(),
            Fitted::Flat(m) => m.to_container(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        Ok(match c.tag {
            ModelTag::CnnRnn => Fitted::CnnRnn(CnnRnnModel::from_container(c)?),
            ModelTag::Dfnn => Fitted::Dfnn(DfnnModel::from_container(c)?),
            _ => Fitted::Flat(FlatModel::from_container(c)?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        super::output::write_atomic(path, &self.to_container().to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ExperimentError::io(path, e))?;
        let c = Container::read_from(&mut bytes.as_slice())?;
        Ok(Fitted::from_container(&c)?)
    }
}

pub struct FitOutput {
    pub model: Fitted,
    pub curve: Option<LossCurve>,
}

pub fn flat_rows(samples: &[SequenceSample]) -> Vec<Vec<f64>> {
    samples.iter().map(flatten_features).collect()
}

/// Observed targets of training samples, read for fitting.
fn fit_targets(samples: &[SequenceSample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| s.target(Purpose::Fit).expect("training sample without a target"))
        .collect()
}

fn train_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    }
}

pub fn cnn_config(config: &ExperimentConfig, layout: FeatureLayout, crop: crate::data::Crop) -> CnnRnnConfig {
    let mut c = config.cnn.clone().unwrap_or_else(|| CnnRnnConfig::for_crop(crop));
    c.k = config.k;
    c.management_dim = layout.management_weeks;
    c
}

/// Transform fitted on every step of every training window.
pub fn fit_sequence_transform(samples: &[SequenceSample], layout: FeatureLayout) -> InputTransform {
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .flat_map(|s| (0..s.steps()).map(move |i| s.step_features(i)))
        .collect();
    InputTransform::fit(rows.iter().map(Vec::as_slice), layout.len())
}

/// Fits `kind` on `train`. `mask`, when given, zeroes unselected
/// standardized inputs of the neural models.
pub fn fit_model(
    kind: ModelKind,
    train_samples: &[SequenceSample],
    monitor: Option<&[SequenceSample]>,
    config: &ExperimentConfig,
    cnn: &CnnRnnConfig,
    mask: Option<&[bool]>,
) -> Result<FitOutput, ExperimentError> {
    if train_samples.is_empty() {
        return Err(ExperimentError::Invalid("no training samples".into()));
    }
    let layout = FeatureLayout::new(cnn.management_dim);
    let targets = fit_targets(train_samples);
    let tc = train_config(config);
    let masked = |t: InputTransform| match mask {
        Some(m) => masked_transform(t, m, layout),
        None => t,
    };
    info!("fitting {kind} on {} samples", train_samples.len());
    Ok(match kind {
        ModelKind::CnnRnn => {
            let mut model = CnnRnnModel::build(cnn.clone(), config.seed)?;
            model.transform = masked(fit_sequence_transform(train_samples, layout));
            model.target_scale = TargetScale::fit(&targets);
            let data = SequenceData::new(&model, train_samples);
            let monitor = monitor.filter(|m| !m.is_empty()).map(|m| SequenceData::new(&model, m));
            let trained = train(model, &data, monitor.as_ref(), &tc).map_err(|e| ExperimentError::Training(e.to_string()))?;
            FitOutput {
                model: Fitted::CnnRnn(trained.model),
                curve: Some(trained.curve),
            }
        }
        ModelKind::Dfnn => {
            let rows = flat_rows(train_samples);
            let mut model = DfnnModel::build(layout.len(), config.seed);
            model.transform = masked(InputTransform::fit(rows.iter().map(Vec::as_slice), layout.len()));
            model.target_scale = TargetScale::fit(&targets);
            let data = FlatData::new(&model, &rows, targets);
            let monitor = monitor.filter(|m| !m.is_empty()).map(|m| FlatData::new(&model, &flat_rows(m), fit_targets(m)));
            let trained = train(model, &data, monitor.as_ref(), &tc).map_err(|e| ExperimentError::Training(e.to_string()))?;
            FitOutput {
                model: Fitted::Dfnn(trained.model),
                curve: Some(trained.curve),
            }
        }
        ModelKind::Lasso => FitOutput {
            model: Fitted::Flat(fit_lasso_selected(train_samples, &targets, config, layout)),
            curve: None,
        },
        ModelKind::Rf => {
            let forest = crate::baselines::ForestConfig {
                seed: config.seed,
                ..config.forest.clone()
            };
            if train_samples.len() < 2 {
                return Err(ExperimentError::Invalid("random forest needs two samples".into()));
            }
            FitOutput {
                model: Fitted::Flat(FlatModel::Forest(fit_random_forest(&flat_rows(train_samples), &targets, &forest))),
                curve: None,
            }
        }
        ModelKind::Average => FitOutput {
            model: Fitted::Flat(FlatModel::Average(average_baseline(&targets))),
            curve: None,
        },
    })
}

fn fit_lasso_on(samples: &[SequenceSample], targets: &[f64], lambda: f64, layout: FeatureLayout) -> FlatModel {
    let rows = flat_rows(samples);
    let transform = InputTransform::fit(rows.iter().map(Vec::as_slice), layout.len());
    let x: Vec<Vec<f64>> = rows.iter().map(|r| transform.apply(r)).collect();
    FlatModel::Lasso {
        model: fit_lasso(&x, targets, lambda),
        transform,
    }
}

/// Picks λ from the grid by RMSE on the last training year, then refits on
/// all training samples.
fn fit_lasso_selected(
    samples: &[SequenceSample],
    targets: &[f64],
    config: &ExperimentConfig,
    layout: FeatureLayout,
) -> FlatModel {
    let grid = &config.lasso_lambdas;
    assert!(!grid.is_empty(), "empty lambda grid");
    let last_year = samples.iter().map(|s| s.target_year).max().unwrap();
    let (inner, holdout): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].target_year < last_year);
    let mut lambda = grid[0];
    if grid.len() > 1 && inner.len() >= 2 && !holdout.is_empty() {
        let pick = |idx: &[usize]| -> (Vec<SequenceSample>, Vec<f64>) {
            (idx.iter().map(|&i| samples[i].clone()).collect(), idx.iter().map(|&i| targets[i]).collect())
        };
        let (inner_s, inner_y) = pick(&inner);
        let (hold_s, hold_y) = pick(&holdout);
        let hold_rows = flat_rows(&hold_s);
        let mut best = f64::INFINITY;
        for &l in grid {
            let score = rmse(&fit_lasso_on(&inner_s, &inner_y, l, layout).predict(&hold_rows), &hold_y);
            info!("lasso lambda {l}: inner RMSE {score:.4}");
            if score < best {
                best = score;
                lambda = l;
            }
        }
    }
    fit_lasso_on(samples, targets, lambda, layout)
}
