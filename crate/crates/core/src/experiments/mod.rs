//! Metrics and experiment protocols: temporal holdout, leave-location-out
//! cross-validation, source ablations, feature-subset retraining and the
//! weather-substitution sweep.

mod metrics;
mod output;
mod pipeline;
mod protocols;

pub use metrics::{pearson_corr, rmse};
pub use output::{config_hash, write_atomic, write_outputs, MetricRow, MetricsFile};
pub use pipeline::{cnn_config, fit_model, fit_sequence_transform, flat_rows, FitOutput, Fitted, ModelKind};
pub use protocols::{
    ablation_run, evaluate, feature_subset_run, kfold_location_cv, location_folds, temporal_holdout, temporal_splits,
    weather_sweep, weather_sweep_run, Source, Splits, Sweep, SweepRow,
};

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionReport, AttributionSource};
use crate::baselines::ForestConfig;
use crate::data::DataError;
use crate::model::{CnnRnnConfig, ModelError};
use crate::training::{LossCurve, TrainConfig};

/// Settings shared by every protocol. `seed` drives initialization, batch
/// sampling and forest bootstraps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub train: TrainConfig,
    /// Architecture override; the crop default when absent.
    pub cnn: Option<CnnRnnConfig>,
    pub lasso_lambdas: Vec<f64>,
    pub forest: ForestConfig,
    /// Track the loss on the final training year in the loss curve.
    pub monitor: bool,
    pub attribution_source: AttributionSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 5,
            train: TrainConfig::default(),
            cnn: None,
            lasso_lambdas: vec![0.3, 0.4, 0.5],
            forest: ForestConfig::default(),
            monitor: true,
            attribution_source: AttributionSource::LstmOutput,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Invalid(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("target audit: {0}")]
    Audit(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ExperimentError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the failure comes from file access or parsing.
    pub fn is_io(&self) -> bool {
        match self {
            ExperimentError::Io { .. } => true,
            ExperimentError::Data(e) => e.is_io(),
            _ => false,
        }
    }
}

/// RMSE and correlation (percent) over samples with ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub rmse: f64,
    pub correlation: f64,
    pub n: usize,
}

impl SplitMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Self {
        Self {
            rmse: rmse(pred, truth),
            correlation: if pred.len() >= 2 { pearson_corr(pred, truth) } else { 0.0 },
            n: pred.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub county_id: u32,
    pub year: i32,
    pub truth: Option<f64>,
    pub prediction: f64,
}

impl PredictionRow {
    pub fn abs_error(&self) -> Option<f64> {
        self.truth.map(|t| (self.prediction - t).abs())
    }
}

/// One trained configuration inside an experiment.
#[derive(Clone, Debug)]
pub struct Arm {
    pub label: String,
    pub kind: ModelKind,
    pub train: Option<SplitMetrics>,
    pub validation: SplitMetrics,
    pub predictions: Vec<PredictionRow>,
    pub model: Option<Fitted>,
    pub curve: Option<LossCurve>,
}

impl Arm {
    pub fn metric_row(&self) -> MetricRow {
        MetricRow {
            label: self.label.clone(),
            model: self.kind,
            train_rmse: self.train.map(|m| m.rmse),
            train_correlation: self.train.map(|m| m.correlation),
            validation_rmse: self.validation.rmse,
            validation_correlation: self.validation.correlation,
            n_train: self.train.map_or(0, |m| m.n),
            n_validation: self.validation.n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    /// The first arm is the headline result.
    pub arms: Vec<Arm>,
    pub sweep: Option<Sweep>,
    pub attribution: Option<AttributionReport>,
    /// Wall time; kept out of every written file.
    pub runtime: Duration,
}

impl ExperimentResult {
    pub fn primary(&self) -> &Arm {
        &self.arms[0]
    }

    pub fn arm(&self, label: &str) -> Option<&Arm> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn metrics_file(&self) -> MetricsFile {
        MetricsFile {
            experiment: self.experiment.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            parameters: self.parameters.clone(),
            metrics: self.arms.iter().map(Arm::metric_row).collect(),
        }
    }

    /// `RMSE … correlation …` of the headline arm.
    pub fn summary_line(&self) -> String {
        let a = self.primary();
        format!(
            "{} {}: validation RMSE {:.4} correlation {:.2}% (n={})",
            self.experiment, a.label, a.validation.rmse, a.validation.correlation, a.validation.n
        )
    }
}
