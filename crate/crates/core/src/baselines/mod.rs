//! Pointwise comparison models over flattened target-year features.

mod average;
mod forest;
mod lasso;

pub use average::{average_baseline, AverageModel};
pub use forest::{fit_random_forest, ForestConfig, ForestModel, Node, RegressionTree};
pub use lasso::{fit_lasso, fit_lasso_traced, lasso_objective, LassoModel, LASSO_MAX_SWEEPS, LASSO_TOL};

use crate::data::SequenceSample;

/// Target-year features in [`crate::features::FeatureLayout`] order: weather,
/// soil profile, soil surface, planting progress, average yield.
pub fn flatten_features(sample: &SequenceSample) -> Vec<f64> {
    assert!(sample.last().is_complete(), "sample has unfilled inputs");
    sample.flatten_features()
}

use crate::features::{InputTransform, TargetScale};
use crate::model::format::{push_transform, take_transform, Cursor};
use crate::model::{Container, ModelError, ModelTag};

/// A fitted pointwise baseline that predicts from raw flattened features.
#[derive(Clone, Debug, PartialEq)]
pub enum FlatModel {
    /// LASSO over z-scored features.
    Lasso { model: LassoModel, transform: InputTransform },
    Forest(ForestModel),
    Average(AverageModel),
}

impl FlatModel {
    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        match self {
            FlatModel::Lasso { model, transform } => {
                rows.iter().map(|r| model.predict_row(&transform.apply(r))).collect()
            }
            FlatModel::Forest(f) => rows.iter().map(|r| f.predict_row(r)).collect(),
            FlatModel::Average(a) => vec![a.value; rows.len()],
        }
    }

    pub fn to_container(&self) -> Container {
        match self {
            FlatModel::Lasso { model, transform } => {
                let mut params = model.coefficients.clone();
                params.push(model.intercept);
                let mut aux = Vec::new();
                push_transform(&mut aux, transform, &TargetScale::default());
                Container {
                    tag: ModelTag::Lasso,
                    config: serde_json::json!({ "lambda": model.lambda }).to_string(),
                    params,
                    aux,
                }
            }
            FlatModel::Forest(f) => Container {
                tag: ModelTag::Forest,
                config: serde_json::to_string(f).expect("forest serializes"),
                params: Vec::new(),
                aux: Vec::new(),
            },
            FlatModel::Average(a) => Container {
                tag: ModelTag::Average,
                config: "{}".into(),
                params: vec![a.value],
                aux: Vec::new(),
            },
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Format(m.to_string());
        match c.tag {
            ModelTag::Lasso => {
                let cfg: serde_json::Value =
                    serde_json::from_str(&c.config).map_err(|e| ModelError::Format(format!("config block: {e}")))?;
                let lambda = cfg["lambda"].as_f64().ok_or_else(|| bad("LASSO config lacks lambda"))?;
                let (&intercept, coefficients) = c.params.split_last().ok_or_else(|| bad("empty LASSO parameters"))?;
                let mut cur = Cursor::new(&c.aux);
                let (transform, _) = take_transform(&mut cur, coefficients.len())?;
                cur.finish()?;
                Ok(FlatModel::Lasso {
                    model: LassoModel {
                        coefficients: coefficients.to_vec(),
                        intercept,
                        lambda,
                    },
                    transform,
                })
            }
            ModelTag::Forest => serde_json::from_str(&c.config)
                .map(FlatModel::Forest)
                .map_err(|e| ModelError::Format(format!("forest block: {e}"))),
            ModelTag::Average => match c.params.as_slice() {
                [value] => Ok(FlatModel::Average(AverageModel { value: *value })),
                _ => Err(bad("average model holds exactly one value")),
            },
            other => Err(ModelError::Format(format!("{other:?} is not a baseline model"))),
        }
    }
}
