//! Guided-backpropagation feature importance for the CNN-RNN.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};
use yieldnet_autodiff::{GradMode, Tape, Tensor};

use crate::data::SequenceSample;
use crate::features::{FeatureGroup, FeatureLayout, InputTransform};
use crate::model::{BatchInputs, CnnRnnModel};

/// Where the guided backward pass starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionSource {
    /// Final-step LSTM output, seeded with the activated-neuron vector.
    #[default]
    LstmOutput,
    /// Final-step scalar prediction.
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionReport {
    pub layout: FeatureLayout,
    /// Mean absolute guided gradient per feature in layout order.
    pub raw: Vec<f64>,
    /// `raw` divided by the maximum of its feature group.
    pub normalized: Vec<f64>,
}

impl AttributionReport {
    pub fn from_raw(layout: FeatureLayout, raw: Vec<f64>) -> Self {
        assert_eq!(raw.len(), layout.len(), "importance vector has wrong length");
        let mut normalized = raw.clone();
        for group in FeatureGroup::ALL {
            let idx: Vec<usize> = (0..raw.len()).filter(|&i| layout.group(i) == group).collect();
            let max = idx.iter().map(|&i| raw[i]).fold(0.0, f64::max);
            if max > 0.0 {
                for i in idx {
                    normalized[i] = raw[i] / max;
                }
            }
        }
        Self { layout, raw, normalized }
    }

    pub fn group(&self, index: usize) -> FeatureGroup {
        self.layout.group(index)
    }

    /// Feature indices of `group` ordered by decreasing importance, ties by
    /// index.
    pub fn ranked(&self, group: FeatureGroup) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.raw.len()).filter(|&i| self.group(i) == group).collect();
        idx.sort_by(|&a, &b| self.raw[b].total_cmp(&self.raw[a]).then(a.cmp(&b)));
        idx
    }

    /// `feature_id,group,description,raw_importance,normalized_importance`
    /// with 1-based feature ids.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature_id,group,description,raw_importance,normalized_importance\n");
        for i in 0..self.raw.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                self.group(i).label(),
                self.layout.describe(i),
                self.raw[i],
                self.normalized[i]
            )
            .unwrap();
        }
        out
    }
}

/// 1 for every LSTM unit whose mean final-step output over `samples` is
/// positive, 0 otherwise.
pub fn select_seed_neurons(model: &CnnRnnModel, samples: &[SequenceSample]) -> Vec<f64> {
    assert!(!samples.is_empty(), "seed selection needs at least one sample");
    seed_from_hidden(&model.final_hidden(samples))
}

/// Seed vector from per-sample hidden activations.
pub fn seed_from_hidden(hidden: &[Vec<f64>]) -> Vec<f64> {
    assert!(!hidden.is_empty());
    let h = hidden[0].len();
    let n = hidden.len() as f64;
    (0..h)
        .map(|j| {
            let mean = hidden.iter().map(|row| row[j]).sum::<f64>() / n;
            if mean > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Mean absolute guided gradient of the final step with respect to each
/// standardized final-step input, grouped and normalized.
pub fn guided_attribute(
    model: &CnnRnnModel,
    samples: &[SequenceSample],
    source: AttributionSource,
) -> AttributionReport {
    assert!(!samples.is_empty(), "attribution needs at least one sample");
    let layout = model.layout();
    let seed = select_seed_neurons(model, samples);
    let mut raw = vec![0.0; layout.len()];
    if source == AttributionSource::LstmOutput && seed.iter().all(|&s| s == 0.0) {
        warn!("no LSTM unit has positive mean activation; attribution is all zero");
        return AttributionReport::from_raw(layout, raw);
    }
    let hidden = model.config.lstm_hidden;
    let steps = model.config.steps();
    let last = steps - 1;
    for chunk in samples.chunks(64) {
        let prepared: Vec<Vec<f64>> = chunk.iter().map(|s| model.prepare(s)).collect();
        let refs: Vec<&[f64]> = prepared.iter().map(Vec::as_slice).collect();
        let inputs = BatchInputs::new(layout, steps, &refs);
        let b = chunk.len();
        let mut tape = Tape::new(GradMode::Guided);
        let params = model.bind_constant(&mut tape);
        let trace = model.forward(&mut tape, &params, &inputs, true);
        let grads = match source {
            AttributionSource::LstmOutput => {
                let mut tiled = Vec::with_capacity(b * hidden);
                for _ in 0..b {
                    tiled.extend_from_slice(&seed);
                }
                let seed = Tensor::new(&[b, hidden], tiled);
                tape.backward(&[(*trace.hidden.last().unwrap(), &seed)])
            }
            AttributionSource::Head => {
                let ones = Tensor::full(&[b, 1], 1.0);
                tape.backward(&[(*trace.predictions.last().unwrap(), &ones)])
            }
        };
        let parts = [
            (trace.weather, layout.weather()),
            (trace.soil, layout.soil()),
            (trace.surface, layout.surface()),
            (trace.management, layout.management()),
            (trace.avg_yield, layout.avg_yield()..layout.avg_yield() + 1),
        ];
        for (var, range) in parts {
            let Some(g) = grads.slice(var) else { continue };
            let width = range.len();
            for i in 0..b {
                let row = &g[(last * b + i) * width..(last * b + i + 1) * width];
                for (r, v) in raw[range.clone()].iter_mut().zip(row) {
                    *r += v.abs();
                }
            }
        }
    }
    let n = samples.len() as f64;
    raw.iter_mut().for_each(|v| *v /= n);
    AttributionReport::from_raw(layout, raw)
}

/// Keeps the `⌈fraction·p⌉` features with the largest raw importance, ties
/// by lowest index.
///
/// # Panics
///
/// Panics unless `0 < fraction <= 1`.
pub fn select_top_fraction(report: &AttributionReport, fraction: f64) -> Vec<bool> {
    top_fraction(&report.raw, fraction)
}

pub fn top_fraction(importance: &[f64], fraction: f64) -> Vec<bool> {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1], got {fraction}");
    let p = importance.len();
    let x = fraction * p as f64;
    let keep = (if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() } as usize).max(1);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut mask = vec![false; p];
    for &i in order.iter().take(keep) {
        mask[i] = true;
    }
    mask
}

/// Sets unselected standardized features to 0. The average-yield input is
/// never masked.
pub fn apply_mask(standardized: &[f64], mask: &[bool], layout: FeatureLayout) -> Vec<f64> {
    assert_eq!(standardized.len(), layout.len(), "feature vector has wrong length");
    assert_eq!(mask.len(), layout.len(), "mask has wrong length");
    standardized
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i] || i == layout.avg_yield() { v } else { 0.0 })
        .collect()
}

/// A transform that masks like [`apply_mask`] after standardizing.
pub fn masked_transform(transform: InputTransform, mask: &[bool], layout: FeatureLayout) -> InputTransform {
    let mut keep = mask.to_vec();
    keep[layout.avg_yield()] = true;
    transform.with_mask(&keep)
}
