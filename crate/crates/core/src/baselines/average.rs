use serde::{Deserialize, Serialize};

/// Predicts the mean training yield for every input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageModel {
    pub value: f64,
}

/// # Panics
///
/// Panics on an empty target list.
pub fn average_baseline(train_targets: &[f64]) -> AverageModel {
    assert!(!train_targets.is_empty(), "average baseline needs targets");
    AverageModel {
        value: train_targets.iter().sum::<f64>() / train_targets.len() as f64,
    }
}
