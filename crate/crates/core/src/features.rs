//! Flattened per-year feature order and input standardization.
//!
//! One year of inputs flattens to
//! `weather (6×52, variable-major) | soil profile (10×9, variable-major) |
//! soil surface (4) | management (m) | average yield (1)`.

use serde::{Deserialize, Serialize};

pub const WEATHER_VARS: usize = 6;
pub const WEEKS: usize = 52;
pub const SOIL_VARS: usize = 10;
pub const SOIL_DEPTHS: usize = 9;
pub const SURFACE_VARS: usize = 4;
pub const WEATHER_LEN: usize = WEATHER_VARS * WEEKS;
pub const SOIL_LEN: usize = SOIL_VARS * SOIL_DEPTHS;

pub const WEATHER_NAMES: [&str; WEATHER_VARS] = [
    "precipitation",
    "solar radiation",
    "snow water equivalent",
    "max temperature",
    "min temperature",
    "vapor pressure",
];

pub const SURFACE_NAMES: [&str; SURFACE_VARS] = [
    "slope",
    "nccpi corn",
    "nccpi all",
    "root zone depth",
];

/// Normalization group of a flattened feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureGroup {
    Weather,
    SoilDepth,
    SoilSurface,
    Management,
    AvgYield,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Weather,
        FeatureGroup::SoilDepth,
        FeatureGroup::SoilSurface,
        FeatureGroup::Management,
        FeatureGroup::AvgYield,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FeatureGroup::Weather => "weather",
            FeatureGroup::SoilDepth => "soil-depth",
            FeatureGroup::SoilSurface => "soil-surface",
            FeatureGroup::Management => "management",
            FeatureGroup::AvgYield => "avg-yield",
        }
    }
}

/// Offsets into the flattened feature vector for a given management length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub management_weeks: usize,
}

impl FeatureLayout {
    pub fn new(management_weeks: usize) -> Self {
        Self { management_weeks }
    }

    pub fn len(&self) -> usize {
        WEATHER_LEN + SOIL_LEN + SURFACE_VARS + self.management_weeks + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weather(&self) -> std::ops::Range<usize> {
        0..WEATHER_LEN
    }

    pub fn soil(&self) -> std::ops::Range<usize> {
        WEATHER_LEN..WEATHER_LEN + SOIL_LEN
    }

    pub fn surface(&self) -> std::ops::Range<usize> {
        let start = WEATHER_LEN + SOIL_LEN;
        start..start + SURFACE_VARS
    }

    pub fn management(&self) -> std::ops::Range<usize> {
        let start = WEATHER_LEN + SOIL_LEN + SURFACE_VARS;
        start..start + self.management_weeks
    }

    pub fn avg_yield(&self) -> usize {
        self.len() - 1
    }

    /// Index of weather variable `var` (0-based) at 1-based `week`.
    pub fn weather_index(&self, var: usize, week: usize) -> usize {
        assert!(var < WEATHER_VARS && (1..=WEEKS).contains(&week));
        var * WEEKS + week - 1
    }

    pub fn group(&self, index: usize) -> FeatureGroup {
        assert!(index < self.len(), "feature index {index} out of range");
        if self.weather().contains(&index) {
            FeatureGroup::Weather
        } else if self.soil().contains(&index) {
            FeatureGroup::SoilDepth
        } else if self.surface().contains(&index) {
            FeatureGroup::SoilSurface
        } else if self.management().contains(&index) {
            FeatureGroup::Management
        } else {
            FeatureGroup::AvgYield
        }
    }

    /// Human-readable name such as `precipitation week 30`.
    pub fn describe(&self, index: usize) -> String {
        match self.group(index) {
            FeatureGroup::Weather => {
                format!("{} week {}", WEATHER_NAMES[index / WEEKS], index % WEEKS + 1)
            }
            FeatureGroup::SoilDepth => {
                let i = index - WEATHER_LEN;
                format!("soil var {} depth {}", i / SOIL_DEPTHS + 1, i % SOIL_DEPTHS + 1)
            }
            FeatureGroup::SoilSurface => {
                SURFACE_NAMES[index - self.surface().start].to_string()
            }
            FeatureGroup::Management => {
                format!("planted week {}", index - self.management().start + 1)
            }
            FeatureGroup::AvgYield => "average yield".to_string(),
        }
    }
}

/// Per-feature z-scoring followed by an optional keep-mask.
///
/// Masked features become 0 after standardization, i.e. the training mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub keep: Vec<bool>,
}

impl InputTransform {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            scale: vec![1.0; len],
            keep: vec![true; len],
        }
    }

    /// Statistics from the given rows. Zero-variance features get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, len: usize) -> Self {
        let mut sum = vec![0.0; len];
        let mut sq = vec![0.0; len];
        let mut n = 0usize;
        for row in rows {
            assert_eq!(row.len(), len, "feature row has wrong length");
            for (i, &v) in row.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1;
        }
        assert!(n > 0, "cannot fit a transform on zero rows");
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(&s, &m)| {
                let var = (s / nf - m * m).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-9 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            mean,
            scale,
            keep: vec![true; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn with_mask(mut self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.len(), "mask length does not match features");
        self.keep = keep.to_vec();
        self
    }

    pub fn apply_into(&self, raw: &[f64], out: &mut [f64]) {
        assert_eq!(raw.len(), self.len(), "feature vector has wrong length");
        for i in 0..raw.len() {
            out[i] = if self.keep[i] {
                (raw[i] - self.mean[i]) / self.scale[i]
            } else {
                0.0
            };
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; raw.len()];
        self.apply_into(raw, &mut out);
        out
    }
}

/// Affine map from the network's output unit to bu/acre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub sd: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }
}

impl TargetScale {
    /// Population mean and sd of the targets; unit sd when they are constant.
    pub fn fit(targets: &[f64]) -> Self {
        assert!(!targets.is_empty());
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }
}
