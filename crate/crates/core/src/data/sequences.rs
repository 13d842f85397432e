use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;

use super::records::{CountyYearRecord, Dataset, Purpose, TargetAudit};
use crate::features::WEEKS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Final-step average yield is the observed Ȳ of the target year.
    Train,
    /// Final-step average yield is Ȳ of the previous year.
    Test,
}

/// A `(k+1)`-year window for one county ending at the target year.
#[derive(Clone, Debug)]
pub struct SequenceSample {
    pub county_id: u32,
    pub state_id: u32,
    pub target_year: i32,
    /// Records for years `t−k..=t`.
    pub window: Vec<Arc<CountyYearRecord>>,
    /// Average-yield input per step.
    pub avg_yield_inputs: Vec<f64>,
    /// Whether the final step carries Ȳ of the previous year.
    pub final_avg_substituted: bool,
    target: Option<f64>,
    audit: Option<Arc<TargetAudit>>,
}

impl SequenceSample {
    /// Builds a sample directly; the window must hold consecutive years.
    pub fn new(
        window: Vec<Arc<CountyYearRecord>>,
        avg_yield_inputs: Vec<f64>,
        final_avg_substituted: bool,
        target: Option<f64>,
    ) -> Self {
        assert!(!window.is_empty(), "sample window is empty");
        assert_eq!(window.len(), avg_yield_inputs.len());
        assert!(
            window.windows(2).all(|p| p[1].year == p[0].year + 1
                && p[1].county_id == p[0].county_id),
            "sample window must hold consecutive years of one county"
        );
        let last = window.last().unwrap();
        Self {
            county_id: last.county_id,
            state_id: last.state_id,
            target_year: last.year,
            window,
            avg_yield_inputs,
            final_avg_substituted,
            target,
            audit: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.window.len()
    }

    pub fn last(&self) -> &CountyYearRecord {
        self.window.last().unwrap()
    }

    /// Target yield, logged against the dataset audit.
    pub fn target(&self, purpose: Purpose) -> Option<f64> {
        if let Some(audit) = &self.audit {
            audit.record(self.county_id, self.target_year, purpose);
        }
        self.target
    }

    /// Observed yield of every step, target included, for all-step losses.
    pub fn step_targets(&self, purpose: Purpose) -> Vec<Option<f64>> {
        let mut out: Vec<Option<f64>> = self.window[..self.steps() - 1]
            .iter()
            .map(|r| r.yield_bu_acre)
            .collect();
        out.push(self.target(purpose));
        out
    }

    /// Flattened inputs of step `s` in feature-layout order.
    pub fn step_features(&self, s: usize) -> Vec<f64> {
        self.window[s].features(self.avg_yield_inputs[s])
    }

    /// Flattened inputs of the target year.
    pub fn flatten_features(&self) -> Vec<f64> {
        self.step_features(self.steps() - 1)
    }
}

/// Samples plus the number of target county-years that were skipped.
#[derive(Clone, Debug)]
pub struct Assembly {
    pub samples: Vec<SequenceSample>,
    pub skipped: usize,
}

/// Builds one sample per county and target year with `k` consecutive prior
/// years present.
///
/// `avg_yields` must cover every year the windows need: `t−k..t−1` plus `t`
/// in the train phase. Train-phase samples also need an observed target.
pub fn assemble_sequences(
    dataset: &Dataset,
    k: usize,
    target_years: &[i32],
    phase: Phase,
    avg_yields: &BTreeMap<i32, f64>,
) -> Assembly {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for county in dataset.counties() {
        for &t in target_years {
            let Some(last) = dataset.get(county, t) else {
                continue;
            };
            let window: Option<Vec<_>> = (0..=k as i32)
                .map(|back| dataset.get(county, t - k as i32 + back).cloned())
                .collect();
            let Some(window) = window else {
                skipped += 1;
                continue;
            };
            if !window.iter().all(|r| r.is_complete()) {
                skipped += 1;
                continue;
            }
            let mut avg: Option<Vec<f64>> = (0..k as i32)
                .map(|back| avg_yields.get(&(t - k as i32 + back)).copied())
                .collect();
            let final_avg = match phase {
                Phase::Train => avg_yields.get(&t),
                Phase::Test => avg_yields.get(&(t - 1)),
            };
            match (&mut avg, final_avg) {
                (Some(a), Some(&f)) => a.push(f),
                _ => {
                    skipped += 1;
                    continue;
                }
            }
            let target = match phase {
                Phase::Train => match dataset.target(last, Purpose::Fit) {
                    Some(y) => Some(y),
                    None => {
                        skipped += 1;
                        continue;
                    }
                },
                Phase::Test => last.yield_bu_acre,
            };
            let mut sample = SequenceSample::new(window, avg.unwrap(), phase == Phase::Test, target);
            sample.audit = Some(Arc::clone(dataset.audit()));
            samples.push(sample);
        }
    }
    Assembly { samples, skipped }
}

/// Replaces the target-year weather at the given 1-based weeks with the
/// source record's values, for all six variables.
///
/// Returns `None` with a warning when the source is for a different county.
pub fn substitute_weather(
    sample: &SequenceSample,
    source: &CountyYearRecord,
    weeks: &[usize],
) -> Option<SequenceSample> {
    if source.county_id != sample.county_id {
        warn!(
            "no replacement weather for county {} (source is county {})",
            sample.county_id, source.county_id
        );
        return None;
    }
    let mut out = sample.clone();
    if weeks.is_empty() {
        return Some(out);
    }
    let last = out.window.last_mut().unwrap();
    let record = Arc::make_mut(last);
    for &week in weeks {
        assert!((1..=WEEKS).contains(&week), "week {week} out of range 1..=52");
        for var in 0..record.weather.len() / WEEKS {
            let i = var * WEEKS + week - 1;
            record.weather[i] = source.weather[i];
        }
    }
    Some(out)
}
