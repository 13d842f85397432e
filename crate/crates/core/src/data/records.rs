use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::features::{FeatureLayout, SOIL_LEN, SURFACE_VARS, WEATHER_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crop {
    Corn,
    Soybean,
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Crop::Corn => "corn",
            Crop::Soybean => "soybean",
        })
    }
}

impl FromStr for Crop {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "corn" => Ok(Crop::Corn),
            "soybean" | "soybeans" => Ok(Crop::Soybean),
            other => Err(format!("unknown crop '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Observed,
    Missing,
    Imputed,
}

/// One county, one crop, one year.
///
/// Missing cells hold `NaN` until imputation; the state vectors are the
/// authority on which cells were observed.
#[derive(Clone, Debug, PartialEq)]
pub struct CountyYearRecord {
    pub county_id: u32,
    pub state_id: u32,
    pub year: i32,
    pub crop: Crop,
    pub yield_bu_acre: Option<f64>,
    /// 6×52, variable-major.
    pub weather: Vec<f64>,
    /// 10×9, variable-major.
    pub soil_profile: Vec<f64>,
    pub soil_state: Vec<CellState>,
    pub soil_surface: Vec<f64>,
    pub surface_state: Vec<CellState>,
    pub management: Vec<f64>,
    pub management_state: Vec<CellState>,
}

impl CountyYearRecord {
    /// A fully observed record with all-zero inputs.
    pub fn zeroed(county_id: u32, state_id: u32, year: i32, crop: Crop, m: usize) -> Self {
        Self {
            county_id,
            state_id,
            year,
            crop,
            yield_bu_acre: None,
            weather: vec![0.0; WEATHER_LEN],
            soil_profile: vec![0.0; SOIL_LEN],
            soil_state: vec![CellState::Observed; SOIL_LEN],
            soil_surface: vec![0.0; SURFACE_VARS],
            surface_state: vec![CellState::Observed; SURFACE_VARS],
            management: vec![0.0; m],
            management_state: vec![CellState::Observed; m],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.weather.len() == WEATHER_LEN
            && self.weather.iter().all(|v| v.is_finite())
            && self.soil_profile.iter().all(|v| v.is_finite())
            && self.soil_surface.iter().all(|v| v.is_finite())
            && self.management.iter().all(|v| v.is_finite())
            && !self
                .soil_state
                .iter()
                .chain(&self.surface_state)
                .chain(&self.management_state)
                .any(|s| *s == CellState::Missing)
    }

    /// Flattened inputs in [`FeatureLayout`] order with the given average yield.
    pub fn features(&self, avg_yield: f64) -> Vec<f64> {
        let layout = FeatureLayout::new(self.management.len());
        let mut out = Vec::with_capacity(layout.len());
        out.extend_from_slice(&self.weather);
        out.extend_from_slice(&self.soil_profile);
        out.extend_from_slice(&self.soil_surface);
        out.extend_from_slice(&self.management);
        out.push(avg_yield);
        out
    }
}

/// Why a target yield is being read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Fitting, preprocessing, or feature selection.
    Fit,
    /// Computing reported metrics.
    Metric,
}

/// A recorded read of a sealed year's target for fitting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditViolation {
    pub county_id: u32,
    pub year: i32,
}

/// Tracks which years' targets are off limits for fitting.
#[derive(Debug, Default)]
pub struct TargetAudit {
    sealed: Mutex<BTreeSet<i32>>,
    violations: Mutex<Vec<AuditViolation>>,
}

impl TargetAudit {
    pub fn seal(&self, year: i32) {
        self.sealed.lock().unwrap().insert(year);
    }

    pub fn unseal_all(&self) {
        self.sealed.lock().unwrap().clear();
    }

    pub fn record(&self, county_id: u32, year: i32, purpose: Purpose) {
        if purpose == Purpose::Fit && self.sealed.lock().unwrap().contains(&year) {
            self.violations
                .lock()
                .unwrap()
                .push(AuditViolation { county_id, year });
        }
    }

    pub fn violations(&self) -> Vec<AuditViolation> {
        self.violations.lock().unwrap().clone()
    }
}

/// Records of a single crop sorted by `(county_id, year)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub crop: Crop,
    pub management_weeks: usize,
    records: Vec<Arc<CountyYearRecord>>,
    audit: Arc<TargetAudit>,
}

impl Dataset {
    pub fn new(crop: Crop, mut records: Vec<CountyYearRecord>) -> Result<Self, DataError> {
        records.retain(|r| r.crop == crop);
        records.sort_by_key(|r| (r.county_id, r.year));
        for pair in records.windows(2) {
            if pair[0].county_id == pair[1].county_id && pair[0].year == pair[1].year {
                return Err(DataError::Duplicate {
                    county_id: pair[0].county_id,
                    year: pair[0].year,
                });
            }
        }
        let management_weeks = records.first().map_or(0, |r| r.management.len());
        if let Some(r) = records.iter().find(|r| r.management.len() != management_weeks) {
            return Err(DataError::Inconsistent(format!(
                "county {} year {} has {} management weeks, expected {management_weeks}",
                r.county_id,
                r.year,
                r.management.len()
            )));
        }
        Ok(Self {
            crop,
            management_weeks,
            records: records.into_iter().map(Arc::new).collect(),
            audit: Arc::new(TargetAudit::default()),
        })
    }

    pub fn records(&self) -> &[Arc<CountyYearRecord>] {
        &self.records
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.management_weeks)
    }

    pub fn audit(&self) -> &Arc<TargetAudit> {
        &self.audit
    }

    pub fn get(&self, county_id: u32, year: i32) -> Option<&Arc<CountyYearRecord>> {
        self.records
            .binary_search_by_key(&(county_id, year), |r| (r.county_id, r.year))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.records.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    }

    pub fn counties(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.county_id).collect();
        set.into_iter().collect()
    }

    /// Target yield of a record, logged against the audit.
    pub fn target(&self, record: &CountyYearRecord, purpose: Purpose) -> Option<f64> {
        self.audit.record(record.county_id, record.year, purpose);
        record.yield_bu_acre
    }

    /// Per-year national average over years `< before` (all years when `None`).
    pub fn avg_yields(&self, before: Option<i32>) -> BTreeMap<i32, f64> {
        let pairs = self
            .records
            .iter()
            .filter(|r| before.is_none_or(|b| r.year < b))
            .map(|r| (r.year, self.target(r, Purpose::Fit)));
        super::compute_avg_yields(pairs)
    }

    /// Copy with records filtered; shares the audit log.
    pub fn filtered(&self, keep: impl Fn(&CountyYearRecord) -> bool) -> Self {
        Self {
            crop: self.crop,
            management_weeks: self.management_weeks,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            audit: Arc::clone(&self.audit),
        }
    }

    pub fn into_records(self) -> Vec<CountyYearRecord> {
        self.records
            .into_iter()
            .map(|r| Arc::try_unwrap(r).unwrap_or_else(|r| (*r).clone()))
            .collect()
    }
}
