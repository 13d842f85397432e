//! Seeded synthetic county-year data with a known yield equation.
//!
//! ```text
//! yield = base + trend·(year − start) + α·mean(precip, weeks 26–32) + β·q
//!       + γ·mean(relu(tmax − threshold), weeks 28–34) + noise
//! ```
//!
//! `q` is a static per-county soil latent. Each soil column loads on a
//! phase-shifted sinusoid of `q`, so no single column is linear in it.
//! Planting progress is generated per state-year and never enters the yield.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::{CellState, CountyYearRecord, Crop};
use super::DataError;
use crate::features::{SOIL_DEPTHS, SOIL_LEN, SOIL_VARS, SURFACE_VARS, WEATHER_LEN, WEEKS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub counties: usize,
    pub states: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub seed: u64,
    pub crop: Crop,
    pub management_weeks: usize,
    pub base: f64,
    pub trend: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub heat_threshold: f64,
    pub noise_sd: f64,
    /// Spread of the year-level anomalies shared by every county.
    pub year_wet_sd: f64,
    pub year_heat_sd: f64,
    /// Log-scale spread of weekly precipitation around its seasonal mean.
    pub week_wet_sd: f64,
    /// 1-based inclusive week ranges.
    pub precip_weeks: (usize, usize),
    pub heat_weeks: (usize, usize),
    pub missing_soil: f64,
    pub missing_management: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            counties: 60,
            states: 4,
            start_year: 1980,
            end_year: 2000,
            seed: 42,
            crop: Crop::Corn,
            management_weeks: 15,
            base: 40.0,
            trend: 1.5,
            alpha: 10.0,
            beta: 16.0,
            gamma: -6.0,
            heat_threshold: 30.0,
            noise_sd: 4.0,
            year_wet_sd: 0.0,
            year_heat_sd: 0.0,
            week_wet_sd: 0.4,
            precip_weeks: (26, 32),
            heat_weeks: (28, 34),
            missing_soil: 0.05,
            missing_management: 0.05,
        }
    }
}

/// Ground truth written next to the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalMeta {
    pub causal_variables: Vec<String>,
    pub precipitation_weeks: Vec<usize>,
    pub heat_weeks: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub trend: f64,
    pub base: f64,
    pub heat_threshold: f64,
    pub noise_sd: f64,
    /// Soil latent per county, ordered by county id.
    pub soil_latent: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub spec: SyntheticSpec,
    pub causal: CausalMeta,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub records: Vec<CountyYearRecord>,
    pub meta: SyntheticMeta,
}

pub const META_FILE: &str = "synthetic_meta.json";

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn seasonal(week: usize, low: f64, high: f64, peak_week: f64) -> f64 {
    let phase = 2.0 * PI * (week as f64 - peak_week) / WEEKS as f64;
    low + (high - low) * 0.5 * (1.0 + phase.cos())
}

/// Generates records for every county and year in the spec.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    if spec.counties < 10 {
        return Err(DataError::Spec(format!("need at least 10 counties, got {}", spec.counties)));
    }
    if spec.end_year - spec.start_year + 1 < 8 {
        return Err(DataError::Spec("need at least 8 years".into()));
    }
    if spec.states == 0 || spec.states > spec.counties {
        return Err(DataError::Spec(format!("invalid state count {}", spec.states)));
    }
    let valid_range = |(a, b): (usize, usize)| a >= 1 && a <= b && b <= WEEKS;
    if !valid_range(spec.precip_weeks) || !valid_range(spec.heat_weeks) {
        return Err(DataError::Spec("causal week ranges must lie in 1..=52".into()));
    }
    if spec.management_weeks == 0 {
        return Err(DataError::Spec("management weeks must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let years: Vec<i32> = (spec.start_year..=spec.end_year).collect();
    let m = spec.management_weeks;

    // Static structure.
    let state_of = |c: usize| (c * spec.states / spec.counties) as u32 + 1;
    let state_temp: Vec<f64> = (0..spec.states).map(|_| 1.5 * normal(&mut rng)).collect();
    let state_wet: Vec<f64> = (0..spec.states).map(|_| 0.3 * normal(&mut rng)).collect();
    let county_temp: Vec<f64> = (0..spec.counties).map(|_| 0.7 * normal(&mut rng)).collect();
    let latent: Vec<f64> = (0..spec.counties).map(|_| normal(&mut rng)).collect();

    let loadings: Vec<(f64, f64, f64, f64, f64)> = (0..SOIL_VARS)
        .map(|_| {
            (
                rng.random_range(5.0..50.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.5..3.0),
                rng.random_range(0.0..TAU),
            )
        })
        .collect();
    let mut soil = Vec::with_capacity(spec.counties);
    for &q in latent.iter() {
        let mut profile = vec![0.0; SOIL_LEN];
        for (v, &(level, load, depth_slope, freq, phase)) in loadings.iter().enumerate() {
            let shape = (freq * q + phase).sin();
            for d in 0..SOIL_DEPTHS {
                let noise = 0.3 * normal(&mut rng);
                profile[v * SOIL_DEPTHS + d] =
                    round_to(level + load * shape + depth_slope * d as f64 + noise, 3);
            }
        }
        let surface = vec![
            round_to((2.0 + 1.5 * normal(&mut rng)).abs(), 3),
            round_to((0.6 + 0.12 * q.cos() + 0.03 * normal(&mut rng)).clamp(0.0, 1.0), 4),
            round_to((0.55 + 0.1 * (2.0 * q).sin() + 0.05 * normal(&mut rng)).clamp(0.0, 1.0), 4),
            round_to(120.0 + 15.0 * q.abs() + 10.0 * normal(&mut rng), 2),
        ];
        soil.push((profile, surface));
    }

    // Planting progress per state-year, logistic in the week.
    let mut management = Vec::with_capacity(spec.states * years.len());
    for _ in 0..spec.states {
        let state_mid = 6.0 + 0.8 * normal(&mut rng);
        for _ in &years {
            let mid = state_mid + 1.2 * normal(&mut rng);
            let width = 1.2 + 0.2 * rng.random::<f64>();
            let series: Vec<f64> = (1..=m)
                .map(|w| round_to(100.0 / (1.0 + (-(w as f64 - mid) / width).exp()), 2))
                .collect();
            management.push(series);
        }
    }

    // Year-level anomalies shared by every county.
    let year_wet: Vec<f64> = years.iter().map(|_| spec.year_wet_sd * normal(&mut rng)).collect();
    let year_heat: Vec<f64> = years.iter().map(|_| spec.year_heat_sd * normal(&mut rng)).collect();

    let mut records = Vec::with_capacity(spec.counties * years.len());
    for c in 0..spec.counties {
        let state = state_of(c);
        let s = state as usize - 1;
        for (yi, &year) in years.iter().enumerate() {
            let mut weather = vec![0.0; WEATHER_LEN];
            for w in 1..=WEEKS {
                let temp_shift = state_temp[s] + county_temp[c] + year_heat[yi] + 1.8 * normal(&mut rng);
                let wet = (state_wet[s] + year_wet[yi] + spec.week_wet_sd * normal(&mut rng)).exp();
                let precip = seasonal(w, 1.4, 3.6, 24.0) * wet;
                let tmax = seasonal(w, -2.0, 29.0, 29.0) + temp_shift;
                let tmin = tmax - 10.0 + 1.5 * normal(&mut rng);
                let srad = seasonal(w, 150.0, 420.0, 25.0) - 25.0 * (wet - 1.0) + 20.0 * normal(&mut rng);
                let swe = (seasonal(w, -60.0, 40.0, 1.0) + 8.0 * normal(&mut rng)).max(0.0);
                let vp = 610.0 * (17.27 * tmin / (tmin + 237.3)).exp() * (1.0 + 0.05 * normal(&mut rng));
                let values = [precip, srad, swe, tmax, tmin, vp];
                for (v, value) in values.iter().enumerate() {
                    weather[v * WEEKS + w - 1] = round_to(*value, 3);
                }
            }
            let precip_mean = mean_weeks(&weather, 0, spec.precip_weeks);
            let heat: f64 = (spec.heat_weeks.0..=spec.heat_weeks.1)
                .map(|w| (weather[3 * WEEKS + w - 1] - spec.heat_threshold).max(0.0))
                .sum::<f64>()
                / (spec.heat_weeks.1 - spec.heat_weeks.0 + 1) as f64;
            let y = spec.base
                + spec.trend * (year - spec.start_year) as f64
                + spec.alpha * precip_mean
                + spec.beta * latent[c]
                + spec.gamma * heat
                + spec.noise_sd * normal(&mut rng);

            let mut r = CountyYearRecord::zeroed(c as u32 + 1, state, year, spec.crop, m);
            r.yield_bu_acre = Some(round_to(y, 3));
            r.weather = weather;
            r.soil_profile = soil[c].0.clone();
            r.soil_surface = soil[c].1.clone();
            r.management = management[s * years.len() + yi].clone();
            records.push(r);
        }
    }

    punch_soil_holes(&mut records, spec, &mut rng);
    punch_management_holes(&mut records, spec, years.len(), &mut rng);

    let causal = CausalMeta {
        causal_variables: vec!["precipitation".into(), "max temperature".into()],
        precipitation_weeks: (spec.precip_weeks.0..=spec.precip_weeks.1).collect(),
        heat_weeks: (spec.heat_weeks.0..=spec.heat_weeks.1).collect(),
        alpha: spec.alpha,
        beta: spec.beta,
        gamma: spec.gamma,
        trend: spec.trend,
        base: spec.base,
        heat_threshold: spec.heat_threshold,
        noise_sd: spec.noise_sd,
        soil_latent: latent.iter().enumerate().map(|(c, &q)| (c as u32 + 1, q)).collect(),
    };
    Ok(SyntheticDataset {
        records,
        meta: SyntheticMeta {
            spec: spec.clone(),
            causal,
        },
    })
}

fn mean_weeks(weather: &[f64], var: usize, (a, b): (usize, usize)) -> f64 {
    (a..=b).map(|w| weather[var * WEEKS + w - 1]).sum::<f64>() / (b - a + 1) as f64
}

/// Marks soil cells missing per county, keeping at least one observed county
/// per column.
fn punch_soil_holes(records: &mut [CountyYearRecord], spec: &SyntheticSpec, rng: &mut ChaCha8Rng) {
    let years = (spec.end_year - spec.start_year + 1) as usize;
    let cells = SOIL_LEN + SURFACE_VARS;
    let mut missing = vec![vec![false; cells]; spec.counties];
    for row in missing.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.random::<f64>() < spec.missing_soil;
        }
    }
    for i in 0..cells {
        if missing.iter().all(|row| row[i]) {
            missing[0][i] = false;
        }
    }
    for (c, row) in missing.iter().enumerate() {
        for r in &mut records[c * years..(c + 1) * years] {
            for (i, &gone) in row.iter().enumerate() {
                if !gone {
                    continue;
                }
                if i < SOIL_LEN {
                    r.soil_profile[i] = f64::NAN;
                    r.soil_state[i] = CellState::Missing;
                } else {
                    r.soil_surface[i - SOIL_LEN] = f64::NAN;
                    r.surface_state[i - SOIL_LEN] = CellState::Missing;
                }
            }
        }
    }
}

/// Marks planting-progress weeks missing per state-year, keeping at least one
/// observed state per (year, week).
fn punch_management_holes(
    records: &mut [CountyYearRecord],
    spec: &SyntheticSpec,
    years: usize,
    rng: &mut ChaCha8Rng,
) {
    let m = spec.management_weeks;
    let mut missing = vec![vec![vec![false; m]; years]; spec.states];
    for state in missing.iter_mut() {
        for year in state.iter_mut() {
            for cell in year.iter_mut() {
                *cell = rng.random::<f64>() < spec.missing_management;
            }
        }
    }
    for y in 0..years {
        for w in 0..m {
            if missing.iter().all(|s| s[y][w]) {
                missing[0][y][w] = false;
            }
        }
    }
    for r in records.iter_mut() {
        let s = r.state_id as usize - 1;
        let y = (r.year - spec.start_year) as usize;
        for w in 0..m {
            if missing[s][y][w] {
                r.management[w] = f64::NAN;
                r.management_state[w] = CellState::Missing;
            }
        }
    }
}

impl SyntheticDataset {
    /// Writes the tables and `synthetic_meta.json` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        super::io::write_dir(dir, &self.records)?;
        let json = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        let path = dir.join(META_FILE);
        std::fs::write(&path, json + "\n").map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Reads `synthetic_meta.json` from a data directory.
pub fn read_meta(dir: &Path) -> Result<SyntheticMeta, DataError> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| DataError::Inconsistent(format!("{META_FILE}: {e}")))
}
