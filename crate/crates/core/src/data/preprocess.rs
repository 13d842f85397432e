use std::collections::{BTreeMap, BTreeSet};

use super::records::{CellState, CountyYearRecord, Crop};
use super::DataError;
use crate::features::{SOIL_DEPTHS, SOIL_LEN, SURFACE_VARS, WEEKS};

/// Collapses a 365- or 366-day series to 52 weekly means.
///
/// Weeks 1–51 cover seven days each; week 52 takes the remaining 8 or 9.
pub fn weekly_average(daily: &[f64]) -> Result<Vec<f64>, DataError> {
    if daily.len() != 365 && daily.len() != 366 {
        return Err(DataError::DailyLength(daily.len()));
    }
    let mut out = Vec::with_capacity(WEEKS);
    for w in 0..WEEKS {
        let start = 7 * w;
        let end = if w + 1 == WEEKS { daily.len() } else { start + 7 };
        let days = &daily[start..end];
        out.push(days.iter().sum::<f64>() / days.len() as f64);
    }
    Ok(out)
}

/// A soil column: one profile variable at one depth, or one surface variable.
/// Indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoilColumn {
    Profile { variable: usize, depth: usize },
    Surface { variable: usize },
}

impl SoilColumn {
    fn cell<'a>(&self, r: &'a mut CountyYearRecord) -> (&'a mut f64, &'a mut CellState) {
        match *self {
            SoilColumn::Profile { variable, depth } => {
                let i = variable * SOIL_DEPTHS + depth;
                (&mut r.soil_profile[i], &mut r.soil_state[i])
            }
            SoilColumn::Surface { variable } => {
                (&mut r.soil_surface[variable], &mut r.surface_state[variable])
            }
        }
    }

    fn read(&self, r: &CountyYearRecord) -> (f64, CellState) {
        match *self {
            SoilColumn::Profile { variable, depth } => {
                let i = variable * SOIL_DEPTHS + depth;
                (r.soil_profile[i], r.soil_state[i])
            }
            SoilColumn::Surface { variable } => (r.soil_surface[variable], r.surface_state[variable]),
        }
    }

    fn name(&self) -> String {
        match *self {
            SoilColumn::Profile { variable, depth } => {
                format!("soil variable {} depth {}", variable + 1, depth + 1)
            }
            SoilColumn::Surface { variable } => format!("soil surface variable {}", variable + 1),
        }
    }

    pub fn all() -> Vec<SoilColumn> {
        let mut cols: Vec<SoilColumn> = (0..SOIL_LEN)
            .map(|i| SoilColumn::Profile {
                variable: i / SOIL_DEPTHS,
                depth: i % SOIL_DEPTHS,
            })
            .collect();
        cols.extend((0..SURFACE_VARS).map(|variable| SoilColumn::Surface { variable }));
        cols
    }
}

/// Fills missing cells of one soil column with the mean over counties.
///
/// Soil is static per county, so each county contributes its value once.
/// Returns the number of cells filled.
pub fn impute_column_mean(
    records: &mut [CountyYearRecord],
    column: SoilColumn,
) -> Result<usize, DataError> {
    let mut per_county: BTreeMap<u32, f64> = BTreeMap::new();
    for r in records.iter() {
        let (v, state) = column.read(r);
        if state != CellState::Missing {
            per_county.entry(r.county_id).or_insert(v);
        }
    }
    let missing = records
        .iter()
        .filter(|r| column.read(r).1 == CellState::Missing)
        .count();
    if missing == 0 {
        return Ok(0);
    }
    if per_county.is_empty() {
        return Err(DataError::FullyMissing(column.name()));
    }
    let mean = per_county.values().sum::<f64>() / per_county.len() as f64;
    for r in records.iter_mut() {
        let (v, state) = column.cell(r);
        if *state == CellState::Missing {
            *v = mean;
            *state = CellState::Imputed;
        }
    }
    Ok(missing)
}

/// Imputes every soil profile and surface column.
pub fn impute_soil(records: &mut [CountyYearRecord]) -> Result<usize, DataError> {
    let mut filled = 0;
    for column in SoilColumn::all() {
        filled += impute_column_mean(records, column)?;
    }
    Ok(filled)
}

/// Fills missing planting progress with the mean of the same week across
/// states in the same year.
///
/// A filled value is then clamped between the state's previous week and its
/// next observed week, so each series stays non-decreasing.
pub fn impute_management(records: &mut [CountyYearRecord]) -> Result<usize, DataError> {
    let Some(m) = records.first().map(|r| r.management.len()) else {
        return Ok(0);
    };
    // One series per (state, year); counties inherit their state's series.
    let mut series: BTreeMap<(i32, u32), (Vec<f64>, Vec<CellState>)> = BTreeMap::new();
    for r in records.iter() {
        series
            .entry((r.year, r.state_id))
            .or_insert_with(|| (r.management.clone(), r.management_state.clone()));
    }
    let years: BTreeSet<i32> = series.keys().map(|k| k.0).collect();
    for year in years {
        let states: Vec<u32> = series
            .range((year, 0)..=(year, u32::MAX))
            .map(|(k, _)| k.1)
            .collect();
        let mut week_mean = vec![None; m];
        for (w, slot) in week_mean.iter_mut().enumerate() {
            let observed: Vec<f64> = states
                .iter()
                .map(|s| &series[&(year, *s)])
                .filter(|(_, st)| st[w] != CellState::Missing)
                .map(|(v, _)| v[w])
                .collect();
            if !observed.is_empty() {
                *slot = Some(observed.iter().sum::<f64>() / observed.len() as f64);
            }
        }
        for s in states {
            let (values, state) = series.get_mut(&(year, s)).unwrap();
            for w in 0..m {
                if state[w] != CellState::Missing {
                    continue;
                }
                let mean = week_mean[w].ok_or(DataError::ManagementUnobserved { year, week: w + 1 })?;
                let lo = if w > 0 { values[w - 1] } else { 0.0 };
                let hi = (w + 1..m)
                    .find(|&j| state[j] == CellState::Observed)
                    .map_or(100.0, |j| values[j]);
                values[w] = mean.max(lo).min(hi.max(lo));
                state[w] = CellState::Imputed;
            }
        }
    }
    let mut filled = 0;
    for r in records.iter_mut() {
        if r.management_state.contains(&CellState::Missing) {
            let (values, state) = &series[&(r.year, r.state_id)];
            filled += r
                .management_state
                .iter()
                .filter(|s| **s == CellState::Missing)
                .count();
            r.management.clone_from(values);
            r.management_state.clone_from(state);
        }
    }
    Ok(filled)
}

/// Per-year mean of the observed yields. Years without any are omitted.
pub fn compute_avg_yields(pairs: impl IntoIterator<Item = (i32, Option<f64>)>) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for (year, y) in pairs {
        if let Some(y) = y {
            let e = acc.entry(year).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(y, (s, n))| (y, s / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct YearSummary {
    pub crop: Crop,
    pub year: i32,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Population mean, sd and count of observed yields per (crop, year).
pub fn summarize_dataset<'a>(
    records: impl IntoIterator<Item = &'a CountyYearRecord>,
    years: Option<&[i32]>,
) -> Vec<YearSummary> {
    let mut groups: BTreeMap<(Crop, i32), Vec<f64>> = BTreeMap::new();
    for r in records {
        if years.is_some_and(|ys| !ys.contains(&r.year)) {
            continue;
        }
        if let Some(y) = r.yield_bu_acre {
            groups.entry((r.crop, r.year)).or_default().push(y);
        }
    }
    groups
        .into_iter()
        .map(|((crop, year), ys)| {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            YearSummary {
                crop,
                year,
                mean,
                sd: var.sqrt(),
                count: ys.len(),
            }
        })
        .collect()
}
