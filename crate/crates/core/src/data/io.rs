//! CSV ingestion and export of county-year tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::records::{CellState, CountyYearRecord, Crop};
use super::DataError;
use crate::features::{SOIL_DEPTHS, SOIL_LEN, SOIL_VARS, SURFACE_VARS, WEATHER_LEN, WEATHER_VARS, WEEKS};

pub const YIELD_FILE: &str = "yield.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const SOIL_FILE: &str = "soil.csv";
pub const SURFACE_FILE: &str = "soil_surface.csv";
pub const MANAGEMENT_FILE: &str = "management.csv";

struct Table {
    file: String,
    reader: csv::Reader<File>,
    columns: Vec<usize>,
    names: &'static [&'static str],
}

impl Table {
    fn open(dir: &Path, file: &str, names: &'static [&'static str]) -> Result<Self, DataError> {
        let path = dir.join(file);
        let handle = File::open(&path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(handle);
        let headers = reader.headers().map_err(|e| csv_error(file, e))?.clone();
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let idx = headers.iter().position(|h| h == *name).ok_or_else(|| DataError::Csv {
                file: file.to_string(),
                line: 1,
                column: name.to_string(),
                message: "missing header".into(),
            })?;
            columns.push(idx);
        }
        Ok(Self {
            file: file.to_string(),
            reader,
            columns,
            names,
        })
    }

    /// Calls `f` with a parsed-field accessor for every data row.
    fn for_each(
        &mut self,
        mut f: impl FnMut(&Row<'_>) -> Result<(), DataError>,
    ) -> Result<(), DataError> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    let row = Row {
                        table: self,
                        record: &record,
                        line,
                    };
                    f(&row)?;
                }
                Err(e) => return Err(csv_error(&self.file, e)),
            }
        }
    }
}

struct Row<'a> {
    table: &'a Table,
    record: &'a csv::StringRecord,
    line: u64,
}

impl Row<'_> {
    fn raw(&self, col: usize) -> &str {
        self.record.get(self.table.columns[col]).unwrap_or("")
    }

    fn error(&self, col: usize, message: String) -> DataError {
        DataError::Csv {
            file: self.table.file.clone(),
            line: self.line,
            column: self.table.names[col].to_string(),
            message,
        }
    }

    fn get<T: FromStr>(&self, col: usize) -> Result<T, DataError> {
        let raw = self.raw(col);
        raw.parse()
            .map_err(|_| self.error(col, format!("cannot parse '{raw}'")))
    }

    /// Empty cells read as `None`; a present value must be finite.
    fn optional(&self, col: usize) -> Result<Option<f64>, DataError> {
        let raw = self.raw(col);
        if raw.is_empty() {
            return Ok(None);
        }
        let v: f64 = self.get(col)?;
        if !v.is_finite() {
            return Err(self.error(col, format!("non-finite value '{raw}'")));
        }
        Ok(Some(v))
    }

    fn value(&self, col: usize) -> Result<f64, DataError> {
        self.optional(col)?
            .ok_or_else(|| self.error(col, "empty value".into()))
    }

    fn index(&self, col: usize, max: usize) -> Result<usize, DataError> {
        let v: usize = self.get(col)?;
        if v == 0 || v > max {
            return Err(self.error(col, format!("{v} outside 1..={max}")));
        }
        Ok(v - 1)
    }
}

fn csv_error(file: &str, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Csv {
        file: file.to_string(),
        line,
        column: String::new(),
        message: e.to_string(),
    }
}

/// Reads the five tables from `dir` for one crop.
///
/// Missing soil and management cells are flagged, not filled; call
/// [`super::impute_soil`] and [`super::impute_management`] afterwards.
pub fn load_dir(dir: &Path, crop: Crop) -> Result<Vec<CountyYearRecord>, DataError> {
    let mut yields: Vec<(u32, u32, i32, Option<f64>)> = Vec::new();
    let mut table = Table::open(
        dir,
        YIELD_FILE,
        &["county_id", "state_id", "year", "crop", "yield_bu_acre"],
    )?;
    table.for_each(|row| {
        let c: Crop = row.get::<String>(3)?.parse().map_err(|e| row.error(3, e))?;
        if c == crop {
            yields.push((row.get(0)?, row.get(1)?, row.get(2)?, row.optional(4)?));
        }
        Ok(())
    })?;

    let mut weather: BTreeMap<(u32, i32), Vec<f64>> = BTreeMap::new();
    for &(county, _, year, _) in &yields {
        weather.insert((county, year), vec![f64::NAN; WEATHER_LEN]);
    }
    let mut table = Table::open(
        dir,
        WEATHER_FILE,
        &["county_id", "year", "variable", "week", "value"],
    )?;
    table.for_each(|row| {
        let key = (row.get(0)?, row.get(1)?);
        let var = row.index(2, WEATHER_VARS)?;
        let week = row.index(3, WEEKS)?;
        let v = row.value(4)?;
        if let Some(w) = weather.get_mut(&key) {
            w[var * WEEKS + week] = v;
        }
        Ok(())
    })?;

    let mut soil: BTreeMap<u32, (Vec<f64>, Vec<CellState>)> = BTreeMap::new();
    let mut table = Table::open(dir, SOIL_FILE, &["county_id", "variable", "depth_index", "value"])?;
    table.for_each(|row| {
        let county: u32 = row.get(0)?;
        let i = row.index(1, SOIL_VARS)? * SOIL_DEPTHS + row.index(2, SOIL_DEPTHS)?;
        let entry = soil
            .entry(county)
            .or_insert_with(|| (vec![f64::NAN; SOIL_LEN], vec![CellState::Missing; SOIL_LEN]));
        if let Some(v) = row.optional(3)? {
            entry.0[i] = v;
            entry.1[i] = CellState::Observed;
        }
        Ok(())
    })?;

    let mut surface: BTreeMap<u32, (Vec<f64>, Vec<CellState>)> = BTreeMap::new();
    let mut table = Table::open(dir, SURFACE_FILE, &["county_id", "variable", "value"])?;
    table.for_each(|row| {
        let county: u32 = row.get(0)?;
        let i = row.index(1, SURFACE_VARS)?;
        let entry = surface.entry(county).or_insert_with(|| {
            (vec![f64::NAN; SURFACE_VARS], vec![CellState::Missing; SURFACE_VARS])
        });
        if let Some(v) = row.optional(2)? {
            entry.0[i] = v;
            entry.1[i] = CellState::Observed;
        }
        Ok(())
    })?;

    let mut management: BTreeMap<(u32, i32), BTreeMap<usize, Option<f64>>> = BTreeMap::new();
    let mut weeks = 0usize;
    let mut table = Table::open(dir, MANAGEMENT_FILE, &["state_id", "year", "week", "cum_planted_pct"])?;
    table.for_each(|row| {
        let week: usize = row.get(2)?;
        if week == 0 {
            return Err(row.error(2, "weeks are numbered from 1".into()));
        }
        let v = row.optional(3)?;
        if let Some(v) = v {
            if !(0.0..=100.0).contains(&v) {
                return Err(row.error(3, format!("{v} outside 0..=100")));
            }
        }
        weeks = weeks.max(week);
        management
            .entry((row.get(0)?, row.get(1)?))
            .or_default()
            .insert(week - 1, v);
        Ok(())
    })?;

    let mut records = Vec::with_capacity(yields.len());
    for (county, state, year, y) in yields {
        let w = weather.remove(&(county, year)).unwrap();
        if let Some(i) = w.iter().position(|v| v.is_nan()) {
            return Err(DataError::Inconsistent(format!(
                "{WEATHER_FILE}: county {county} year {year} has no value for variable {} week {}",
                i / WEEKS + 1,
                i % WEEKS + 1
            )));
        }
        let mut r = CountyYearRecord::zeroed(county, state, year, crop, weeks);
        r.yield_bu_acre = y;
        r.weather = w;
        (r.soil_profile, r.soil_state) = soil
            .get(&county)
            .cloned()
            .unwrap_or_else(|| (vec![f64::NAN; SOIL_LEN], vec![CellState::Missing; SOIL_LEN]));
        (r.soil_surface, r.surface_state) = surface.get(&county).cloned().unwrap_or_else(|| {
            (vec![f64::NAN; SURFACE_VARS], vec![CellState::Missing; SURFACE_VARS])
        });
        let series = management.get(&(state, year));
        for week in 0..weeks {
            match series.and_then(|s| s.get(&week).copied().flatten()) {
                Some(v) => r.management[week] = v,
                None => {
                    r.management[week] = f64::NAN;
                    r.management_state[week] = CellState::Missing;
                }
            }
        }
        records.push(r);
    }
    Ok(records)
}

fn create(dir: &Path, file: &str) -> Result<BufWriter<File>, DataError> {
    let path = dir.join(file);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn cell(v: f64, state: CellState) -> String {
    if state == CellState::Missing {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes the five tables for `records` into `dir`, which must exist.
///
/// Soil is written once per county and management once per state-year, taken
/// from the first record that carries them.
pub fn write_dir(dir: &Path, records: &[CountyYearRecord]) -> Result<(), DataError> {
    let io = |file: &str| {
        let path = dir.join(file).display().to_string();
        move |e: std::io::Error| DataError::Io { path: path.clone(), source: e }
    };

    let mut out = create(dir, YIELD_FILE)?;
    let mut text = String::from("county_id,state_id,year,crop,yield_bu_acre\n");
    for r in records {
        let y = r.yield_bu_acre.map(|v| v.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{},{}\n", r.county_id, r.state_id, r.year, r.crop, y));
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(io(YIELD_FILE))?;

    let mut out = create(dir, WEATHER_FILE)?;
    let e = io(WEATHER_FILE);
    out.write_all(b"county_id,year,variable,week,value\n").map_err(&e)?;
    for r in records {
        for (i, v) in r.weather.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", r.county_id, r.year, i / WEEKS + 1, i % WEEKS + 1, v)
                .map_err(&e)?;
        }
    }
    out.flush().map_err(&e)?;

    let mut by_county: BTreeMap<u32, &CountyYearRecord> = BTreeMap::new();
    let mut by_state_year: BTreeMap<(u32, i32), &CountyYearRecord> = BTreeMap::new();
    for r in records {
        by_county.entry(r.county_id).or_insert(r);
        by_state_year.entry((r.state_id, r.year)).or_insert(r);
    }

    let mut out = create(dir, SOIL_FILE)?;
    let e = io(SOIL_FILE);
    out.write_all(b"county_id,variable,depth_index,value\n").map_err(&e)?;
    for (county, r) in &by_county {
        for i in 0..SOIL_LEN {
            writeln!(
                out,
                "{county},{},{},{}",
                i / SOIL_DEPTHS + 1,
                i % SOIL_DEPTHS + 1,
                cell(r.soil_profile[i], r.soil_state[i])
            )
            .map_err(&e)?;
        }
    }
    out.flush().map_err(&e)?;

    let mut out = create(dir, SURFACE_FILE)?;
    let e = io(SURFACE_FILE);
    out.write_all(b"county_id,variable,value\n").map_err(&e)?;
    for (county, r) in &by_county {
        for i in 0..SURFACE_VARS {
            writeln!(out, "{county},{},{}", i + 1, cell(r.soil_surface[i], r.surface_state[i]))
                .map_err(&e)?;
        }
    }
    out.flush().map_err(&e)?;

    let mut out = create(dir, MANAGEMENT_FILE)?;
    let e = io(MANAGEMENT_FILE);
    out.write_all(b"state_id,year,week,cum_planted_pct\n").map_err(&e)?;
    for ((state, year), r) in &by_state_year {
        for (w, (&v, &s)) in r.management.iter().zip(&r.management_state).enumerate() {
            writeln!(out, "{state},{year},{},{}", w + 1, cell(v, s)).map_err(&e)?;
        }
    }
    out.flush().map_err(&e)?;
    Ok(())
}
