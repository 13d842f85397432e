//! County-year records, preprocessing, sequence assembly and synthetic data.

mod io;
mod preprocess;
mod records;
mod sequences;
mod synthetic;

pub use io::{load_dir, write_dir, MANAGEMENT_FILE, SOIL_FILE, SURFACE_FILE, WEATHER_FILE, YIELD_FILE};
pub use preprocess::{
    compute_avg_yields, impute_column_mean, impute_management, impute_soil, summarize_dataset,
    weekly_average, SoilColumn, YearSummary,
};
pub use records::{
    AuditViolation, CellState, CountyYearRecord, Crop, Dataset, Purpose, TargetAudit,
};
pub use sequences::{assemble_sequences, substitute_weather, Assembly, Phase, SequenceSample};
pub use synthetic::{gen_synthetic, read_meta, CausalMeta, SyntheticDataset, SyntheticMeta, SyntheticSpec, META_FILE};

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}, line {line}, column '{column}': {message}")]
    Csv {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("daily series must have 365 or 366 values, got {0}")]
    DailyLength(usize),
    #[error("{0} is missing for every county")]
    FullyMissing(String),
    #[error("planting progress for year {year} week {week} is missing in every state")]
    ManagementUnobserved { year: i32, week: usize },
    #[error("duplicate record for county {county_id} year {year}")]
    Duplicate { county_id: u32, year: i32 },
    #[error("{0}")]
    Inconsistent(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

impl DataError {
    /// Whether the error comes from reading or parsing files rather than
    /// from a violated precondition.
    pub fn is_io(&self) -> bool {
        matches!(self, DataError::Io { .. } | DataError::Csv { .. })
    }
}

/// Loads a data directory for one crop and imputes missing soil and
/// planting-progress cells.
pub fn load_prepared(dir: &Path, crop: Crop) -> Result<Dataset, DataError> {
    let mut records = load_dir(dir, crop)?;
    if records.is_empty() {
        return Err(DataError::Inconsistent(format!("no {crop} records in {}", dir.display())));
    }
    impute_soil(&mut records)?;
    impute_management(&mut records)?;
    Dataset::new(crop, records)
}

/// Imputes an in-memory record set and wraps it in a dataset.
pub fn prepare(crop: Crop, mut records: Vec<CountyYearRecord>) -> Result<Dataset, DataError> {
    impute_soil(&mut records)?;
    impute_management(&mut records)?;
    Dataset::new(crop, records)
}
