use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError, ExperimentResult, ModelKind, PredictionRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub model: ModelKind,
    pub train_rmse: Option<f64>,
    pub train_correlation: Option<f64>,
    pub validation_rmse: f64,
    pub validation_correlation: f64,
    pub n_train: usize,
    pub n_validation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    pub metrics: Vec<MetricRow>,
}

/// SHA-256 over the experiment id, its parameters and the shared config.
pub fn config_hash(experiment: &str, parameters: &serde_json::Value, config: &ExperimentConfig) -> String {
    let canonical = serde_json::json!({
        "experiment": experiment,
        "parameters": parameters,
        "config": config,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(digest.as_slice())
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let err = |e: std::io::Error| ExperimentError::io(path, e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn header(result: &ExperimentResult) -> String {
    format!("# config_hash={} seed={}\n", result.config_hash, result.seed)
}

fn predictions_csv(result: &ExperimentResult, rows: &[PredictionRow]) -> String {
    let mut out = header(result);
    out.push_str("county_id,year,truth,prediction,abs_error\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.county_id, r.year, opt(r.truth), r.prediction, opt(r.abs_error())).unwrap();
    }
    out
}

/// Writes `metrics.json`, `predictions.csv` (headline arm),
/// `predictions_<label>.csv` for other arms, and when present `sweep.csv`,
/// `attribution.csv` and `loss_<label>.csv`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut metrics = serde_json::to_string_pretty(&result.metrics_file()).expect("metrics serialize");
    metrics.push('\n');
    write_atomic(&dir.join("metrics.json"), metrics.as_bytes())?;
    for (i, arm) in result.arms.iter().enumerate() {
        let name = if i == 0 {
            "predictions.csv".to_string()
        } else {
            format!("predictions_{}.csv", arm.label)
        };
        write_atomic(&dir.join(name), predictions_csv(result, &arm.predictions).as_bytes())?;
        if let Some(curve) = &arm.curve {
            let text = header(result) + &curve.to_csv();
            write_atomic(&dir.join(format!("loss_{}.csv", arm.label)), text.as_bytes())?;
        }
    }
    if let Some(sweep) = &result.sweep {
        let mut text = header(result);
        text.push_str("weeks_updated,rmse,mean_pred\n");
        for r in &sweep.rows {
            writeln!(text, "{},{},{}", r.weeks_updated, r.rmse, r.mean_pred).unwrap();
        }
        write_atomic(&dir.join("sweep.csv"), text.as_bytes())?;
    }
    if let Some(report) = &result.attribution {
        let text = header(result) + &report.to_csv();
        write_atomic(&dir.join("attribution.csv"), text.as_bytes())?;
    }
    Ok(())
}
