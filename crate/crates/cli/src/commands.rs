use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use yieldnet::attribution::{guided_attribute, AttributionSource};
use yieldnet::baselines::ForestConfig;
use yieldnet::data::{gen_synthetic, load_dir, load_prepared, summarize_dataset, Crop, Dataset, SyntheticSpec};
use yieldnet::experiments::{
    ablation_run, config_hash, evaluate, feature_subset_run, kfold_location_cv, temporal_holdout, temporal_splits,
    weather_sweep_run, write_atomic, write_outputs, Arm, ExperimentConfig, ExperimentResult, Fitted, ModelKind,
    SplitMetrics,
};
use yieldnet::features::FeatureGroup;
use yieldnet::training::TrainConfig;

use crate::settings::{ConfigFile, List, Span, Weeks};
use crate::{CliError, Command, Common, DataArgs, Experiment, FitArgs, RunArgs};

/// Executes one command and returns its one-line summary.
pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::GenSynthetic { common, out, counties, states, years, crop } => {
            let file = setup(&common)?;
            let defaults = SyntheticSpec::default();
            let Span(start_year, end_year) =
                file.pick_or(years, "years", Span(defaults.start_year, defaults.end_year))?;
            let spec = SyntheticSpec {
                counties: file.pick_or(counties, "counties", defaults.counties)?,
                states: file.pick_or(states, "states", defaults.states)?,
                start_year,
                end_year,
                seed: file.pick_or(common.seed, "seed", defaults.seed)?,
                crop: file.pick_or(crop, "crop", defaults.crop)?,
                ..defaults
            };
            let out: PathBuf = file.require(out, "out")?;
            let data = gen_synthetic(&spec)?;
            write_dir_atomic(&out, |dir| data.write(dir).map_err(CliError::from))?;
            Ok(format!(
                "gen-synthetic: {} records, {} counties, {}-{}, seed {} -> {}",
                data.records.len(),
                spec.counties,
                spec.start_year,
                spec.end_year,
                spec.seed,
                out.display()
            ))
        }
        Command::Train { common, data, fit, model, year, model_file, out } => {
            let file = setup(&common)?;
            let cfg = experiment_config(&file, &common, &fit, None)?;
            let kind = file.pick_or(model, "model", ModelKind::CnnRnn)?;
            let year = file.require(year, "year")?;
            let model_file: PathBuf = file.require(model_file, "model-file")?;
            let out: Option<PathBuf> = file.pick(out, "out")?;
            let ds = load_data(&file, &data)?;
            let result = temporal_holdout(&ds, year, kind, &cfg)?;
            let fitted = result.primary().model.as_ref().expect("holdout keeps its model");
            fitted.save(&model_file)?;
            if let Some(dir) = &out {
                write_outputs(dir, &result)?;
            }
            Ok(format!("{} -> {}", result.summary_line(), model_file.display()))
        }
        Command::Evaluate { common, data, model_file, year, k, out } => {
            let file = setup(&common)?;
            let model_file: PathBuf = file.require(model_file, "model-file")?;
            let year = file.require(year, "year")?;
            let out: Option<PathBuf> = file.pick(out, "out")?;
            let model = Fitted::load(&model_file)?;
            let k = match &model {
                Fitted::CnnRnn(m) => m.config.k,
                _ => file.pick_or(k, "k", 5)?,
            };
            let ds = load_data(&file, &data)?;
            let cfg = ExperimentConfig { seed: file.pick_or(common.seed, "seed", 0)?, k, ..Default::default() };
            let result = scored("evaluate", &ds, &model, year, &cfg)?;
            if let Some(dir) = &out {
                write_outputs(dir, &result)?;
            }
            Ok(summary(&result))
        }
        Command::Attribute { common, data, model_file, year, attribution_source, out } => {
            let file = setup(&common)?;
            let model_file: PathBuf = file.require(model_file, "model-file")?;
            let year = file.require(year, "year")?;
            let out: PathBuf = file.require(out, "out")?;
            let source = attribution_source_of(&file, attribution_source)?;
            let model = Fitted::load(&model_file)?;
            let Fitted::CnnRnn(cnn) = &model else {
                return Err(CliError::usage(format!("attribution needs a CNN-RNN model, got {}", model.kind())));
            };
            let ds = load_data(&file, &data)?;
            let cfg = ExperimentConfig {
                seed: file.pick_or(common.seed, "seed", 0)?,
                k: cnn.config.k,
                attribution_source: source,
                ..Default::default()
            };
            let mut result = scored("attribute", &ds, &model, year, &cfg)?;
            let splits = temporal_splits(&ds, &ds, &ds, cfg.k, year)?;
            let report = guided_attribute(cnn, &splits.validation, source);
            let top: Vec<String> =
                report.ranked(FeatureGroup::Weather).iter().take(5).map(|&i| report.layout.describe(i)).collect();
            result.attribution = Some(report);
            write_outputs(&out, &result)?;
            Ok(format!("attribute: top weather features {} -> {}", top.join("; "), out.display()))
        }
        Command::Experiment(e) => experiment(e),
        Command::Summarize { common, data, years, out } => {
            let file = setup(&common)?;
            let dir = data_dir(&file, &data)?;
            let crop = file.pick_or(data.crop.clone(), "crop", Crop::Corn)?;
            let span: Option<Span<i32>> = file.pick(years, "years")?;
            let out: Option<PathBuf> = file.pick(out, "out")?;
            let records = load_dir(&dir, crop)?;
            let years: Option<Vec<i32>> = span.map(|Span(a, b)| (a..=b).collect());
            let rows = summarize_dataset(&records, years.as_deref());
            let mut csv = String::from("crop,year,mean,sd,count\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{},{}\n", r.crop, r.year, r.mean, r.sd, r.count));
            }
            match out {
                Some(path) => {
                    write_atomic(&path, csv.as_bytes())?;
                    Ok(format!("summarize: {} years of {crop} -> {}", rows.len(), path.display()))
                }
                None => Ok(csv.trim_end().to_string()),
            }
        }
    }
}

fn experiment(e: Experiment) -> Result<String, CliError> {
    let (run, result) = match e {
        Experiment::Holdout { run, model } => {
            let (file, ds, cfg, year) = prepare_run(&run)?;
            let kind = file.pick_or(model, "model", ModelKind::CnnRnn)?;
            let result = temporal_holdout(&ds, year, kind, &cfg)?;
            (run, result)
        }
        Experiment::Cv { run, model, folds } => {
            let (file, ds, cfg, year) = prepare_run(&run)?;
            let kind = file.pick_or(model, "model", ModelKind::CnnRnn)?;
            let folds = file.pick_or(folds, "folds", 5)?;
            let result = kfold_location_cv(&ds, folds, year, kind, &cfg)?;
            (run, result)
        }
        Experiment::Ablation { run, sources } => {
            let (file, ds, cfg, year) = prepare_run(&run)?;
            let default = "W,S,M,AVG".parse().expect("valid sources");
            let List(sources) = file.pick_or(sources, "sources", default)?;
            let result = ablation_run(&ds, &sources, year, &cfg)?;
            (run, result)
        }
        Experiment::Subset { run, select_year, fractions } => {
            let (file, ds, cfg, year) = prepare_run(&run)?;
            let select_year = file.pick_or(select_year, "select-year", year - 1)?;
            let List(fractions) = file.pick_or(fractions, "fractions", List(vec![1.0, 0.75, 0.5]))?;
            let result = feature_subset_run(&ds, select_year, year, &fractions, &cfg)?;
            (run, result)
        }
        Experiment::WeatherSweep { run, weeks, step, model_file } => {
            let (file, ds, cfg, year) = prepare_run(&run)?;
            let Weeks(weeks) = file.pick_or(weeks, "weeks", Weeks((22..=39).collect()))?;
            let step = file.pick_or(step, "step", 1)?;
            let model_file: Option<PathBuf> = file.pick(model_file, "model-file")?;
            let pretrained = model_file.as_deref().map(Fitted::load).transpose()?;
            if let Some(m) = &pretrained {
                if !matches!(m, Fitted::CnnRnn(_)) {
                    return Err(CliError::usage(format!("the sweep needs a CNN-RNN model, got {}", m.kind())));
                }
            }
            let result = weather_sweep_run(&ds, year, &weeks, step, pretrained.as_ref(), &cfg)?;
            (run, result)
        }
    };
    let file = config_file(&run.common)?;
    let out: PathBuf = file.require(run.out.clone(), "out")?;
    write_outputs(&out, &result)?;
    let mut line = summary(&result);
    if let Some(sweep) = &result.sweep {
        let (first, last) = (sweep.rows.first().unwrap(), sweep.rows.last().unwrap());
        line.push_str(&format!(
            "; sweep RMSE {:.4} -> {:.4} over {} steps",
            first.rmse,
            last.rmse,
            sweep.rows.len()
        ));
    }
    Ok(format!("{line} -> {}", out.display()))
}

fn prepare_run(run: &RunArgs) -> Result<(ConfigFile, Dataset, ExperimentConfig, i32), CliError> {
    let file = setup(&run.common)?;
    file.require::<PathBuf>(run.out.clone(), "out")?;
    let cfg = experiment_config(&file, &run.common, &run.fit, run.attribution_source.clone())?;
    let year = file.require(run.year, "year")?;
    let ds = load_data(&file, &run.data)?;
    Ok((file, ds, cfg, year))
}

fn config_file(common: &Common) -> Result<ConfigFile, CliError> {
    match &common.config {
        Some(path) => ConfigFile::load(path),
        None => Ok(ConfigFile::default()),
    }
}

/// Reads the config file and sizes the global thread pool.
fn setup(common: &Common) -> Result<ConfigFile, CliError> {
    let file = config_file(common)?;
    let threads = match file.pick(common.threads, "threads")? {
        Some(n) => Some(n),
        None => match std::env::var("YIELDNET_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::usage(format!("YIELDNET_THREADS: {e}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(file)
}

fn attribution_source_of(file: &ConfigFile, flag: Option<String>) -> Result<AttributionSource, CliError> {
    match file.pick_or(flag, "attribution-source", "lstm-output".to_string())?.as_str() {
        "lstm-output" => Ok(AttributionSource::LstmOutput),
        "head" => Ok(AttributionSource::Head),
        other => Err(CliError::usage(format!("unknown attribution source '{other}' (expected lstm-output or head)"))),
    }
}

fn experiment_config(
    file: &ConfigFile,
    common: &Common,
    fit: &FitArgs,
    attribution_source: Option<String>,
) -> Result<ExperimentConfig, CliError> {
    let d = ExperimentConfig::default();
    let t = TrainConfig::default();
    let train = TrainConfig {
        base_lr: file.pick_or(fit.lr, "lr", t.base_lr)?,
        halve_every: file.pick_or(fit.halve_every, "halve-every", t.halve_every)?,
        max_iters: file.pick_or(fit.iters, "iters", t.max_iters)?,
        batch_size: file.pick_or(fit.batch_size, "batch-size", t.batch_size)?,
        log_every: file.pick_or(fit.log_every, "log-every", t.log_every)?,
        all_step_loss: file.pick_or(fit.all_step_loss, "all-step-loss", t.all_step_loss)?,
        ..t
    };
    train.validate().map_err(CliError::usage)?;
    Ok(ExperimentConfig {
        seed: file.pick_or(common.seed, "seed", d.seed)?,
        k: file.pick_or(fit.k, "k", d.k)?,
        train,
        lasso_lambdas: file.pick_or(fit.lambdas.clone(), "lambdas", List(d.lasso_lambdas.clone()))?.0,
        forest: ForestConfig {
            n_trees: file.pick_or(fit.trees, "trees", d.forest.n_trees)?,
            ..d.forest.clone()
        },
        attribution_source: attribution_source_of(file, attribution_source)?,
        ..d
    })
}

fn data_dir(file: &ConfigFile, data: &DataArgs) -> Result<PathBuf, CliError> {
    let dir: PathBuf = file.require(data.data.clone(), "data")?;
    if !dir.is_dir() {
        return Err(CliError::io(format!("{}: no such data directory", dir.display())));
    }
    Ok(dir)
}

fn load_data(file: &ConfigFile, data: &DataArgs) -> Result<Dataset, CliError> {
    let dir = data_dir(file, data)?;
    let crop = file.pick_or(data.crop, "crop", Crop::Corn)?;
    Ok(load_prepared(&dir, crop)?)
}

/// Predicts the validation samples at `year` with a saved model.
fn scored(
    experiment: &str,
    ds: &Dataset,
    model: &Fitted,
    year: i32,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult, CliError> {
    let started = Instant::now();
    let splits = temporal_splits(ds, ds, ds, cfg.k, year)?;
    let (metrics, predictions) = evaluate(model, &splits.validation);
    let validation = metrics.unwrap_or(SplitMetrics {
        rmse: f64::NAN,
        correlation: f64::NAN,
        n: 0,
    });
    let parameters = json!({ "crop": ds.crop, "validation_year": year, "model": model.kind() });
    Ok(ExperimentResult {
        experiment: experiment.to_string(),
        config_hash: config_hash(experiment, &parameters, cfg),
        seed: cfg.seed,
        parameters,
        arms: vec![Arm {
            label: model.kind().name().to_string(),
            kind: model.kind(),
            train: None,
            validation,
            predictions,
            model: None,
            curve: None,
        }],
        sweep: None,
        attribution: None,
        runtime: started.elapsed(),
    })
}

fn summary(result: &ExperimentResult) -> String {
    if result.primary().validation.n == 0 {
        format!("{} {}: no validation sample has ground truth", result.experiment, result.primary().label)
    } else {
        result.summary_line()
    }
}

/// Fills a sibling temporary directory, then moves each file into `out`.
fn write_dir_atomic(out: &Path, fill: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::io(format!("{}: {e}", p.display()));
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| io(&parent, e))?;
    let staging = tempfile::tempdir_in(&parent).map_err(|e| io(&parent, e))?;
    fill(staging.path())?;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(staging.path())
        .map_err(|e| io(staging.path(), e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| io(staging.path(), e))?;
    entries.sort();
    for from in entries {
        let to = out.join(from.file_name().expect("file entry"));
        std::fs::rename(&from, &to).map_err(|e| io(&to, e))?;
    }
    Ok(())
}
