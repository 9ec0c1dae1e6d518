//! Subcommand orchestration: wiring ingestion, feature assembly, training,
//! tuning and evaluation together behind the CLI and FFI surfaces.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::Datelike;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::eval;
use crate::features::{
    self, DatasetManifest, FeatureTable, SplitDataset, WindowedDataset,
};
use crate::ingest::{self, DailyLeafSeries, Era5Record};
use crate::nn::{self, CheckpointError, TrainError};
use crate::raster::{self, IndexKind, IndexSample, IndexSeries};
use crate::synth;
use crate::tune::{self, TuneError};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const BEST_CHECKPOINT_FILE: &str = "best_model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Errors grouped by the CLI exit-code contract: usage 1, data 2, numeric 3.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }

    fn data(context: &str, err: impl std::fmt::Display) -> Self {
        PipelineError::Data(format!("{context}: {err}"))
    }
}

impl From<ConfigError> for PipelineError {
    fn from(err: ConfigError) -> Self {
        PipelineError::Usage(err.to_string())
    }
}

impl From<ingest::IngestError> for PipelineError {
    fn from(err: ingest::IngestError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

impl From<raster::RasterError> for PipelineError {
    fn from(err: raster::RasterError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

impl From<features::FeatureError> for PipelineError {
    fn from(err: features::FeatureError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

impl From<eval::EvalError> for PipelineError {
    fn from(err: eval::EvalError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(err: CheckpointError) -> Self {
        PipelineError::Data(err.to_string())
    }
}

impl From<TrainError> for PipelineError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFinite { .. } => {
                PipelineError::Numeric(err.to_string())
            }
            TrainError::Config(_) | TrainError::InvalidThreshold(_) => {
                PipelineError::Usage(err.to_string())
            }
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<TuneError> for PipelineError {
    fn from(err: TuneError) -> Self {
        match err {
            TuneError::Train(inner) => inner.into(),
            TuneError::NoFiniteTrial => PipelineError::Numeric(err_string(&err)),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

fn err_string(e: &dyn std::fmt::Display) -> String {
    e.to_string()
}

fn open(path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(|e| PipelineError::Data(format!("cannot open `{}`: {e}", path.display())))
}

fn create(path: &Path) -> Result<File, PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| PipelineError::data(&format!("cannot create `{}`", parent.display()), e))?;
    }
    File::create(path).map_err(|e| PipelineError::Data(format!("cannot create `{}`: {e}", path.display())))
}

/// All raw inputs ingested into in-memory series.
#[derive(Debug)]
pub struct LoadedData {
    pub leaf: Vec<DailyLeafSeries>,
    pub species_of: BTreeMap<String, String>,
    pub weather: Vec<Era5Record>,
    pub weather_names: Vec<String>,
    pub index_series: Vec<IndexSeries>,
    pub kinds: Vec<IndexKind>,
}

/// Parses all input files and wrangles them into gap-free daily series.
pub fn load_inputs(config: &RunConfig) -> Result<LoadedData, PipelineError> {
    let range = config.years.range();

    let records = ingest::parse_pheno_csv(open(&config.paths.pheno)?)?;
    let records = ingest::filter_years(records, config.years.first, config.years.last);
    if records.is_empty() {
        return Err(PipelineError::Data(format!(
            "no phenology records within {}..{}",
            config.years.first, config.years.last
        )));
    }

    let mut by_tree: BTreeMap<String, Vec<ingest::PhenoRecord>> = BTreeMap::new();
    for record in records {
        by_tree.entry(record.tree_id.clone()).or_default().push(record);
    }
    let trees: Vec<String> = by_tree.keys().cloned().collect();

    let sites = ingest::parse_sites_csv(open(&config.paths.sites)?)?;
    let (coords, dropped) = ingest::attach_coordinates(&trees, &sites)?;
    if !dropped.is_empty() {
        log::warn!("trees without coordinates dropped: {dropped:?}");
    }
    if coords.is_empty() {
        return Err(PipelineError::Data("no tree has site coordinates".into()));
    }

    let mut leaf = Vec::new();
    let mut species_of = BTreeMap::new();
    for tree in coords.keys() {
        // to_daily_series has already warned about the zero-observation years
        let (mut series, _zero_years) = ingest::to_daily_series(&by_tree[tree], range)?;
        ingest::derive_labels(&mut series);
        species_of.insert(tree.clone(), series.species.clone());
        leaf.push(series);
    }

    let selections = config.features.weather_selections();
    let weather_all = ingest::parse_era5_csv(open(&config.paths.era5)?, &selections)?;
    let weather: Vec<Era5Record> = weather_all
        .into_iter()
        .filter(|r| range.contains(r.date.year()))
        .collect();
    let weather_names: Vec<String> =
        selections.iter().map(|s| s.output_name().to_string()).collect();

    let kinds = config.features.index_kinds()?;
    let index_series = load_index_series(&config.paths.raster_dir, &kinds, &coords, range)?;

    Ok(LoadedData { leaf, species_of, weather, weather_names, index_series, kinds })
}

/// Collects `<INDEX>_<date>.asc` grids (or computes them from
/// `<BAND>_<date>.asc` files), samples them at each tree and gap-fills.
fn load_index_series(
    raster_dir: &Path,
    kinds: &[IndexKind],
    coords: &BTreeMap<String, ingest::SiteCoordinate>,
    range: crate::calendar::YearRange,
) -> Result<Vec<IndexSeries>, PipelineError> {
    let entries = std::fs::read_dir(raster_dir)
        .map_err(|e| PipelineError::Data(format!("cannot open `{}`: {e}", raster_dir.display())))?;
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::data("raster dir", e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.ends_with(".asc") {
            files.push((name, entry.path()));
        }
    }
    files.sort();

    let parse_stamp = |name: &str, prefix: &str| -> Option<chrono::NaiveDate> {
        name.strip_prefix(prefix)?
            .strip_prefix('_')?
            .strip_suffix(".asc")
            .and_then(|s| chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
    };

    let mut out = Vec::new();
    for &kind in kinds {
        // Direct index grids take precedence; fall back to band arithmetic.
        let mut dated: Vec<(chrono::NaiveDate, raster::BandGrid)> = Vec::new();
        for (name, path) in &files {
            if let Some(date) = parse_stamp(name, &kind.to_string()) {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| PipelineError::data(&format!("read `{}`", path.display()), e))?;
                let grid = raster::parse_ascii_grid(&text)
                    .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
                dated.push((date, grid));
            }
        }
        if dated.is_empty() {
            let (band_a, band_b) = kind.bands();
            let mut by_date: BTreeMap<chrono::NaiveDate, BTreeMap<raster::Band, raster::BandGrid>> =
                BTreeMap::new();
            for (name, path) in &files {
                for band in [band_a, band_b] {
                    if let Some(date) = parse_stamp(name, &band.to_string()) {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| PipelineError::data(&format!("read `{}`", path.display()), e))?;
                        let grid = raster::parse_ascii_grid(&text)
                            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
                        by_date.entry(date).or_default().insert(band, grid);
                    }
                }
            }
            for (date, bands) in by_date {
                if bands.len() == 2 {
                    dated.push((date, raster::compute_index(kind, &bands)?));
                }
            }
        }
        if dated.is_empty() {
            return Err(PipelineError::Data(format!(
                "no `{kind}` rasters (or band pairs) found in `{}`",
                raster_dir.display()
            )));
        }
        dated.sort_by_key(|(date, _)| *date);

        for (tree, site) in coords {
            let samples: Vec<IndexSample> = dated
                .iter()
                .filter(|(date, _)| range.contains(date.year()))
                .map(|(date, grid)| {
                    raster::sample_at(grid, site.lat, site.lon).map(|value| IndexSample {
                        date: *date,
                        kind,
                        value,
                    })
                })
                .collect::<Result<_, _>>()?;
            out.push(raster::build_index_series(tree, kind, &samples, range)?);
        }
    }
    Ok(out)
}

/// Feature table before scaling/encoding: joined sources plus week-of-year.
fn build_raw_table(data: &LoadedData, config: &RunConfig) -> Result<FeatureTable, PipelineError> {
    let mut table = features::join_sources(
        &data.leaf,
        &data.index_series,
        &data.kinds,
        &data.weather,
        &data.weather_names,
        config.years.range(),
    )?;
    features::add_week_of_year(&mut table)?;
    Ok(table)
}

/// Scaled, encoded and windowed dataset with scaler/encoder fitted on
/// training rows only (training years, holdout tree excluded).
pub struct PreparedTraining {
    pub table: FeatureTable,
    pub split: SplitDataset,
    pub manifest: DatasetManifest,
}

pub fn prepare_training(
    data: &LoadedData,
    config: &RunConfig,
) -> Result<PreparedTraining, PipelineError> {
    let mut table = build_raw_table(data, config)?;
    let train_years = config.years.train_years();
    let holdout = config.holdout_tree.clone();
    let in_fit =
        |row: &features::FeatureRow| train_years.contains(&row.date.year()) && row.tree_id != holdout;

    let scaler = features::fit_minmax(&table, in_fit)?;
    features::apply_minmax(&mut table, &scaler)?;

    let fit_species: Vec<&str> = table
        .rows
        .iter()
        .filter(|r| in_fit(r))
        .map(|r| data.species_of[&r.tree_id].as_str())
        .collect();
    let classes = features::fit_species_classes(fit_species);
    features::one_hot_species(&mut table, &data.species_of, &classes)?;

    let windows = features::make_windows(&table, config.model.window_size)?;
    let split =
        features::split_temporal(&windows, &train_years, config.years.val, &config.holdout_tree)?;
    let manifest = DatasetManifest {
        feature_names: table.feature_names.clone(),
        scaler,
        species_classes: classes,
        window_size: config.model.window_size,
    };
    Ok(PreparedTraining { table, split, manifest })
}

/// Rebuilds the dataset exactly as a checkpoint's manifest describes it
/// (its scaler and species classes), for prediction and evaluation.
pub fn prepare_apply(
    data: &LoadedData,
    config: &RunConfig,
    manifest: &DatasetManifest,
) -> Result<WindowedDataset, PipelineError> {
    let mut table = build_raw_table(data, config)?;
    features::apply_minmax(&mut table, &manifest.scaler)?;
    features::one_hot_species(&mut table, &data.species_of, &manifest.species_classes)?;
    if table.feature_names != manifest.feature_names {
        return Err(PipelineError::Data(format!(
            "dataset columns {:?} do not match checkpoint columns {:?}",
            table.feature_names, manifest.feature_names
        )));
    }
    Ok(features::make_windows(&table, manifest.window_size)?)
}

fn write_run_manifest(config: &RunConfig, subcommand: &str) -> Result<(), PipelineError> {
    let manifest = serde_json::json!({
        "subcommand": subcommand,
        "config_hash": config.hash(),
        "seed": config.seed,
        "artifact_versions": {
            "crate": env!("CARGO_PKG_VERSION"),
            "checkpoint_format": nn::CHECKPOINT_MAGIC,
        },
    });
    let path = config.paths.out_dir.join(format!("manifest_{subcommand}.json"));
    let file = create(&path)?;
    serde_json::to_writer_pretty(file, &manifest)
        .map_err(|e| PipelineError::data("write run manifest", e))?;
    Ok(())
}

/// `synth`: write a complete synthetic dataset to the configured input paths.
pub fn cmd_synth(config: &RunConfig) -> Result<(), PipelineError> {
    let dataset = synth::generate(&config.synth_config());
    let write = |path: &Path, content: &str| -> Result<(), PipelineError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| PipelineError::data(&format!("create `{}`", parent.display()), e))?;
        }
        std::fs::write(path, content)
            .map_err(|e| PipelineError::data(&format!("write `{}`", path.display()), e))
    };
    write(&config.paths.pheno, &dataset.pheno_csv)?;
    write(&config.paths.sites, &dataset.sites_csv)?;
    write(&config.paths.era5, &dataset.era5_csv)?;
    let truth_path = config
        .paths
        .pheno
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("truth_periods.csv");
    write(&truth_path, &dataset.truth_csv)?;
    std::fs::create_dir_all(&config.paths.raster_dir)
        .map_err(|e| PipelineError::data("create raster dir", e))?;
    for (name, content) in &dataset.rasters {
        write(&config.paths.raster_dir.join(name), content)?;
    }
    write_run_manifest(config, "synth")?;
    println!(
        "synth: {} trees, {} rasters, truth at {}",
        config.synth.tree_count,
        dataset.rasters.len(),
        truth_path.display()
    );
    Ok(())
}

/// `ingest`: daily labeled series for all trees with coordinates.
pub fn cmd_ingest(config: &RunConfig) -> Result<(), PipelineError> {
    let data = load_inputs(config)?;
    let path = config.paths.out_dir.join("daily_series.csv");
    ingest::write_daily_series_csv(&data.leaf, create(&path)?)?;
    write_run_manifest(config, "ingest")?;
    println!("ingest: {} trees -> {}", data.leaf.len(), path.display());
    Ok(())
}

/// `build-dataset`: scaled feature table plus its sidecar manifest.
pub fn cmd_build_dataset(config: &RunConfig) -> Result<(), PipelineError> {
    let data = load_inputs(config)?;
    let prepared = prepare_training(&data, config)?;
    let features_path = config.paths.out_dir.join("features.csv");
    features::write_feature_csv(&prepared.table, create(&features_path)?)?;
    let manifest_path = config.paths.out_dir.join("dataset_manifest.json");
    serde_json::to_writer_pretty(create(&manifest_path)?, &prepared.manifest)
        .map_err(|e| PipelineError::data("write dataset manifest", e))?;
    write_run_manifest(config, "build-dataset")?;
    println!(
        "build-dataset: {} rows x {} features -> {}",
        prepared.table.rows.len(),
        prepared.table.feature_names.len(),
        features_path.display()
    );
    Ok(())
}

/// `train`: fit the configured model; write checkpoint and epoch metrics.
pub fn cmd_train(config: &RunConfig) -> Result<(), PipelineError> {
    let data = load_inputs(config)?;
    let prepared = prepare_training(&data, config)?;
    let model_config = config
        .model
        .to_model_config(prepared.manifest.feature_names.len(), config.seed);
    model_config.validate().map_err(PipelineError::from)?;

    let (model, metrics) = nn::train(&prepared.split.train, &prepared.split.val, &model_config)?;

    let ckpt_path = config.paths.out_dir.join(CHECKPOINT_FILE);
    nn::save_checkpoint(&model, &prepared.manifest, create(&ckpt_path)?)?;
    let metrics_path = config.paths.out_dir.join(METRICS_FILE);
    nn::write_metrics_csv(&metrics, create(&metrics_path)?)
        .map_err(|e| PipelineError::data("write metrics", e))?;
    write_run_manifest(config, "train")?;

    if let Some(last) = metrics.last() {
        println!(
            "train: {} epochs, train loss {:.4} acc {:.4}, val loss {} acc {}",
            metrics.len(),
            last.train_loss,
            last.train_acc,
            last.val_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            last.val_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    println!("train: checkpoint -> {}", ckpt_path.display());
    Ok(())
}

/// `tune`: Hyperband search; write the trial report and the best checkpoint.
pub fn cmd_tune(config: &RunConfig) -> Result<(), PipelineError> {
    let data = load_inputs(config)?;
    let prepared = prepare_training(&data, config)?;
    let base = config
        .model
        .to_model_config(prepared.manifest.feature_names.len(), config.seed);
    let tuner_seed = config.tuner.seed.unwrap_or(config.seed);

    let (winner, state, report) = tune::run_hyperband(
        &tune::SearchSpace::default(),
        &prepared.split.train,
        &prepared.split.val,
        &base,
        config.tuner.r_max,
        config.tuner.eta,
        tuner_seed,
        config.jobs,
    )?;

    let report_path = config.paths.out_dir.join("tune_report.csv");
    report.write_csv(create(&report_path)?)?;
    let trainer = state.ok_or_else(|| {
        PipelineError::Numeric("winning trial left no trained model".into())
    })?;
    let ckpt_path = config.paths.out_dir.join(BEST_CHECKPOINT_FILE);
    nn::save_checkpoint(&trainer.model, &prepared.manifest, create(&ckpt_path)?)?;
    write_run_manifest(config, "tune")?;

    println!(
        "tune: trial {} wins with val loss {:.4} ({} layers, lr {})",
        winner.trial_id,
        report.best_val_loss,
        winner.config.layers.len(),
        winner.config.learning_rate,
    );
    println!("tune: report -> {}", report_path.display());
    println!("tune: best checkpoint -> {}", ckpt_path.display());
    Ok(())
}

fn holdout_subset(
    windows: &WindowedDataset,
    holdout_tree: &str,
) -> Result<WindowedDataset, PipelineError> {
    let examples: Vec<features::WindowedExample> = windows
        .examples
        .iter()
        .filter(|e| e.tree_id == holdout_tree)
        .cloned()
        .collect();
    if examples.is_empty() {
        return Err(PipelineError::Data(format!(
            "holdout tree `{holdout_tree}` has no examples"
        )));
    }
    Ok(WindowedDataset {
        examples,
        feature_names: windows.feature_names.clone(),
        window_size: windows.window_size,
    })
}

/// `evaluate`: classification report, periods, RMSE, learning curves and
/// trajectory exports for the holdout tree.
pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path) -> Result<(), PipelineError> {
    let (model, manifest) = nn::load_checkpoint(open(checkpoint)?)?;
    let data = load_inputs(config)?;
    let windows = prepare_apply(&data, config, &manifest)?;
    let holdout = holdout_subset(&windows, &config.holdout_tree)?;

    let predictions = nn::predict(&model, &holdout, model.config.threshold)?;
    let y_true: Vec<bool> = holdout.examples.iter().map(|e| e.label).collect();
    let y_pred: Vec<bool> = predictions.iter().map(|p| p.label).collect();

    let report = eval::classification_report(&y_true, &y_pred)?;
    let out_dir = &config.paths.out_dir;
    eval::write_classification_report_csv(
        &report,
        create(&out_dir.join("classification_report.csv"))?,
    )?;
    print!("{}", eval::format_classification_report(&report));

    let predicted_periods = eval::extract_periods(
        holdout.examples.iter().zip(&y_pred).map(|(e, &label)| (e.target_date, label)),
    );
    let actual_periods =
        eval::extract_periods(holdout.examples.iter().map(|e| (e.target_date, e.label)));
    let rmse = eval::rmse_report(&predicted_periods, &actual_periods)?;
    eval::write_periods_csv(&config.holdout_tree, &rmse, create(&out_dir.join("periods.csv"))?)?;
    eval::write_rmse_csv(&rmse, create(&out_dir.join("rmse.csv"))?)?;
    println!(
        "evaluate: rmse start {:.2} days, end {:.2} days, overall {:.2} days ({} years)",
        rmse.rmse_start,
        rmse.rmse_end,
        rmse.rmse_overall,
        rmse.rows.len()
    );

    let metrics_path = out_dir.join(METRICS_FILE);
    if metrics_path.exists() {
        let metrics = nn::read_metrics_csv(open(&metrics_path)?)
            .map_err(|e| PipelineError::data("read metrics", e))?;
        if !metrics.is_empty() {
            eval::export_learning_curves(&metrics, out_dir)?;
        }
    } else {
        log::warn!("no {METRICS_FILE} in the output dir; skipping learning curves");
    }

    let curves = eval::trajectory_summary(&data.leaf);
    eval::export_trajectories(&curves, out_dir)?;
    write_run_manifest(config, "evaluate")?;
    println!("evaluate: reports -> {}", out_dir.display());
    Ok(())
}

/// `predict`: per-day probabilities and labels for every tree in the data.
pub fn cmd_predict(config: &RunConfig, checkpoint: &Path) -> Result<(), PipelineError> {
    let (model, manifest) = nn::load_checkpoint(open(checkpoint)?)?;
    let data = load_inputs(config)?;
    let windows = prepare_apply(&data, config, &manifest)?;
    let predictions = nn::predict(&model, &windows, model.config.threshold)?;

    let path = config.paths.out_dir.join("predictions.csv");
    let mut csv = csv::Writer::from_writer(create(&path)?);
    csv.write_record(["tree_id", "date", "probability", "label"])
        .map_err(|e| PipelineError::data("write predictions", e))?;
    for (example, prediction) in windows.examples.iter().zip(&predictions) {
        csv.write_record([
            example.tree_id.clone(),
            example.target_date.format("%Y-%m-%d").to_string(),
            prediction.probability.to_string(),
            prediction.label.to_string(),
        ])
        .map_err(|e| PipelineError::data("write predictions", e))?;
    }
    csv.flush().map_err(|e| PipelineError::data("write predictions", e))?;
    write_run_manifest(config, "predict")?;
    println!("predict: {} rows -> {}", windows.examples.len(), path.display());
    Ok(())
}
