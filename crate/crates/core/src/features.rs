//! Feature assembly: joining daily sources into per-tree rows, scaling,
//! one-hot species encoding, sliding windows and the temporal split.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::calendar::{week_of_year, YearRange};
use crate::ingest::{DailyLeafSeries, Era5Record};
use crate::raster::{IndexKind, IndexSeries};

pub const SPECIES_COLUMN_PREFIX: &str = "species_";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("source coverage mismatch; missing (tree, date, source): {}{}", missing.join("; "), if *truncated { "; ..." } else { "" })]
    Coverage { missing: Vec<String>, truncated: bool },
    #[error("column `{0}` already present")]
    DuplicateColumn(String),
    #[error("species unknown for tree `{0}`")]
    MissingSpecies(String),
    #[error("scaler references unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` has no scaler parameters")]
    UnscaledColumn(String),
    #[error("no rows selected to fit the scaler")]
    EmptyFit,
    #[error("feature rows for `{tree_id}` are not contiguous at {date}")]
    NonContiguous { tree_id: String, date: NaiveDate },
    #[error("row width {found} does not match {expected} feature columns")]
    RowWidth { expected: usize, found: usize },
    #[error("holdout tree `{0}` has no examples")]
    HoldoutAbsent(String),
    #[error("example target year {0} is in neither the training years nor the validation year")]
    UncoveredYear(i32),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One day of features for one tree. `values` aligns with the owning table's
/// `feature_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub tree_id: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
    pub label: bool,
}

/// Per-tree per-day feature rows with a fixed, recorded column order.
/// Rows are sorted by (tree_id, date) and contiguous per tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

/// Min/max observed on the fitting subset, per numeric column.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerColumn {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub columns: Vec<ScalerColumn>,
}

/// Everything needed to rebuild the exact feature layout at apply time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub feature_names: Vec<String>,
    pub scaler: ScalerParams,
    pub species_classes: Vec<String>,
    pub window_size: usize,
}

/// One supervised example: `window` is a `window_size x F` row-major matrix of
/// the days immediately preceding `target_date`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub window: Vec<f64>,
    pub label: bool,
    pub tree_id: String,
    pub target_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub examples: Vec<WindowedExample>,
    pub feature_names: Vec<String>,
    pub window_size: usize,
}

impl WindowedDataset {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub holdout: WindowedDataset,
}

/// Joins leaf-fall, index and weather series into one row per (tree, day).
///
/// Every tree must supply every selected index kind over the whole range and
/// the weather table must cover every day; anything missing is reported as
/// (tree, date, source) triples.
pub fn join_sources(
    leaf: &[DailyLeafSeries],
    index_series: &[IndexSeries],
    kinds: &[IndexKind],
    weather: &[Era5Record],
    weather_columns: &[String],
    range: YearRange,
) -> Result<FeatureTable, FeatureError> {
    const MISSING_CAP: usize = 20;
    let num_days = range.num_days();
    let mut missing: Vec<String> = Vec::new();
    let mut push_missing = |tree: &str, what: String, source: &str| {
        if missing.len() < MISSING_CAP {
            missing.push(format!("({tree}, {what}, {source})"));
        }
    };

    let mut weather_by_date: BTreeMap<NaiveDate, &Era5Record> = BTreeMap::new();
    for record in weather {
        weather_by_date.insert(record.date, record);
    }
    for day in range.days() {
        match weather_by_date.get(&day) {
            None => push_missing("*", day.to_string(), "weather"),
            Some(record) => {
                for column in weather_columns {
                    if !record.features.contains_key(column) {
                        push_missing("*", day.to_string(), &format!("weather:{column}"));
                    }
                }
            }
        }
    }

    let mut series_by_tree_kind: BTreeMap<(&str, IndexKind), &IndexSeries> = BTreeMap::new();
    for series in index_series {
        series_by_tree_kind.insert((series.tree_id.as_str(), series.kind), series);
    }

    let mut trees: Vec<&DailyLeafSeries> = leaf.iter().collect();
    trees.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));

    for tree in &trees {
        if tree.start_date != range.start_date() || tree.values.len() != num_days {
            push_missing(&tree.tree_id, format!("range {}", range.start_date()), "leaf");
        }
        for kind in kinds {
            match series_by_tree_kind.get(&(tree.tree_id.as_str(), *kind)) {
                None => push_missing(&tree.tree_id, "all days".into(), &kind.to_string()),
                Some(series) => {
                    if series.start_date != range.start_date() || series.values.len() != num_days {
                        push_missing(&tree.tree_id, format!("range {}", range.start_date()), &kind.to_string());
                    }
                }
            }
        }
    }

    if !missing.is_empty() {
        let truncated = missing.len() >= MISSING_CAP;
        return Err(FeatureError::Coverage { missing, truncated });
    }

    let mut feature_names: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
    feature_names.extend(weather_columns.iter().cloned());

    let mut rows = Vec::with_capacity(trees.len() * num_days);
    for tree in &trees {
        for (i, day) in range.days().enumerate() {
            let mut values = Vec::with_capacity(feature_names.len());
            for kind in kinds {
                let series = series_by_tree_kind[&(tree.tree_id.as_str(), *kind)];
                values.push(series.values[i]);
            }
            let record = weather_by_date[&day];
            for column in weather_columns {
                values.push(record.features[column]);
            }
            rows.push(FeatureRow {
                tree_id: tree.tree_id.clone(),
                date: day,
                values,
                label: tree.labels[i],
            });
        }
    }

    Ok(FeatureTable { feature_names, rows })
}

/// Appends a numeric `week_of_year` column.
pub fn add_week_of_year(table: &mut FeatureTable) -> Result<(), FeatureError> {
    if table.column_index("week_of_year").is_some() {
        return Err(FeatureError::DuplicateColumn("week_of_year".into()));
    }
    table.feature_names.push("week_of_year".into());
    for row in &mut table.rows {
        row.values.push(f64::from(week_of_year(row.date)));
    }
    Ok(())
}

/// Species vocabulary seen in the fitting subset, lexicographically ordered.
pub fn fit_species_classes<'a>(species: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = species.into_iter().collect();
    set.into_iter().map(str::to_string).collect()
}

/// Appends one binary column per fitted species class.
///
/// Rows whose species was not in the fitted classes get an all-zero encoding
/// and a warning.
pub fn one_hot_species(
    table: &mut FeatureTable,
    species_of: &BTreeMap<String, String>,
    classes: &[String],
) -> Result<(), FeatureError> {
    for class in classes {
        let column = format!("{SPECIES_COLUMN_PREFIX}{class}");
        if table.column_index(&column).is_some() {
            return Err(FeatureError::DuplicateColumn(column));
        }
        table.feature_names.push(column);
    }
    let mut warned: BTreeSet<String> = BTreeSet::new();
    for row in &mut table.rows {
        let species = species_of
            .get(&row.tree_id)
            .ok_or_else(|| FeatureError::MissingSpecies(row.tree_id.clone()))?;
        let hit = classes.iter().position(|c| c == species);
        if hit.is_none() && warned.insert(species.clone()) {
            log::warn!("species `{species}` not seen at fit time; encoding all-zero");
        }
        for (i, _) in classes.iter().enumerate() {
            row.values.push(if hit == Some(i) { 1.0 } else { 0.0 });
        }
    }
    Ok(())
}

/// Records per-column min/max over the selected fitting rows only.
pub fn fit_minmax(
    table: &FeatureTable,
    fit_rows: impl Fn(&FeatureRow) -> bool,
) -> Result<ScalerParams, FeatureError> {
    let mut mins = vec![f64::INFINITY; table.feature_names.len()];
    let mut maxs = vec![f64::NEG_INFINITY; table.feature_names.len()];
    let mut any = false;
    for row in table.rows.iter().filter(|r| fit_rows(r)) {
        any = true;
        for (i, &v) in row.values.iter().enumerate() {
            mins[i] = mins[i].min(v);
            maxs[i] = maxs[i].max(v);
        }
    }
    if !any {
        return Err(FeatureError::EmptyFit);
    }
    Ok(ScalerParams {
        columns: table
            .feature_names
            .iter()
            .zip(mins.iter().zip(&maxs))
            .map(|(name, (&min, &max))| ScalerColumn { name: name.clone(), min, max })
            .collect(),
    })
}

/// Applies `x -> (x - min) / (max - min)` per column, clamped to [0, 1];
/// constant columns map to 0.
pub fn apply_minmax(table: &mut FeatureTable, params: &ScalerParams) -> Result<(), FeatureError> {
    let mut by_index: Vec<Option<(f64, f64)>> = vec![None; table.feature_names.len()];
    for column in &params.columns {
        let idx = table
            .column_index(&column.name)
            .ok_or_else(|| FeatureError::UnknownColumn(column.name.clone()))?;
        by_index[idx] = Some((column.min, column.max));
    }
    if let Some(idx) = by_index.iter().position(Option::is_none) {
        return Err(FeatureError::UnscaledColumn(table.feature_names[idx].clone()));
    }
    for row in &mut table.rows {
        for (value, bounds) in row.values.iter_mut().zip(&by_index) {
            let (min, max) = bounds.expect("checked above");
            *value = if max > min {
                ((*value - min) / (max - min)).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(())
}

/// Slides a `w`-day window over each tree's contiguous rows; the label comes
/// from the day immediately after the window. Windows never span trees.
pub fn make_windows(table: &FeatureTable, w: usize) -> Result<WindowedDataset, FeatureError> {
    assert!(w >= 1, "window size must be at least 1");
    let width = table.feature_names.len();
    let mut examples = Vec::new();

    let mut start = 0usize;
    while start < table.rows.len() {
        let tree_id = &table.rows[start].tree_id;
        let mut end = start;
        while end < table.rows.len() && &table.rows[end].tree_id == tree_id {
            let row = &table.rows[end];
            if row.values.len() != width {
                return Err(FeatureError::RowWidth { expected: width, found: row.values.len() });
            }
            if end > start {
                let expected = table.rows[end - 1]
                    .date
                    .succ_opt()
                    .expect("date increment");
                if row.date != expected {
                    return Err(FeatureError::NonContiguous {
                        tree_id: tree_id.clone(),
                        date: row.date,
                    });
                }
            }
            end += 1;
        }

        let days = end - start;
        if days < w + 1 {
            log::warn!("tree `{tree_id}`: {days} contiguous days is too short for window {w}; no examples");
        } else {
            for target in start + w..end {
                let mut window = Vec::with_capacity(w * width);
                for row in &table.rows[target - w..target] {
                    window.extend_from_slice(&row.values);
                }
                examples.push(WindowedExample {
                    window,
                    label: table.rows[target].label,
                    tree_id: tree_id.clone(),
                    target_date: table.rows[target].date,
                });
            }
        }
        start = end;
    }

    Ok(WindowedDataset {
        examples,
        feature_names: table.feature_names.clone(),
        window_size: w,
    })
}

/// Temporal split: train/validation by target year (holdout tree excluded),
/// plus all examples of the holdout tree across every year.
pub fn split_temporal(
    dataset: &WindowedDataset,
    train_years: &[i32],
    val_year: i32,
    holdout_tree: &str,
) -> Result<SplitDataset, FeatureError> {
    if !dataset.examples.iter().any(|e| e.tree_id == holdout_tree) {
        return Err(FeatureError::HoldoutAbsent(holdout_tree.to_string()));
    }
    let empty = |ds: &WindowedDataset| WindowedDataset {
        examples: Vec::new(),
        feature_names: ds.feature_names.clone(),
        window_size: ds.window_size,
    };
    let mut split = SplitDataset {
        train: empty(dataset),
        val: empty(dataset),
        holdout: empty(dataset),
    };
    for example in &dataset.examples {
        let year = example.target_date.year();
        if example.tree_id == holdout_tree {
            split.holdout.examples.push(example.clone());
        } else if train_years.contains(&year) {
            split.train.examples.push(example.clone());
        } else if year == val_year {
            split.val.examples.push(example.clone());
        } else {
            return Err(FeatureError::UncoveredYear(year));
        }
    }
    if split.val.examples.is_empty() {
        log::warn!("validation year {val_year} has no examples");
    }
    Ok(split)
}

/// Writes `tree_id,date,<feature...>,label` rows.
pub fn write_feature_csv(table: &FeatureTable, writer: impl Write) -> Result<(), FeatureError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["tree_id".to_string(), "date".to_string()];
    header.extend(table.feature_names.iter().cloned());
    header.push("label".to_string());
    csv.write_record(&header)?;
    for row in &table.rows {
        let mut record = vec![row.tree_id.clone(), row.date.format("%Y-%m-%d").to_string()];
        record.extend(row.values.iter().map(f64::to_string));
        record.push(row.label.to_string());
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// Inverse of [`write_feature_csv`]; feature names come from the header.
pub fn read_feature_csv(reader: impl Read) -> Result<FeatureTable, FeatureError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("tree_id")
        || names.get(1).map(String::as_str) != Some("date")
        || names.last().map(String::as_str) != Some("label")
    {
        return Err(FeatureError::MissingColumn(
            "expected header tree_id,date,<feature...>,label".into(),
        ));
    }
    let feature_names: Vec<String> = names[2..names.len() - 1].to_vec();

    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row_no = i + 2;
        let record = record?;
        let date = NaiveDate::parse_from_str(record[1].trim(), "%Y-%m-%d").map_err(|_| {
            FeatureError::Row { row: row_no, message: format!("malformed date `{}`", &record[1]) }
        })?;
        let mut values = Vec::with_capacity(feature_names.len());
        for idx in 2..record.len() - 1 {
            let value: f64 = record[idx].trim().parse().map_err(|_| FeatureError::Row {
                row: row_no,
                message: format!("not a number: `{}`", &record[idx]),
            })?;
            values.push(value);
        }
        let label: bool = record[record.len() - 1].trim().parse().map_err(|_| FeatureError::Row {
            row: row_no,
            message: format!("not a boolean: `{}`", &record[record.len() - 1]),
        })?;
        rows.push(FeatureRow { tree_id: record[0].trim().to_string(), date, values, label });
    }
    Ok(FeatureTable { feature_names, rows })
}
