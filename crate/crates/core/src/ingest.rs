//! Ground-truth phenology, site-coordinate and reanalysis-weather ingestion.
//!
//! Sparse weekly leaf-fall observations become continuous daily series:
//! January through August is forced to zero, autumn gaps are filled by linear
//! interpolation (anchored at an implicit zero on Aug 31), and days after the
//! last observation hold its value through Dec 31. Labels mark days with a
//! leaf-fall percentage strictly between 0 and 100.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::calendar::YearRange;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("row {row}, column `{column}`: {message}")]
    Field {
        row: usize,
        column: String,
        message: String,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate observation for tree `{tree_id}` on {date}")]
    DuplicateObservation { tree_id: String, date: NaiveDate },
    #[error("records for `{found}` mixed into series for `{expected}`")]
    MixedTrees { expected: String, found: String },
    #[error("tree `{tree_id}` reported as both `{first}` and `{second}`")]
    InconsistentSpecies {
        tree_id: String,
        first: String,
        second: String,
    },
    #[error("no records supplied for daily series")]
    NoRecords,
    #[error("duplicate tree id `{0}` in site table")]
    DuplicateSite(String),
    #[error("weather series gap: expected {expected}, found {found}")]
    WeatherGap { expected: NaiveDate, found: NaiveDate },
    #[error("duplicate weather record for {0}")]
    DuplicateWeatherDate(NaiveDate),
    #[error("weather column `{0}` not found in file")]
    UnknownWeatherColumn(String),
    #[error("daily series for `{tree_id}` is not contiguous at {date}")]
    NonContiguousSeries { tree_id: String, date: NaiveDate },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One raw phenology observation row.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenoRecord {
    pub date: NaiveDate,
    pub tree_id: String,
    pub species: String,
    /// Percent of leaves fallen, in [0, 100]; `None` for an empty cell.
    pub lfall_pct: Option<f64>,
}

/// Tree location in WGS84 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteCoordinate {
    pub tree_id: String,
    pub lat: f64,
    pub lon: f64,
}

/// One day of selected climate features.
#[derive(Debug, Clone, PartialEq)]
pub struct Era5Record {
    pub date: NaiveDate,
    pub features: BTreeMap<String, f64>,
}

/// Continuous daily leaf-fall series for one tree.
///
/// `values[i]` and `labels[i]` describe `start_date + i` days; the series
/// covers whole calendar years with no gaps. Labels are all `false` until
/// [`derive_labels`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyLeafSeries {
    pub tree_id: String,
    pub species: String,
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Column selection for the weather table, optionally renaming on the fly.
///
/// Parsed from `source` or `source=alias` strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeatherSelection {
    pub source: String,
    pub rename: Option<String>,
}

impl WeatherSelection {
    pub fn parse(text: &str) -> Self {
        match text.split_once('=') {
            Some((source, alias)) => Self {
                source: source.trim().to_string(),
                rename: Some(alias.trim().to_string()),
            },
            None => Self {
                source: text.trim().to_string(),
                rename: None,
            },
        }
    }

    pub fn output_name(&self) -> &str {
        self.rename.as_deref().unwrap_or(&self.source)
    }
}

fn field_err(row: usize, column: &str, message: impl Into<String>) -> IngestError {
    IngestError::Field {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_date(text: &str, row: usize, column: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
        .map_err(|_| field_err(row, column, format!("malformed date `{text}`")))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

/// Parses the pheno CSV (`date,tree_id,species,lfall`).
///
/// Empty `lfall` cells become missing values; out-of-range percentages are a
/// parse error naming the row and column.
pub fn parse_pheno_csv(reader: impl Read) -> Result<Vec<PhenoRecord>, IngestError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let date_idx = header_index(&headers, "date")?;
    let tree_idx = header_index(&headers, "tree_id")?;
    let species_idx = header_index(&headers, "species")?;
    let lfall_idx = header_index(&headers, "lfall")?;

    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 2; // 1-based, counting the header line
        let row = row?;
        let date = parse_date(&row[date_idx], row_no, "date")?;
        let lfall_text = row[lfall_idx].trim();
        let lfall_pct = if lfall_text.is_empty() {
            None
        } else {
            let value: f64 = lfall_text
                .parse()
                .map_err(|_| field_err(row_no, "lfall", format!("not a number: `{lfall_text}`")))?;
            if !(0.0..=100.0).contains(&value) {
                return Err(field_err(
                    row_no,
                    "lfall",
                    format!("value {value} outside [0, 100]"),
                ));
            }
            Some(value)
        };
        records.push(PhenoRecord {
            date,
            tree_id: row[tree_idx].trim().to_string(),
            species: row[species_idx].trim().to_string(),
            lfall_pct,
        });
    }
    Ok(records)
}

/// Keeps records whose year falls in `[first_year, last_year]`, preserving order.
pub fn filter_years(records: Vec<PhenoRecord>, first_year: i32, last_year: i32) -> Vec<PhenoRecord> {
    records
        .into_iter()
        .filter(|r| (first_year..=last_year).contains(&r.date.year()))
        .collect()
}

/// Expands sparse observations for one tree into a gap-free daily series.
///
/// Returns the series plus the years that had no autumn observation at all
/// (kept as all-zero rather than dropped).
pub fn to_daily_series(
    records: &[PhenoRecord],
    range: YearRange,
) -> Result<(DailyLeafSeries, Vec<i32>), IngestError> {
    let first = records.first().ok_or(IngestError::NoRecords)?;
    let tree_id = first.tree_id.clone();
    let species = first.species.clone();

    let mut observations: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for record in records {
        if record.tree_id != tree_id {
            return Err(IngestError::MixedTrees {
                expected: tree_id,
                found: record.tree_id.clone(),
            });
        }
        if record.species != species {
            return Err(IngestError::InconsistentSpecies {
                tree_id,
                first: species,
                second: record.species.clone(),
            });
        }
        let Some(value) = record.lfall_pct else {
            continue; // empty cell: not an observation
        };
        if !range.contains(record.date.year()) {
            continue;
        }
        if observations.insert(record.date, value).is_some() {
            return Err(IngestError::DuplicateObservation {
                tree_id,
                date: record.date,
            });
        }
    }

    let mut values = Vec::with_capacity(range.num_days());
    let mut zero_obs_years = Vec::new();
    for year in range.years() {
        let sep1 = NaiveDate::from_ymd_opt(year, 9, 1).expect("valid date");
        let aug31 = NaiveDate::from_ymd_opt(year, 8, 31).expect("valid date");
        let dec31 = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");

        // Anchors for autumn interpolation: an implicit zero on Aug 31 plus
        // every observation from Sep 1 onward. Observations dated Jan-Aug are
        // overridden by the zero-fill rule.
        let mut anchors: Vec<(NaiveDate, f64)> = vec![(aug31, 0.0)];
        anchors.extend(
            observations
                .range(sep1..=dec31)
                .map(|(date, value)| (*date, *value)),
        );

        let mut day = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid date");
        while day <= dec31 {
            let value = if day <= aug31 {
                0.0
            } else {
                interpolate_autumn(&anchors, day)
            };
            values.push(value.clamp(0.0, 100.0));
            day = day.succ_opt().expect("date increment");
        }
        if anchors.len() == 1 {
            zero_obs_years.push(year);
            log::warn!("tree `{tree_id}` has no observations in {year}; year kept as all-zero");
        }
    }

    let labels = vec![false; values.len()];
    Ok((
        DailyLeafSeries {
            tree_id,
            species,
            start_date: range.start_date(),
            values,
            labels,
        },
        zero_obs_years,
    ))
}

/// Linear interpolation over `anchors` (sorted by date); holds the last
/// anchor's value after it.
fn interpolate_autumn(anchors: &[(NaiveDate, f64)], day: NaiveDate) -> f64 {
    debug_assert!(day > anchors[0].0);
    let (last_date, last_value) = *anchors.last().expect("at least the Aug 31 anchor");
    if day >= last_date {
        return last_value;
    }
    // `day` is strictly between two anchors (or on one of them).
    let next = anchors.partition_point(|(date, _)| *date < day);
    let (d1, v1) = anchors[next];
    if d1 == day {
        return v1;
    }
    let (d0, v0) = anchors[next - 1];
    let span = (d1 - d0).num_days() as f64;
    let offset = (day - d0).num_days() as f64;
    v0 + (v1 - v0) * offset / span
}

/// Sets `labels[d] = 0 < values[d] < 100`. Idempotent, pure in `values`.
pub fn derive_labels(series: &mut DailyLeafSeries) {
    series.labels = series
        .values
        .iter()
        .map(|&v| v > 0.0 && v < 100.0)
        .collect();
}

/// Joins trees to site coordinates; trees without a site are returned in the
/// dropped list (and excluded downstream).
pub fn attach_coordinates(
    trees: &[String],
    sites: &[SiteCoordinate],
) -> Result<(BTreeMap<String, SiteCoordinate>, Vec<String>), IngestError> {
    let mut by_tree: BTreeMap<String, SiteCoordinate> = BTreeMap::new();
    for site in sites {
        if by_tree.insert(site.tree_id.clone(), site.clone()).is_some() {
            return Err(IngestError::DuplicateSite(site.tree_id.clone()));
        }
    }
    let mut attached = BTreeMap::new();
    let mut dropped = Vec::new();
    for tree in trees {
        match by_tree.get(tree) {
            Some(site) => {
                attached.insert(tree.clone(), site.clone());
            }
            None => dropped.push(tree.clone()),
        }
    }
    Ok((attached, dropped))
}

/// Parses the sites CSV (`tree_id,lat,lon`).
pub fn parse_sites_csv(reader: impl Read) -> Result<Vec<SiteCoordinate>, IngestError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let tree_idx = header_index(&headers, "tree_id")?;
    let lat_idx = header_index(&headers, "lat")?;
    let lon_idx = header_index(&headers, "lon")?;

    let mut sites = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let lat: f64 = row[lat_idx]
            .trim()
            .parse()
            .map_err(|_| field_err(row_no, "lat", format!("not a number: `{}`", &row[lat_idx])))?;
        let lon: f64 = row[lon_idx]
            .trim()
            .parse()
            .map_err(|_| field_err(row_no, "lon", format!("not a number: `{}`", &row[lon_idx])))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(field_err(row_no, "lat", format!("{lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(field_err(row_no, "lon", format!("{lon} outside [-180, 180]")));
        }
        sites.push(SiteCoordinate {
            tree_id: row[tree_idx].trim().to_string(),
            lat,
            lon,
        });
    }
    Ok(sites)
}

/// Parses the weather CSV (`date,<feature1>,<feature2>,...`), keeping only
/// the selected columns (renamed per selection) and enforcing daily
/// contiguity.
pub fn parse_era5_csv(
    reader: impl Read,
    selections: &[WeatherSelection],
) -> Result<Vec<Era5Record>, IngestError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let date_idx = header_index(&headers, "date")?;
    let mut picks: Vec<(usize, String)> = Vec::new();
    let mut seen_outputs = BTreeSet::new();
    for selection in selections {
        let idx = headers
            .iter()
            .position(|h| h.trim() == selection.source)
            .ok_or_else(|| IngestError::UnknownWeatherColumn(selection.source.clone()))?;
        let name = selection.output_name().to_string();
        if !seen_outputs.insert(name.clone()) {
            return Err(IngestError::UnknownWeatherColumn(format!(
                "{name} selected twice"
            )));
        }
        picks.push((idx, name));
    }

    let mut records: Vec<Era5Record> = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let date = parse_date(&row[date_idx], row_no, "date")?;
        if let Some(previous) = records.last() {
            let expected = previous.date.succ_opt().expect("date increment");
            if date == previous.date {
                return Err(IngestError::DuplicateWeatherDate(date));
            }
            if date != expected {
                return Err(IngestError::WeatherGap {
                    expected,
                    found: date,
                });
            }
        }
        let mut features = BTreeMap::new();
        for (idx, name) in &picks {
            let text = row[*idx].trim();
            let value: f64 = text
                .parse()
                .map_err(|_| field_err(row_no, name, format!("not a number: `{text}`")))?;
            features.insert(name.clone(), value);
        }
        records.push(Era5Record { date, features });
    }
    Ok(records)
}

/// Writes daily series as `tree_id,species,date,lfall,label` rows, sorted by
/// (tree, date).
pub fn write_daily_series_csv(
    series: &[DailyLeafSeries],
    writer: impl Write,
) -> Result<(), IngestError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["tree_id", "species", "date", "lfall", "label"])?;
    let mut ordered: Vec<&DailyLeafSeries> = series.iter().collect();
    ordered.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));
    for s in ordered {
        let mut date = s.start_date;
        for (value, label) in s.values.iter().zip(&s.labels) {
            csv.write_record([
                s.tree_id.as_str(),
                s.species.as_str(),
                &date.format("%Y-%m-%d").to_string(),
                &value.to_string(),
                &label.to_string(),
            ])?;
            date = date.succ_opt().expect("date increment");
        }
    }
    csv.flush()?;
    Ok(())
}

/// Inverse of [`write_daily_series_csv`].
pub fn read_daily_series_csv(reader: impl Read) -> Result<Vec<DailyLeafSeries>, IngestError> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let tree_idx = header_index(&headers, "tree_id")?;
    let species_idx = header_index(&headers, "species")?;
    let date_idx = header_index(&headers, "date")?;
    let lfall_idx = header_index(&headers, "lfall")?;
    let label_idx = header_index(&headers, "label")?;

    let mut by_tree: BTreeMap<String, DailyLeafSeries> = BTreeMap::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let tree_id = row[tree_idx].trim().to_string();
        let date = parse_date(&row[date_idx], row_no, "date")?;
        let value: f64 = row[lfall_idx]
            .trim()
            .parse()
            .map_err(|_| field_err(row_no, "lfall", format!("not a number: `{}`", &row[lfall_idx])))?;
        let label: bool = row[label_idx]
            .trim()
            .parse()
            .map_err(|_| field_err(row_no, "label", format!("not a boolean: `{}`", &row[label_idx])))?;
        match by_tree.get_mut(&tree_id) {
            None => {
                by_tree.insert(
                    tree_id.clone(),
                    DailyLeafSeries {
                        tree_id,
                        species: row[species_idx].trim().to_string(),
                        start_date: date,
                        values: vec![value],
                        labels: vec![label],
                    },
                );
            }
            Some(series) => {
                let expected = series
                    .start_date
                    .checked_add_days(chrono::Days::new(series.values.len() as u64))
                    .expect("date increment");
                if date != expected {
                    return Err(IngestError::NonContiguousSeries { tree_id, date });
                }
                series.values.push(value);
                series.labels.push(label);
            }
        }
    }
    Ok(by_tree.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn record(date: NaiveDate, value: Option<f64>) -> PhenoRecord {
        PhenoRecord {
            date,
            tree_id: "T1".into(),
            species: "ACRU".into(),
            lfall_pct: value,
        }
    }

    /// Independent day-by-day filler used as the interpolation oracle: scans
    /// every day and applies the fill rules directly, with no shared code.
    fn brute_force_daily(obs: &[(NaiveDate, f64)], range: YearRange) -> Vec<f64> {
        let mut out = Vec::new();
        for year in range.years() {
            let aug31 = d(year, 8, 31);
            let mut anchors: Vec<(NaiveDate, f64)> = vec![(aug31, 0.0)];
            let mut year_obs: Vec<(NaiveDate, f64)> = obs
                .iter()
                .copied()
                .filter(|(date, _)| date.year() == year && *date >= d(year, 9, 1))
                .collect();
            year_obs.sort_by_key(|(date, _)| *date);
            anchors.extend(year_obs);

            let mut day = d(year, 1, 1);
            while day <= d(year, 12, 31) {
                let v = if day <= aug31 {
                    0.0
                } else {
                    let mut prev = anchors[0];
                    let mut next: Option<(NaiveDate, f64)> = None;
                    for &(ad, av) in &anchors {
                        if ad <= day {
                            prev = (ad, av);
                        } else {
                            next = Some((ad, av));
                            break;
                        }
                    }
                    match next {
                        None => prev.1,
                        Some((nd, nv)) => {
                            if prev.0 == day {
                                prev.1
                            } else {
                                let span = (nd - prev.0).num_days() as f64;
                                let off = (day - prev.0).num_days() as f64;
                                prev.1 + (nv - prev.1) * off / span
                            }
                        }
                    }
                };
                out.push(v.clamp(0.0, 100.0));
                day = day.succ_opt().unwrap();
            }
        }
        out
    }

    #[test]
    fn parse_pheno_echoes_fields() {
        let text = "date,tree_id,species,lfall\n2015-09-17,T1,ACRU,5.0\n2015-09-24,T1,ACRU,40.0\n";
        let records = parse_pheno_csv(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].date, d(2015, 9, 17));
        assert_eq!(records[0].tree_id, "T1");
        assert_eq!(records[0].species, "ACRU");
        assert_eq!(records[0].lfall_pct, Some(5.0));
        assert_eq!(records[1].lfall_pct, Some(40.0));
    }

    #[test]
    fn parse_pheno_empty_cell_is_missing() {
        let text = "date,tree_id,species,lfall\n2015-09-17,T1,ACRU,\n";
        let records = parse_pheno_csv(text.as_bytes()).unwrap();
        assert_eq!(records[0].lfall_pct, None);
    }

    #[test]
    fn parse_pheno_range_violation() {
        let text = "date,tree_id,species,lfall\n2015-09-17,T1,ACRU,105\n";
        let err = parse_pheno_csv(text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("lfall"), "{msg}");
        assert!(msg.contains("outside [0, 100]"), "{msg}");
    }

    #[test]
    fn parse_pheno_malformed_date() {
        let text = "date,tree_id,species,lfall\n17-09-2015,T1,ACRU,5\n";
        let err = parse_pheno_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("malformed date"));
    }

    #[test]
    fn parse_pheno_missing_column() {
        let text = "date,tree_id,lfall\n2015-09-17,T1,5\n";
        let err = parse_pheno_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "species"));
    }

    #[test]
    fn filter_years_drops_out_of_range() {
        let records = vec![
            record(d(2014, 11, 1), Some(10.0)),
            record(d(2015, 9, 1), Some(5.0)),
        ];
        let kept = filter_years(records, 2015, 2022);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].date, d(2015, 9, 1));
    }

    #[test]
    fn filter_years_empty_and_disjoint() {
        assert!(filter_years(Vec::new(), 2015, 2022).is_empty());
        let records = vec![record(d(2016, 9, 1), Some(5.0))];
        assert!(filter_years(records, 2015, 2015).is_empty());
    }

    #[test]
    fn daily_series_midpoint_interpolation() {
        let records = vec![
            record(d(2015, 9, 1), Some(0.0)),
            record(d(2015, 9, 11), Some(100.0)),
        ];
        let (series, _) = to_daily_series(&records, YearRange::new(2015, 2015)).unwrap();
        let idx = YearRange::new(2015, 2015).day_index(d(2015, 9, 6)).unwrap();
        assert_eq!(series.values[idx], 50.0);
        // exact on observation dates
        let i1 = YearRange::new(2015, 2015).day_index(d(2015, 9, 1)).unwrap();
        let i2 = YearRange::new(2015, 2015).day_index(d(2015, 9, 11)).unwrap();
        assert_eq!(series.values[i1], 0.0);
        assert_eq!(series.values[i2], 100.0);
    }

    #[test]
    fn daily_series_empty_years_are_zero_with_flag() {
        // One observation in 2015 keeps the tree alive; 2016 (leap) and 2017
        // have nothing and must come back as 366 + 365 zeros.
        let records = vec![record(d(2015, 10, 1), Some(50.0))];
        let (series, zero_years) = to_daily_series(&records, YearRange::new(2015, 2017)).unwrap();
        assert_eq!(zero_years, vec![2016, 2017]);
        let range = YearRange::new(2015, 2017);
        assert_eq!(series.values.len(), range.num_days());
        let start_2016 = range.day_index(d(2016, 1, 1)).unwrap();
        let end_2016 = range.day_index(d(2016, 12, 31)).unwrap();
        assert_eq!(end_2016 - start_2016 + 1, 366);
        assert!(series.values[start_2016..=end_2016].iter().all(|&v| v == 0.0));
        let end_2017 = range.day_index(d(2017, 12, 31)).unwrap();
        assert!(series.values[end_2016 + 1..=end_2017].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn daily_series_holds_last_observation() {
        let records = vec![
            record(d(2015, 9, 20), Some(30.0)),
            record(d(2015, 11, 3), Some(100.0)),
        ];
        let range = YearRange::new(2015, 2015);
        let (series, _) = to_daily_series(&records, range).unwrap();
        let mut day = d(2015, 11, 4);
        while day <= d(2015, 12, 31) {
            assert_eq!(series.values[range.day_index(day).unwrap()], 100.0);
            day = day.succ_opt().unwrap();
        }
    }

    #[test]
    fn daily_series_ramps_from_implicit_aug31_zero() {
        let records = vec![record(d(2015, 9, 10), Some(10.0))];
        let range = YearRange::new(2015, 2015);
        let (series, _) = to_daily_series(&records, range).unwrap();
        // Sep 5 is 5 days after Aug 31 on a 10-day ramp to 10.0.
        assert_eq!(series.values[range.day_index(d(2015, 9, 5)).unwrap()], 5.0);
        assert_eq!(series.values[range.day_index(d(2015, 8, 31)).unwrap()], 0.0);
    }

    #[test]
    fn daily_series_rejects_duplicates() {
        let records = vec![
            record(d(2015, 9, 10), Some(10.0)),
            record(d(2015, 9, 10), Some(12.0)),
        ];
        let err = to_daily_series(&records, YearRange::new(2015, 2015)).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateObservation { .. }));
    }

    #[test]
    fn daily_series_ignores_missing_cells() {
        let records = vec![
            record(d(2015, 9, 10), None),
            record(d(2015, 9, 10), Some(10.0)),
        ];
        // The empty cell occupies the same date but is not an observation.
        assert!(to_daily_series(&records, YearRange::new(2015, 2015)).is_ok());
    }

    proptest! {
        /// Randomized sparse fixtures must match the brute-force day-by-day filler.
        #[test]
        fn daily_series_matches_brute_force(
            obs in proptest::collection::btree_map(
                (0u32..122, 0u32..=1000),
                0.0f64..=100.0,
                0..12,
            )
        ) {
            let range = YearRange::new(2015, 2016);
            let mut records = Vec::new();
            let mut pairs = Vec::new();
            for ((day_offset, _salt), value) in obs {
                // Spread observations over Sep 1 2015 .. Dec 31 2015 and 2016.
                let year = if day_offset % 2 == 0 { 2015 } else { 2016 };
                let date = d(year, 9, 1)
                    .checked_add_days(chrono::Days::new(u64::from(day_offset % 121)))
                    .unwrap();
                if pairs.iter().any(|(existing, _)| *existing == date) {
                    continue;
                }
                records.push(record(date, Some(value)));
                pairs.push((date, value));
            }
            prop_assume!(!records.is_empty());
            let (series, _) = to_daily_series(&records, range).unwrap();
            let expected = brute_force_daily(&pairs, range);
            prop_assert_eq!(series.values, expected);
        }

        /// Monotone observations keep interpolated values within observed bounds.
        #[test]
        fn monotone_fixtures_stay_bounded(values in proptest::collection::vec(0.0f64..=100.0, 2..8)) {
            let mut sorted = values;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let range = YearRange::new(2015, 2015);
            let records: Vec<PhenoRecord> = sorted
                .iter()
                .enumerate()
                .map(|(i, &v)| record(d(2015, 9, 1).checked_add_days(chrono::Days::new(10 * i as u64)).unwrap(), Some(v)))
                .collect();
            let (series, _) = to_daily_series(&records, range).unwrap();
            for w in records.windows(2) {
                let lo = w[0].lfall_pct.unwrap();
                let hi = w[1].lfall_pct.unwrap();
                let i0 = range.day_index(w[0].date).unwrap();
                let i1 = range.day_index(w[1].date).unwrap();
                for v in &series.values[i0..=i1] {
                    prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
                }
            }
        }

        /// derive_labels is idempotent and a pure function of values.
        #[test]
        fn derive_labels_idempotent(values in proptest::collection::vec(0.0f64..=100.0, 1..40)) {
            let mut series = DailyLeafSeries {
                tree_id: "T1".into(),
                species: "ACRU".into(),
                start_date: d(2015, 1, 1),
                values,
                labels: Vec::new(),
            };
            derive_labels(&mut series);
            let once = series.labels.clone();
            derive_labels(&mut series);
            prop_assert_eq!(&once, &series.labels);
            for (v, l) in series.values.iter().zip(&once) {
                prop_assert_eq!(*l, *v > 0.0 && *v < 100.0);
            }
        }
    }

    #[test]
    fn labels_use_strict_inequalities() {
        let mut series = DailyLeafSeries {
            tree_id: "T1".into(),
            species: "ACRU".into(),
            start_date: d(2015, 1, 1),
            values: vec![0.0, 0.0, 50.0, 100.0],
            labels: Vec::new(),
        };
        derive_labels(&mut series);
        assert_eq!(series.labels, vec![false, false, true, false]);

        series.values = vec![0.0, 0.1, 99.9, 100.0];
        derive_labels(&mut series);
        assert_eq!(series.labels, vec![false, true, true, false]);

        series.values = vec![0.0; 10];
        derive_labels(&mut series);
        assert!(series.labels.iter().all(|l| !l));
    }

    #[test]
    fn attach_coordinates_splits_known_and_dropped() {
        let trees = vec!["T1".to_string(), "T2".to_string()];
        let sites = vec![SiteCoordinate {
            tree_id: "T1".into(),
            lat: 42.53,
            lon: -72.19,
        }];
        let (map, dropped) = attach_coordinates(&trees, &sites).unwrap();
        assert_eq!(map.len(), 1);
        assert!(map.contains_key("T1"));
        assert_eq!(dropped, vec!["T2".to_string()]);

        let (map, dropped) = attach_coordinates(&trees, &[]).unwrap();
        assert!(map.is_empty());
        assert_eq!(dropped.len(), 2);
    }

    #[test]
    fn attach_coordinates_rejects_duplicate_sites() {
        let sites = vec![
            SiteCoordinate { tree_id: "T1".into(), lat: 1.0, lon: 2.0 },
            SiteCoordinate { tree_id: "T1".into(), lat: 3.0, lon: 4.0 },
        ];
        let err = attach_coordinates(&["T1".to_string()], &sites).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateSite(t) if t == "T1"));
    }

    #[test]
    fn era5_selects_and_renames() {
        let text = "date,t2m,precip\n2015-01-01,270.5,0.001\n2015-01-02,271.0,0.0\n2015-01-03,272.0,0.002\n";
        let selections = vec![WeatherSelection::parse("t2m=temperature")];
        let records = parse_era5_csv(text.as_bytes(), &selections).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].features.len(), 1);
        assert_eq!(records[0].features["temperature"], 270.5);
    }

    #[test]
    fn era5_unknown_column_is_an_error() {
        let text = "date,t2m\n2015-01-01,270.5\n";
        let err = parse_era5_csv(text.as_bytes(), &[WeatherSelection::parse("humidity")]).unwrap_err();
        assert!(matches!(err, IngestError::UnknownWeatherColumn(c) if c == "humidity"));
    }

    #[test]
    fn era5_gap_is_an_error() {
        let text = "date,t2m\n2015-01-01,270.5\n2015-01-03,271.0\n";
        let err = parse_era5_csv(text.as_bytes(), &[WeatherSelection::parse("t2m")]).unwrap_err();
        match err {
            IngestError::WeatherGap { expected, found } => {
                assert_eq!(expected, d(2015, 1, 2));
                assert_eq!(found, d(2015, 1, 3));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn daily_series_csv_round_trips() {
        let records = vec![
            record(d(2015, 9, 10), Some(10.0)),
            record(d(2015, 10, 1), Some(87.3)),
        ];
        let (mut series, _) = to_daily_series(&records, YearRange::new(2015, 2015)).unwrap();
        derive_labels(&mut series);

        let mut bytes = Vec::new();
        write_daily_series_csv(std::slice::from_ref(&series), &mut bytes).unwrap();
        let parsed = read_daily_series_csv(bytes.as_slice()).unwrap();
        assert_eq!(parsed, vec![series]);
    }
}
