//! Synthetic dataset generator with a known leaf-fall mechanism.
//!
//! Weather is a seeded annual sinusoid; a year's leaf-fall onset is the first
//! autumn day whose trailing mean temperature drops below a threshold, and
//! the percentage then follows a logistic curve over a drawn duration.
//! Vegetation indices track the remaining canopy. Everything the ingestion
//! pipeline consumes (pheno/sites/era5 CSVs, index rasters) is emitted in the
//! exact file formats it parses, together with the exact truth periods.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;

use crate::calendar::YearRange;
use crate::raster::{BandGrid, IndexKind, DEFAULT_NODATA};
use crate::seeding::{derive_seed, salt_str};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub years: YearRange,
    pub tree_count: usize,
    pub species_pool: Vec<String>,
    /// Trailing-mean temperature threshold triggering leaf-fall onset (K).
    pub onset_temp_kelvin: f64,
    /// Trailing window for the onset rule, days.
    pub smoothing_days: usize,
    pub duration_mean_days: f64,
    pub duration_sd_days: f64,
    /// Per-tree onset jitter, +- days.
    pub onset_jitter_days: i64,
    pub temp_noise_kelvin: f64,
    pub index_noise: f64,
    /// Fraction of revisit dates fully lost to cloud cover.
    pub cloud_fraction: f64,
    /// Satellite revisit interval, days.
    pub revisit_days: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            years: YearRange::new(2015, 2021),
            tree_count: 3,
            // Two species over three trees: the conventional holdout (the
            // last tree) then shares a species with a training tree.
            species_pool: vec!["ACPE".into(), "ACRU".into()],
            onset_temp_kelvin: 287.0,
            smoothing_days: 7,
            duration_mean_days: 50.0,
            duration_sd_days: 6.0,
            onset_jitter_days: 2,
            temp_noise_kelvin: 1.5,
            index_noise: 0.02,
            cloud_fraction: 0.12,
            revisit_days: 5,
        }
    }
}

/// Exact leaf-fall period per (tree, year), from the generator's own curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthPeriod {
    pub tree_id: String,
    pub year: i32,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Generated dataset held in memory; [`write_dataset`] persists it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub pheno_csv: String,
    pub sites_csv: String,
    pub era5_csv: String,
    /// (file name, ESRI ASCII content) under the raster directory.
    pub rasters: Vec<(String, String)>,
    pub truth_csv: String,
    pub truth: Vec<TruthPeriod>,
    /// Internal daily leaf-fall curve per tree over the whole range.
    pub daily_truth: BTreeMap<String, Vec<f64>>,
}

const GRID_SIZE: usize = 8;
const CELL_SIZE: f64 = 0.0001;
const GRID_XLL: f64 = -72.195;
const GRID_YLL: f64 = 42.53;

fn tree_ids(count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("T{k}")).collect()
}

/// Tree `k` occupies an interior grid cell; returns (row_from_bottom, col).
fn tree_cell(k: usize) -> (usize, usize) {
    (1 + k / (GRID_SIZE - 2), 1 + k % (GRID_SIZE - 2))
}

fn tree_coords(k: usize) -> (f64, f64) {
    let (rfb, col) = tree_cell(k);
    let lat = GRID_YLL + (rfb as f64 + 0.5) * CELL_SIZE;
    let lon = GRID_XLL + (col as f64 + 0.5) * CELL_SIZE;
    (lat, lon)
}

/// Site temperature for one day, before noise: an annual cosine peaking in
/// mid-July.
fn seasonal_temperature(date: NaiveDate) -> f64 {
    let days = crate::calendar::days_in_year(date.year()) as f64;
    let phase = 2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 196.0) / days;
    283.0 + 12.0 * phase.cos()
}

fn seasonal_solar(date: NaiveDate) -> f64 {
    let days = crate::calendar::days_in_year(date.year()) as f64;
    let phase = 2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 172.0) / days;
    1.5e7 * (0.65 + 0.35 * phase.cos())
}

struct DailyWeather {
    temperature: f64,
    precipitation: f64,
    solar_radiation: f64,
    soil_water: f64,
}

fn weather_for(config: &SynthConfig, date: NaiveDate) -> DailyWeather {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
        config.seed,
        &[salt_str("weather"), date.num_days_from_ce() as u64],
    ));
    let temp_noise = Normal::new(0.0, config.temp_noise_kelvin).expect("valid sd");
    let temperature = seasonal_temperature(date) + rng.sample(temp_noise);
    // exponential rain amounts in metres/day
    let precipitation = -(1.0 - rng.gen::<f64>()).ln() * 0.003;
    let solar_radiation = seasonal_solar(date) * (1.0 + 0.1 * (rng.gen::<f64>() - 0.5));
    let soil_water = 0.3 + 0.04 * (rng.gen::<f64>() - 0.5);
    DailyWeather { temperature, precipitation, solar_radiation, soil_water }
}

/// First day >= Sep 1 whose trailing `smoothing` mean temperature is below
/// the threshold; mid-October fallback if the year never cools enough.
fn site_onset(config: &SynthConfig, year: i32, temps: &BTreeMap<NaiveDate, f64>) -> NaiveDate {
    let sep1 = NaiveDate::from_ymd_opt(year, 9, 1).expect("valid date");
    let nov1 = NaiveDate::from_ymd_opt(year, 11, 1).expect("valid date");
    let mut day = sep1;
    while day <= nov1 {
        let mut sum = 0.0;
        for back in 0..config.smoothing_days {
            let d = day - chrono::Days::new(back as u64);
            sum += temps[&d];
        }
        if sum / (config.smoothing_days as f64) < config.onset_temp_kelvin {
            return day;
        }
        day = day.succ_opt().expect("date increment");
    }
    NaiveDate::from_ymd_opt(year, 10, 15).expect("valid date")
}

struct TreeYearCurve {
    onset: NaiveDate,
    duration: i64,
}

impl TreeYearCurve {
    /// Leaf-fall percentage on `date`: zero before onset, logistic across the
    /// duration, exactly 100 from `onset + duration` onward.
    fn lfall(&self, date: NaiveDate) -> f64 {
        if date < self.onset {
            return 0.0;
        }
        let elapsed = (date - self.onset).num_days();
        if elapsed >= self.duration {
            return 100.0;
        }
        // ~0.5% at onset, ~99.5% at onset + duration
        let steepness = 2.0 * 199.0f64.ln() / self.duration as f64;
        let centered = elapsed as f64 - self.duration as f64 / 2.0;
        100.0 / (1.0 + (-steepness * centered).exp())
    }
}

fn ndvi_true(lfall: f64) -> f64 {
    0.2 + 0.7 * (1.0 - lfall / 100.0)
}

fn ndwi_true(lfall: f64) -> f64 {
    -0.65 + 0.5 * (lfall / 100.0)
}

fn ndmi_true(lfall: f64) -> f64 {
    0.05 + 0.55 * (1.0 - lfall / 100.0)
}

fn index_true(kind: IndexKind, lfall: f64) -> f64 {
    match kind {
        IndexKind::Ndvi => ndvi_true(lfall),
        IndexKind::Ndwi => ndwi_true(lfall),
        IndexKind::Ndmi => ndmi_true(lfall),
    }
}

/// Generates the full dataset deterministically from the config seed.
pub fn generate(config: &SynthConfig) -> SynthDataset {
    assert!(config.years.last > config.years.first, "need at least 2 years");
    assert!(config.duration_mean_days > 0.0, "duration mean must be positive");
    assert!(
        config.tree_count >= 1 && config.tree_count <= (GRID_SIZE - 2) * (GRID_SIZE - 2),
        "tree count must fit the raster interior"
    );
    let trees = tree_ids(config.tree_count);
    let range = config.years;

    // Site weather, shared by all trees.
    let weather: BTreeMap<NaiveDate, DailyWeather> =
        range.days().map(|d| (d, weather_for(config, d))).collect();

    // Per-year site onsets from the trailing-mean rule. The smoothing window
    // may reach before Jan 1 of the first year; extend temperatures backward.
    let mut extended_temps: BTreeMap<NaiveDate, f64> =
        weather.iter().map(|(d, w)| (*d, w.temperature)).collect();
    for back in 1..=config.smoothing_days {
        let d = range.start_date() - chrono::Days::new(back as u64);
        extended_temps.insert(d, weather_for(config, d).temperature);
    }
    let site_onsets: BTreeMap<i32, NaiveDate> = range
        .years()
        .map(|y| (y, site_onset(config, y, &extended_temps)))
        .collect();

    // Per-(tree, year) curves.
    let mut curves: BTreeMap<(usize, i32), TreeYearCurve> = BTreeMap::new();
    let mut truth = Vec::new();
    for (k, tree) in trees.iter().enumerate() {
        for year in range.years() {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                config.seed,
                &[salt_str("tree-year"), k as u64, year as u64],
            ));
            let jitter = rng.gen_range(-config.onset_jitter_days..=config.onset_jitter_days);
            let sep1 = NaiveDate::from_ymd_opt(year, 9, 1).expect("valid date");
            let nov1 = NaiveDate::from_ymd_opt(year, 11, 1).expect("valid date");
            let mut onset = site_onsets[&year];
            if jitter >= 0 {
                onset = onset + chrono::Days::new(jitter as u64);
            } else {
                onset = onset - chrono::Days::new((-jitter) as u64);
            }
            let onset = onset.clamp(sep1, nov1);
            let duration_dist =
                Normal::new(config.duration_mean_days, config.duration_sd_days).expect("valid sd");
            let mut duration = rng.sample(duration_dist).round() as i64;
            duration = duration.clamp(40, 70);
            // reach 100 strictly before Dec 31
            let dec30 = NaiveDate::from_ymd_opt(year, 12, 30).expect("valid date");
            duration = duration.min((dec30 - onset).num_days());
            let curve = TreeYearCurve { onset, duration };
            truth.push(TruthPeriod {
                tree_id: tree.clone(),
                year,
                start: onset,
                end: onset + chrono::Days::new(duration as u64 - 1),
            });
            curves.insert((k, year), curve);
        }
    }

    let lfall_at = |k: usize, date: NaiveDate| -> f64 { curves[&(k, date.year())].lfall(date) };

    // Daily truth curves per tree.
    let mut daily_truth = BTreeMap::new();
    for (k, tree) in trees.iter().enumerate() {
        let values: Vec<f64> = range.days().map(|d| lfall_at(k, d)).collect();
        daily_truth.insert(tree.clone(), values);
    }

    // Pheno observations: a weekly grid per (tree, year), the whole grid
    // shifted by at most one day so gaps stay exactly seven days.
    let mut pheno_rows: Vec<(NaiveDate, String, String, f64)> = Vec::new();
    for (k, tree) in trees.iter().enumerate() {
        let species = &config.species_pool[k % config.species_pool.len()];
        for year in range.years() {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                config.seed,
                &[salt_str("obs"), k as u64, year as u64],
            ));
            let offset: i64 = rng.gen_range(-1..=1);
            let sep1 = NaiveDate::from_ymd_opt(year, 9, 1).expect("valid date");
            let dec31 = NaiveDate::from_ymd_opt(year, 12, 31).expect("valid date");
            let mut date = if offset >= 0 {
                sep1 + chrono::Days::new(offset as u64)
            } else {
                sep1 - chrono::Days::new((-offset) as u64)
            };
            while date <= dec31 {
                if date >= sep1 {
                    let value = (lfall_at(k, date) * 100.0).round() / 100.0;
                    pheno_rows.push((date, tree.clone(), species.clone(), value));
                }
                date = date + chrono::Days::new(7);
            }
        }
    }
    pheno_rows.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let mut pheno_csv = String::from("date,tree_id,species,lfall\n");
    for (date, tree, species, value) in &pheno_rows {
        pheno_csv.push_str(&format!("{date},{tree},{species},{value}\n"));
    }

    let mut sites_csv = String::from("tree_id,lat,lon\n");
    for (k, tree) in trees.iter().enumerate() {
        let (lat, lon) = tree_coords(k);
        sites_csv.push_str(&format!("{tree},{lat},{lon}\n"));
    }

    let mut era5_csv = String::from("date,temperature,precipitation,solar_radiation,soil_water\n");
    for (date, w) in &weather {
        era5_csv.push_str(&format!(
            "{date},{},{},{},{}\n",
            w.temperature, w.precipitation, w.solar_radiation, w.soil_water
        ));
    }

    // Index rasters every `revisit_days`, cloud-masked dates fully nodata.
    let mut rasters = Vec::new();
    let revisit_dates: Vec<NaiveDate> = range
        .days()
        .enumerate()
        .filter(|(i, _)| i % config.revisit_days == 0)
        .map(|(_, d)| d)
        .collect();
    for kind in IndexKind::ALL {
        for &date in &revisit_dates {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                config.seed,
                &[
                    salt_str("raster"),
                    kind as u64,
                    date.num_days_from_ce() as u64,
                ],
            ));
            let cloudy = rng.gen::<f64>() < config.cloud_fraction;
            let noise = Normal::new(0.0, config.index_noise).expect("valid sd");
            let site_mean = (0..config.tree_count)
                .map(|k| index_true(kind, lfall_at(k, date)))
                .sum::<f64>()
                / config.tree_count as f64;
            let mut cells: Vec<Option<f64>> = Vec::with_capacity(GRID_SIZE * GRID_SIZE);
            for row in 0..GRID_SIZE {
                for col in 0..GRID_SIZE {
                    let rfb = GRID_SIZE - 1 - row;
                    let occupant = (0..config.tree_count).find(|&k| tree_cell(k) == (rfb, col));
                    // draw noise before the cloud check so the stream is stable
                    let n = rng.sample(noise);
                    let dropout = rng.gen::<f64>() < 0.02;
                    if cloudy || dropout {
                        cells.push(None);
                        continue;
                    }
                    let base = match occupant {
                        Some(k) => index_true(kind, lfall_at(k, date)),
                        None => site_mean,
                    };
                    cells.push(Some((base + n).clamp(-1.0, 1.0)));
                }
            }
            let grid = BandGrid::new(
                GRID_SIZE,
                GRID_SIZE,
                GRID_XLL,
                GRID_YLL,
                CELL_SIZE,
                DEFAULT_NODATA,
                cells,
            )
            .expect("cell count matches");
            rasters.push((format!("{kind}_{date}.asc"), grid.to_ascii()));
        }
    }

    let mut truth_csv = String::from("tree_id,year,start,end\n");
    truth.sort_by(|a, b| (&a.tree_id, a.year).cmp(&(&b.tree_id, b.year)));
    for t in &truth {
        truth_csv.push_str(&format!("{},{},{},{}\n", t.tree_id, t.year, t.start, t.end));
    }

    SynthDataset {
        pheno_csv,
        sites_csv,
        era5_csv,
        rasters,
        truth_csv,
        truth,
        daily_truth,
    }
}

/// Writes `pheno.csv`, `sites.csv`, `era5.csv`, `truth_periods.csv` and the
/// raster directory under `data_dir`.
pub fn write_dataset(dataset: &SynthDataset, data_dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(data_dir)?;
    std::fs::write(data_dir.join("pheno.csv"), &dataset.pheno_csv)?;
    std::fs::write(data_dir.join("sites.csv"), &dataset.sites_csv)?;
    std::fs::write(data_dir.join("era5.csv"), &dataset.era5_csv)?;
    std::fs::write(data_dir.join("truth_periods.csv"), &dataset.truth_csv)?;
    let raster_dir = data_dir.join("raster");
    std::fs::create_dir_all(&raster_dir)?;
    for (name, content) in &dataset.rasters {
        std::fs::write(raster_dir.join(name), content)?;
    }
    Ok(())
}

/// Parses `truth_periods.csv` back into truth periods.
pub fn read_truth_csv(text: &str) -> Vec<TruthPeriod> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            TruthPeriod {
                tree_id: parts[0].to_string(),
                year: parts[1].parse().expect("year"),
                start: NaiveDate::parse_from_str(parts[2], "%Y-%m-%d").expect("start date"),
                end: NaiveDate::parse_from_str(parts[3], "%Y-%m-%d").expect("end date"),
            }
        })
        .collect()
}
