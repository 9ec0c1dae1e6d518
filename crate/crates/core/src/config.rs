//! Run configuration: a TOML file with flat dotted keys (for example
//! `model.learning_rate = 0.001`), every field defaulted, command-line flags
//! overriding file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::YearRange;
use crate::ingest::WeatherSelection;
use crate::nn::{Activation, LayerSpec, ModelConfig};
use crate::raster::IndexKind;
use crate::synth::SynthConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pheno: PathBuf,
    pub sites: PathBuf,
    pub era5: PathBuf,
    pub raster_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            pheno: "data/pheno.csv".into(),
            sites: "data/sites.csv".into(),
            era5: "data/era5.csv".into(),
            raster_dir: "data/raster".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearsConfig {
    pub first: i32,
    pub last: i32,
    /// Validation year; the remaining years in the range train the model.
    pub val: i32,
}

impl Default for YearsConfig {
    fn default() -> Self {
        Self { first: 2015, last: 2021, val: 2021 }
    }
}

impl YearsConfig {
    pub fn range(&self) -> YearRange {
        YearRange::new(self.first, self.last)
    }

    pub fn train_years(&self) -> Vec<i32> {
        (self.first..=self.last).filter(|y| *y != self.val).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Vegetation indices to ingest, e.g. ["NDVI", "NDWI", "NDMI"].
    pub indices: Vec<String>,
    /// Weather columns, each `name` or `name=alias`.
    pub weather: Vec<String>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            indices: vec!["NDVI".into(), "NDWI".into(), "NDMI".into()],
            weather: vec![
                "temperature".into(),
                "precipitation".into(),
                "solar_radiation".into(),
                "soil_water".into(),
            ],
        }
    }
}

impl FeaturesConfig {
    pub fn index_kinds(&self) -> Result<Vec<IndexKind>, ConfigError> {
        self.indices
            .iter()
            .map(|s| s.parse::<IndexKind>().map_err(|e| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    pub fn weather_selections(&self) -> Vec<WeatherSelection> {
        self.weather.iter().map(|s| WeatherSelection::parse(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Vec<LayerSpec>,
    pub learning_rate: f64,
    pub window_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSpec { units: 256, activation: Activation::Tanh, dropout: 0.1 },
                LayerSpec { units: 32, activation: Activation::Relu, dropout: 0.0 },
                LayerSpec { units: 32, activation: Activation::Relu, dropout: 0.0 },
            ],
            learning_rate: 0.001,
            window_size: 7,
            epochs: 10,
            batch_size: 32,
            threshold: 0.5,
        }
    }
}

impl ModelSection {
    /// Completes the section into a full model config once the feature count
    /// is known.
    pub fn to_model_config(&self, feature_count: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            layers: self.layers.clone(),
            learning_rate: self.learning_rate,
            window_size: self.window_size,
            feature_count,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    /// Maximum epochs per configuration (Hyperband R).
    pub r_max: usize,
    /// Downsampling rate (Hyperband eta).
    pub eta: usize,
    /// Tuner seed; falls back to the global seed when absent.
    pub seed: Option<u64>,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self { r_max: 30, eta: 3, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub tree_count: usize,
    pub species: Vec<String>,
    pub onset_temp_kelvin: f64,
    pub smoothing_days: usize,
    pub duration_mean_days: f64,
    pub duration_sd_days: f64,
    pub onset_jitter_days: i64,
    pub temp_noise_kelvin: f64,
    pub index_noise: f64,
    pub cloud_fraction: f64,
    pub revisit_days: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            tree_count: d.tree_count,
            species: d.species_pool,
            onset_temp_kelvin: d.onset_temp_kelvin,
            smoothing_days: d.smoothing_days,
            duration_mean_days: d.duration_mean_days,
            duration_sd_days: d.duration_sd_days,
            onset_jitter_days: d.onset_jitter_days,
            temp_noise_kelvin: d.temp_noise_kelvin,
            index_noise: d.index_noise,
            cloud_fraction: d.cloud_fraction,
            revisit_days: d.revisit_days,
        }
    }
}

/// Full run configuration with built-in defaults for every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub holdout_tree: String,
    pub paths: PathsConfig,
    pub years: YearsConfig,
    pub features: FeaturesConfig,
    pub model: ModelSection,
    pub tuner: TunerConfig,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            jobs: 1,
            holdout_tree: "T3".into(),
            paths: PathsConfig::default(),
            years: YearsConfig::default(),
            features: FeaturesConfig::default(),
            model: ModelSection::default(),
            tuner: TunerConfig::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    /// Loads from a TOML file, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let config = match path {
            None => Self::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
                toml::from_str(&text)?
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Applies command-line overrides on top of file values.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        jobs: Option<usize>,
        out: Option<&Path>,
    ) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(jobs) = jobs {
            self.jobs = jobs;
        }
        if let Some(out) = out {
            self.paths.out_dir = out.to_path_buf();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.years.first > self.years.last {
            return Err(ConfigError::Invalid(format!(
                "years.first {} > years.last {}",
                self.years.first, self.years.last
            )));
        }
        if !(self.years.first..=self.years.last).contains(&self.years.val) {
            return Err(ConfigError::Invalid(format!(
                "years.val {} outside [{}, {}]",
                self.years.val, self.years.first, self.years.last
            )));
        }
        if self.years.train_years().is_empty() {
            return Err(ConfigError::Invalid("no training years remain".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        if self.holdout_tree.is_empty() {
            return Err(ConfigError::Invalid("holdout_tree must be set".into()));
        }
        if self.features.indices.is_empty() && self.features.weather.is_empty() {
            return Err(ConfigError::Invalid("no features selected".into()));
        }
        self.features.index_kinds()?;
        if self.tuner.r_max == 0 {
            return Err(ConfigError::Invalid("tuner.r_max must be at least 1".into()));
        }
        if self.tuner.eta < 2 {
            return Err(ConfigError::Invalid("tuner.eta must be at least 2".into()));
        }
        // Model shape checks that do not need the feature count.
        let probe = self.model.to_model_config(1, self.seed);
        probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            years: self.years.range(),
            tree_count: self.synth.tree_count,
            species_pool: self.synth.species.clone(),
            onset_temp_kelvin: self.synth.onset_temp_kelvin,
            smoothing_days: self.synth.smoothing_days,
            duration_mean_days: self.synth.duration_mean_days,
            duration_sd_days: self.synth.duration_sd_days,
            onset_jitter_days: self.synth.onset_jitter_days,
            temp_noise_kelvin: self.synth.temp_noise_kelvin,
            index_noise: self.synth.index_noise,
            cloud_fraction: self.synth.cloud_fraction,
            revisit_days: self.synth.revisit_days,
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.years.train_years(), (2015..=2020).collect::<Vec<_>>());
        assert_eq!(config.model.layers.len(), 3);
        assert_eq!(config.model.layers[0].units, 256);
    }

    #[test]
    fn toml_with_flat_dotted_keys_parses() {
        let text = r#"
seed = 42
holdout_tree = "T2"
paths.pheno = "elsewhere/pheno.csv"
years.first = 2016
years.last = 2020
years.val = 2020
model.learning_rate = 0.01
model.epochs = 3
model.layers = [{ units = 16, activation = "tanh", dropout = 0.2 }]
features.weather = ["temperature=t2m"]
tuner.r_max = 9
"#;
        let config: RunConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.paths.pheno, PathBuf::from("elsewhere/pheno.csv"));
        assert_eq!(config.paths.sites, PathBuf::from("data/sites.csv")); // default kept
        assert_eq!(config.model.learning_rate, 0.01);
        assert_eq!(config.model.layers[0].units, 16);
        assert_eq!(config.years.train_years(), vec![2016, 2017, 2018, 2019]);
        let selections = config.features.weather_selections();
        assert_eq!(selections[0].source, "temperature");
        assert_eq!(selections[0].output_name(), "t2m");
        assert_eq!(config.tuner.r_max, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("nonsense = 1").is_err());
        assert!(toml::from_str::<RunConfig>("model.optimizer = \"sgd\"").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut config = RunConfig::default();
        config.years.val = 2030;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.model.threshold = 1.0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.tuner.eta = 1;
        assert!(config.validate().is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut config = RunConfig::default();
        config.apply_overrides(Some(99), Some(4), Some(Path::new("elsewhere")));
        assert_eq!(config.seed, 99);
        assert_eq!(config.jobs, 4);
        assert_eq!(config.paths.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 8, ..Default::default() };
        assert_ne!(a.hash(), c.hash());
    }
}
