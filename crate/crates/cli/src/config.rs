//! The run configuration: one TOML file, every key optional, flags win.
//!
//! ```toml
//! dataset = "fixtures/corpus"
//! output_dir = "out"
//! cache_dir = "out/cache"        # default: <output_dir>/cache
//! mock = true
//! seed = 42
//!
//! [providers]
//! chat_models = ["gpt-3.5-turbo", "gpt-4", "gpt-4o", "gpt-4o-mini"]
//! embedding_model = "text-embedding-3-small"
//! mock_embedding_dim = 64
//! timeout_secs = 60
//! max_in_flight = 5
//!
//! [grid]
//! models = ["gpt-3.5-turbo", "gpt-4", "gpt-4o", "gpt-4o-mini"]
//! temperatures = [0.0, 0.25, 0.5, 0.75, 1.0]
//! sentiments = ["positive", "negative", "neutral"]
//!
//! [scoring]
//! thresholds = [0.7, 0.75, 0.8, 0.85, 0.9]
//! low_threshold = 0.0
//! average = "pooled"             # or "unweighted"
//! exclude_empty = false
//! bin_width = 0.05
//! k_high = 10
//! scores = "summary"             # or "full"
//!
//! [detector]
//! models = ["gpt-3.5-turbo"]
//! temperature = 0.0
//! strict = false
//! ```
//!
//! Credentials never live here; they come from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surveysig::report::AverageConvention;
use surveysig::signature::{Sentiment, DEFAULT_MODELS, DEFAULT_SENTIMENTS, DEFAULT_TEMPERATURES};
use surveysig::similarity::{check_threshold, DEFAULT_LOW_THRESHOLD, DEFAULT_THRESHOLDS};
use surveysig::{Error, Result};

fn default_models() -> Vec<String> {
    DEFAULT_MODELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub mock: bool,
    pub seed: u64,
    pub providers: ProviderSettings,
    pub grid: GridSettings,
    pub scoring: ScoringSettings,
    pub detector: DetectorSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            output_dir: PathBuf::from("surveysig-out"),
            cache_dir: None,
            mock: false,
            seed: 42,
            providers: ProviderSettings::default(),
            grid: GridSettings::default(),
            scoring: ScoringSettings::default(),
            detector: DetectorSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    /// Model ids the chat provider accepts; grids and detectors must use these.
    pub chat_models: Vec<String>,
    pub embedding_model: String,
    pub mock_embedding_dim: usize,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            chat_models: default_models(),
            embedding_model: "text-embedding-3-small".into(),
            mock_embedding_dim: 64,
            timeout_secs: 60,
            max_in_flight: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub sentiments: Vec<Sentiment>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            models: default_models(),
            temperatures: DEFAULT_TEMPERATURES.to_vec(),
            sentiments: DEFAULT_SENTIMENTS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Pooled,
    Unweighted,
}

impl From<Average> for AverageConvention {
    fn from(a: Average) -> Self {
        match a {
            Average::Pooled => AverageConvention::PooledWeighted,
            Average::Unweighted => AverageConvention::UnweightedMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreDetail {
    /// Final score, best signature and flags per response.
    Summary,
    /// Also every per-signature similarity.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSettings {
    pub thresholds: Vec<f64>,
    pub low_threshold: f64,
    pub average: Average,
    pub exclude_empty: bool,
    pub bin_width: f64,
    pub k_high: usize,
    pub scores: ScoreDetail,
}

impl Default for ScoringSettings {
    fn default() -> Self {
        ScoringSettings {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            low_threshold: DEFAULT_LOW_THRESHOLD,
            average: Average::Pooled,
            exclude_empty: false,
            bin_width: surveysig::report::DEFAULT_BIN_WIDTH,
            k_high: 10,
            scores: ScoreDetail::Summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub models: Vec<String>,
    pub temperature: f64,
    /// Fail on any unparseable detector answer instead of recording UNDETERMINED.
    pub strict: bool,
    /// Cohort averaging for the detector table; per-study cells are averaged
    /// unweighted by default, matching how such tables are usually printed.
    pub average: Average,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            models: vec!["gpt-3.5-turbo".into()],
            temperature: 0.0,
            strict: false,
            average: Average::Unweighted,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset` in the config)".into()))
    }

    fn check_models(&self, what: &str, models: &[String]) -> Result<()> {
        if models.is_empty() {
            return Err(Error::Config(format!("{what}: model list is empty")));
        }
        for m in models {
            if !self.providers.chat_models.contains(m) {
                return Err(Error::Config(format!(
                    "{what}: model {m:?} is not configured (available: {})",
                    self.providers.chat_models.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn validate_grid(&self) -> Result<()> {
        self.check_models("grid", &self.grid.models)?;
        if self.grid.temperatures.is_empty() {
            return Err(Error::Config("grid: temperature list is empty".into()));
        }
        if let Some(t) = self.grid.temperatures.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("grid: temperature {t} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn validate_scoring(&self) -> Result<()> {
        let s = &self.scoring;
        if s.thresholds.is_empty() {
            return Err(Error::Config("scoring: threshold list is empty".into()));
        }
        for &t in &s.thresholds {
            check_threshold(t).map_err(|e| Error::Config(e.to_string()))?;
        }
        if s.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("scoring: thresholds must be strictly ascending".into()));
        }
        if !(-1.0..=1.0).contains(&s.low_threshold) {
            return Err(Error::Config(format!("scoring: low_threshold {} outside [-1, 1]", s.low_threshold)));
        }
        Ok(())
    }

    pub fn validate_detector(&self) -> Result<()> {
        self.check_models("detector", &self.detector.models)?;
        if !(0.0..=1.0).contains(&self.detector.temperature) {
            return Err(Error::Config(format!(
                "detector: temperature {} outside [0, 1]",
                self.detector.temperature
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.grid.models.len() * c.grid.temperatures.len(), 20);
        assert_eq!(c.cache_dir(), PathBuf::from("surveysig-out/cache"));
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let c: RunConfig = toml::from_str(&doc).unwrap();
        assert!(c.mock);
        assert_eq!(c.grid.sentiments.len(), 3);
        assert_eq!(c.scoring.average, Average::Pooled);
        c.validate_grid().unwrap();
        c.validate_scoring().unwrap();
        c.validate_detector().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("api_key = \"sk-...\"").is_err());
    }

    #[test]
    fn unconfigured_model_is_config_error() {
        let mut c = RunConfig::default();
        c.detector.models = vec!["claude-9".into()];
        let err = c.validate_detector().unwrap_err();
        assert_eq!(err.kind(), surveysig::ErrorKind::Config);
        c.scoring.thresholds = vec![0.9, 0.8];
        assert!(c.validate_scoring().is_err());
    }
}
