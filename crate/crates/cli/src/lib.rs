//! Command-line front end: argument parsing, config merging and the five
//! commands. `main.rs` only maps results to exit codes.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use surveysig::signature::StrategyKind;
use surveysig::{ErrorKind, Result};

use config::{Average, RunConfig, ScoreDetail};

#[derive(Debug, Parser)]
#[command(name = "surveysig", version, about = "Flag likely AI-generated open-ended survey responses")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset: a directory of studies/questions/responses CSVs, or one JSON file.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory (signatures, scores, verdicts, reports, cache).
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    /// Response cache directory (default: <output>/cache)
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Use the deterministic offline providers instead of the network.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Seed for the mock providers.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_strategy(s: &str) -> std::result::Result<StrategyKind, String> {
    s.parse().map_err(|e: surveysig::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and lint a dataset, then print per-study counts.
    Validate,
    /// Pre-generate reference signatures for every open-ended question.
    GenSignatures {
        /// Signature strategies, comma-separated: basic, sentiment
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategy: Vec<StrategyKind>,
        /// Grid models, comma-separated
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Grid temperatures, comma-separated
        #[arg(long, value_delimiter = ',')]
        temps: Vec<f64>,
        /// Sentiments for the sentiment strategy
        #[arg(long, value_delimiter = ',')]
        sentiments: Vec<String>,
    },
    /// Embed responses and signatures, score, and write sweep/histogram/cases.
    Score {
        /// Signature strategies, comma-separated: basic, sentiment
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategy: Vec<StrategyKind>,
        /// Similarity thresholds, ascending, comma-separated
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        thresholds: Vec<f64>,
        /// Final scores below this are listed as low cases
        #[arg(long, allow_negative_numbers = true)]
        low_th: Option<f64>,
        #[arg(long, value_enum)]
        scores: Option<ScoreDetail>,
        #[arg(long, value_enum)]
        average: Option<Average>,
        /// Drop empty responses from denominators.
        #[arg(long)]
        exclude_empty: bool,
        /// Histogram bin width
        #[arg(long)]
        bin_width: Option<f64>,
        /// Number of highest-scoring cases to list per strategy
        #[arg(long)]
        k_high: Option<usize>,
    },
    /// Ask an LLM whether each response was AI-generated.
    DetectLlm {
        /// Detector models, comma-separated
        #[arg(long, value_delimiter = ',')]
        model: Vec<String>,
        /// Detector sampling temperature
        #[arg(long)]
        temperature: Option<f64>,
        /// Fail on unparseable answers instead of recording UNDETERMINED.
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum)]
        average: Option<Average>,
    },
    /// Merge existing score and verdict dumps into one report.
    Report,
}

impl Cli {
    /// The config file (if any) with this invocation's flags applied on top.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(c) = &self.cache_dir {
            cfg.cache_dir = Some(c.clone());
        }
        cfg.mock |= self.mock;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match &self.command {
            Command::GenSignatures { models, temps, sentiments, .. } => {
                if !models.is_empty() {
                    cfg.grid.models = models.clone();
                }
                if !temps.is_empty() {
                    cfg.grid.temperatures = temps.clone();
                }
                if !sentiments.is_empty() {
                    cfg.grid.sentiments = sentiments
                        .iter()
                        .map(|s| s.parse())
                        .collect::<Result<_>>()
                        .map_err(|e| surveysig::Error::Config(e.to_string()))?;
                }
            }
            Command::Score {
                thresholds,
                low_th,
                scores,
                average,
                exclude_empty,
                bin_width,
                k_high,
                ..
            } => {
                let s = &mut cfg.scoring;
                if !thresholds.is_empty() {
                    s.thresholds = thresholds.clone();
                }
                if let Some(v) = low_th {
                    s.low_threshold = *v;
                }
                if let Some(v) = scores {
                    s.scores = *v;
                }
                if let Some(v) = average {
                    s.average = *v;
                }
                s.exclude_empty |= exclude_empty;
                if let Some(v) = bin_width {
                    s.bin_width = *v;
                }
                if let Some(v) = k_high {
                    s.k_high = *v;
                }
            }
            Command::DetectLlm { model, temperature, strict, average } => {
                let d = &mut cfg.detector;
                if !model.is_empty() {
                    d.models = model.clone();
                }
                if let Some(t) = temperature {
                    d.temperature = *t;
                }
                d.strict |= strict;
                if let Some(a) = average {
                    d.average = *a;
                }
            }
            Command::Validate | Command::Report => {}
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Validate => commands::validate(&cfg),
        Command::GenSignatures { strategy, .. } => commands::gen_signatures(&cfg, &strategies_or_basic(strategy)),
        Command::Score { strategy, .. } => commands::score(&cfg, &strategies_or_basic(strategy)),
        Command::DetectLlm { .. } => commands::detect_llm(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn strategies_or_basic(s: &[StrategyKind]) -> Vec<StrategyKind> {
    let mut v = if s.is_empty() { vec![StrategyKind::Basic] } else { s.to_vec() };
    v.sort();
    v.dedup();
    v
}

/// 0 success, 1 usage/config, 2 data, 3 provider.
pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Provider => 3,
    }
}
