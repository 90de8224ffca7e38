//! Reference answers ("signatures") generated by LLMs for each survey question.
//!
//! Signatures are produced over a grid of models and sampling temperatures,
//! optionally crossed with a sentiment constraint, and persisted per question
//! before any collected response is scored.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::gateway::{ChatRequest, Gateway, Message, PurposeTag};
use crate::model::SurveyQuestion;
use crate::report::render::{canonical_json, format_threshold, write_atomic};

pub const BASIC_TEMPLATE_VERSION: &str = "basic-v1";
pub const SENTIMENT_TEMPLATE_VERSION: &str = "sentiment-v1";

pub const DEFAULT_MODELS: [&str; 4] = ["gpt-3.5-turbo", "gpt-4", "gpt-4o", "gpt-4o-mini"];
pub const DEFAULT_TEMPERATURES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_SENTIMENTS: [Sentiment; 3] =
    [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sentiment {
    #[serde(alias = "positive")]
    Positive,
    #[serde(alias = "negative")]
    Negative,
    #[serde(alias = "neutral")]
    Neutral,
}

impl Sentiment {
    pub fn word(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(Sentiment::Positive),
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            other => Err(Error::InvalidArgument(format!("unknown sentiment {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StrategyKind {
    Basic,
    Sentiment,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Basic => "basic",
            StrategyKind::Sentiment => "sentiment",
        }
    }

    pub fn template_version(self) -> &'static str {
        match self {
            StrategyKind::Basic => BASIC_TEMPLATE_VERSION,
            StrategyKind::Sentiment => SENTIMENT_TEMPLATE_VERSION,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(StrategyKind::Basic),
            "sentiment" | "senti" => Ok(StrategyKind::Sentiment),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// A prompt strategy; `sentiment` is present exactly for the sentiment kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptStrategy {
    kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentiment: Option<Sentiment>,
}

impl PromptStrategy {
    pub fn basic() -> Self {
        PromptStrategy {
            kind: StrategyKind::Basic,
            sentiment: None,
        }
    }

    pub fn with_sentiment(sentiment: Sentiment) -> Self {
        PromptStrategy {
            kind: StrategyKind::Sentiment,
            sentiment: Some(sentiment),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn sentiment(&self) -> Option<Sentiment> {
        self.sentiment
    }

    fn label(&self) -> String {
        match self.sentiment {
            None => self.kind.as_str().to_string(),
            Some(s) => format!("{}-{}", self.kind.as_str(), s.word()),
        }
    }
}

/// The question text verbatim as a single user message.
pub fn build_basic_prompt(question: &SurveyQuestion) -> Vec<Message> {
    vec![Message::user(question.text.clone())]
}

/// One user message asking for an answer carrying the given sentiment.
pub fn build_sentiment_prompt(question: &SurveyQuestion, sentiment: Sentiment) -> Vec<Message> {
    vec![Message::user(format!(
        "Answer the following survey question with a {} sentiment, as a survey participant would.\n\n{}",
        sentiment.word(),
        question.text
    ))]
}

pub fn build_prompt(question: &SurveyQuestion, strategy: PromptStrategy) -> Vec<Message> {
    match strategy.sentiment {
        None => build_basic_prompt(question),
        Some(s) => build_sentiment_prompt(question, s),
    }
}

/// The exact request a grid cell sends through the gateway.
pub fn signature_request(
    question: &SurveyQuestion,
    strategy: PromptStrategy,
    model_id: &str,
    temperature: f64,
) -> Result<ChatRequest> {
    ChatRequest::new(
        model_id,
        temperature,
        build_prompt(question, strategy),
        PurposeTag::GenerateSignature,
        strategy.kind.template_version(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub signature_id: String,
    pub question_id: String,
    pub strategy: PromptStrategy,
    pub model_id: String,
    pub temperature: f64,
    pub text: String,
}

impl Signature {
    fn cell_order(&self, other: &Signature) -> Ordering {
        cell_cmp(
            (&self.model_id, self.temperature, self.strategy.sentiment),
            (&other.model_id, other.temperature, other.strategy.sentiment),
        )
    }
}

fn cell_cmp(a: (&str, f64, Option<Sentiment>), b: (&str, f64, Option<Sentiment>)) -> Ordering {
    a.0.cmp(b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

pub fn signature_id(question_id: &str, strategy: PromptStrategy, model_id: &str, temperature: f64) -> String {
    format!(
        "{question_id}/{}/{model_id}/t{}",
        strategy.label(),
        format_threshold(temperature)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub strategy: StrategyKind,
    pub models: Vec<String>,
    pub temperatures: Vec<f64>,
    pub sentiments: Vec<Sentiment>,
    /// Signature counts are per strategy: |models| x |temperatures| for basic,
    /// times |sentiments| for the sentiment strategy.
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model_id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<Sentiment>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupRemoval {
    pub removed: String,
    pub kept: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureSet {
    pub question_id: String,
    pub strategy: StrategyKind,
    pub template_version: String,
    pub grid_descriptor: GridDescriptor,
    pub generated_at: String,
    pub signatures: Vec<Signature>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
    #[serde(default)]
    pub dedup_removals: Vec<DedupRemoval>,
}

impl SignatureSet {
    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

fn check_grid(models: &[String], temperatures: &[f64], sentiments: &[Sentiment], kind: StrategyKind) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("model list is empty".into()));
    }
    if temperatures.is_empty() {
        return Err(Error::InvalidArgument("temperature list is empty".into()));
    }
    if kind == StrategyKind::Sentiment && sentiments.is_empty() {
        return Err(Error::InvalidArgument("sentiment list is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for m in models {
        if !seen.insert(m.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate model {m:?}")));
        }
    }
    for (i, t) in temperatures.iter().enumerate() {
        if !(0.0..=1.0).contains(t) {
            return Err(Error::InvalidArgument(format!("temperature {t} outside [0, 1]")));
        }
        if temperatures[..i].contains(t) {
            return Err(Error::InvalidArgument(format!("duplicate temperature {t}")));
        }
    }
    for (i, s) in sentiments.iter().enumerate() {
        if sentiments[..i].contains(s) {
            return Err(Error::InvalidArgument(format!("duplicate sentiment {}", s.word())));
        }
    }
    Ok(())
}

/// Generates one signature per grid cell through the gateway.
///
/// Cells whose provider call fails or returns blank text are recorded as
/// failures; more than half failing fails the whole question.
pub fn generate_signatures(
    gateway: &Gateway,
    question: &SurveyQuestion,
    kind: StrategyKind,
    models: &[String],
    temperatures: &[f64],
    sentiments: &[Sentiment],
) -> Result<SignatureSet> {
    check_grid(models, temperatures, sentiments, kind)?;
    let strategies: Vec<PromptStrategy> = match kind {
        StrategyKind::Basic => vec![PromptStrategy::basic()],
        StrategyKind::Sentiment => sentiments.iter().map(|&s| PromptStrategy::with_sentiment(s)).collect(),
    };
    let mut cells: Vec<(&str, f64, PromptStrategy)> = Vec::new();
    for m in models {
        for &t in temperatures {
            for &s in &strategies {
                cells.push((m.as_str(), t, s));
            }
        }
    }
    cells.sort_by(|a, b| cell_cmp((a.0, a.1, a.2.sentiment), (b.0, b.1, b.2.sentiment)));

    let outcomes: Vec<Result<(String, String)>> = cells
        .par_iter()
        .map(|&(model, t, strategy)| {
            let req = signature_request(question, strategy, model, t)?;
            let res = gateway.chat_complete(&req)?;
            Ok((res.text, res.stored_at))
        })
        .collect();

    let mut signatures = Vec::new();
    let mut failures = Vec::new();
    let mut generated_at: Option<String> = None;
    for (&(model, t, strategy), outcome) in cells.iter().zip(outcomes) {
        let failure = |reason: String| CellFailure {
            model_id: model.to_string(),
            temperature: t,
            sentiment: strategy.sentiment,
            reason,
        };
        match outcome {
            Ok((text, stored_at)) => {
                if text.trim().is_empty() {
                    failures.push(failure("empty provider output".into()));
                    continue;
                }
                if generated_at.as_ref().is_none_or(|g| stored_at > *g) {
                    generated_at = Some(stored_at);
                }
                signatures.push(Signature {
                    signature_id: signature_id(&question.question_id, strategy, model, t),
                    question_id: question.question_id.clone(),
                    strategy,
                    model_id: model.to_string(),
                    temperature: t,
                    text,
                });
            }
            // misconfiguration is not a per-cell failure
            Err(e) if e.kind() == ErrorKind::Config || matches!(e, Error::InvalidRequest(_)) => {
                return Err(e)
            }
            Err(e) => failures.push(failure(e.to_string())),
        }
    }

    if failures.len() * 2 > cells.len() {
        return Err(Error::GenerationFailed {
            question_id: question.question_id.clone(),
            failed: failures.len(),
            total: cells.len(),
        });
    }

    Ok(SignatureSet {
        question_id: question.question_id.clone(),
        strategy: kind,
        template_version: kind.template_version().to_string(),
        grid_descriptor: GridDescriptor {
            strategy: kind,
            models: models.to_vec(),
            temperatures: temperatures.to_vec(),
            sentiments: if kind == StrategyKind::Sentiment {
                sentiments.to_vec()
            } else {
                Vec::new()
            },
            cells: cells.len(),
        },
        generated_at: generated_at.unwrap_or_default(),
        signatures,
        failures,
        dedup_removals: Vec::new(),
    })
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Merges signatures whose text matches after trimming and whitespace
/// collapsing, keeping the smallest (model, temperature, sentiment) cell.
pub fn dedupe_signatures(mut set: SignatureSet) -> SignatureSet {
    let mut order: Vec<usize> = (0..set.signatures.len()).collect();
    order.sort_by(|&a, &b| set.signatures[a].cell_order(&set.signatures[b]));

    let mut keeper: HashMap<String, usize> = HashMap::new();
    let mut drop = vec![false; set.signatures.len()];
    for i in order {
        let key = normalize(&set.signatures[i].text);
        match keeper.get(&key) {
            Some(&k) => {
                drop[i] = true;
                set.dedup_removals.push(DedupRemoval {
                    removed: set.signatures[i].signature_id.clone(),
                    kept: set.signatures[k].signature_id.clone(),
                });
            }
            None => {
                keeper.insert(key, i);
            }
        }
    }
    let mut idx = 0;
    set.signatures.retain(|_| {
        let keep = !drop[idx];
        idx += 1;
        keep
    });
    set
}

/// On-disk signature store: `<root>/<strategy>/<question_id>.json`.
#[derive(Debug, Clone)]
pub struct SignatureStore {
    root: PathBuf,
}

impl SignatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SignatureStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, kind: StrategyKind, question_id: &str) -> PathBuf {
        self.root
            .join(kind.as_str())
            .join(format!("{}.json", file_safe(question_id)))
    }

    pub fn save(&self, set: &SignatureSet) -> Result<PathBuf> {
        let path = self.path_for(set.strategy, &set.question_id);
        write_atomic(&path, canonical_json(set)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(&self, kind: StrategyKind, question_id: &str) -> Result<Option<SignatureSet>> {
        let path = self.path_for(kind, question_id);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let set: SignatureSet = serde_json::from_str(&raw).map_err(|e| Error::Corrupted {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if set.question_id != question_id || set.strategy != kind {
            return Err(Error::Corrupted {
                path,
                message: format!(
                    "file holds {} signatures for question {:?}",
                    set.strategy, set.question_id
                ),
            });
        }
        Ok(Some(set))
    }
}

/// Percent-encodes anything outside `[A-Za-z0-9._-]` so ids map to safe file names.
pub fn file_safe(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && !out.is_empty()) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
