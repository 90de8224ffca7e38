//! Cosine similarity against signatures, max-aggregation, and threshold verdicts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::EmbeddingVector;
use crate::model::{Verdict, VerdictFlag, VerdictSource};
use crate::report::render::format_threshold;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.7, 0.75, 0.8, 0.85, 0.9];
pub const DEFAULT_LOW_THRESHOLD: f64 = 0.0;

/// Cosine of the angle between two raw vectors, in double precision.
///
/// The result is clamped to `[-1, 1]`; the computation is symmetric in its
/// arguments bit for bit.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 || !aa.is_finite() || !bb.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    let na = aa.sqrt();
    let nb = bb.sqrt();
    // na * nb commutes exactly, so cos(a, b) == cos(b, a)
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine(a.values(), b.values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub response_id: String,
    pub signature_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseFlag {
    AiAtThreshold(f64),
    Irrelevant,
    Empty,
}

impl fmt::Display for ResponseFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseFlag::AiAtThreshold(th) => write!(f, "AI_AT_THRESHOLD({})", format_threshold(*th)),
            ResponseFlag::Irrelevant => f.write_str("IRRELEVANT"),
            ResponseFlag::Empty => f.write_str("EMPTY"),
        }
    }
}

impl std::str::FromStr for ResponseFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "IRRELEVANT" => Ok(ResponseFlag::Irrelevant),
            "EMPTY" => Ok(ResponseFlag::Empty),
            _ => s
                .strip_prefix("AI_AT_THRESHOLD(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|v| v.parse().ok())
                .map(ResponseFlag::AiAtThreshold)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown flag {s:?}"))),
        }
    }
}

impl Serialize for ResponseFlag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResponseFlag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A signature's embedding, ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureEmbedding {
    pub signature_id: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub response_id: String,
    pub question_id: String,
    pub study_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_signature: Vec<SimilarityRecord>,
    /// Maximum similarity over all signatures; absent for empty responses.
    pub final_score: Option<f64>,
    pub best_signature_id: Option<String>,
    pub flags: Vec<ResponseFlag>,
}

impl ScoredResponse {
    /// A blank response: never embedded, carries only the EMPTY flag.
    pub fn empty(response_id: &str, question_id: &str, study_id: &str) -> Self {
        ScoredResponse {
            response_id: response_id.into(),
            question_id: question_id.into(),
            study_id: study_id.into(),
            per_signature: Vec::new(),
            final_score: None,
            best_signature_id: None,
            flags: vec![ResponseFlag::Empty],
        }
    }

    pub fn is_empty_response(&self) -> bool {
        self.flags.contains(&ResponseFlag::Empty)
    }

    pub fn is_irrelevant(&self) -> bool {
        self.flags.contains(&ResponseFlag::Irrelevant)
    }

    /// Whether the response meets `th` (inclusive).
    pub fn meets(&self, th: f64) -> bool {
        self.final_score.is_some_and(|s| s >= th)
    }

    fn add_flag(&mut self, flag: ResponseFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }
}

/// Scores one response against every signature of its question.
pub fn score_response(
    response_id: &str,
    question_id: &str,
    study_id: &str,
    response_embedding: &EmbeddingVector,
    signatures: &[SignatureEmbedding],
) -> Result<ScoredResponse> {
    if signatures.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no signatures to score response {response_id:?} against"
        )));
    }
    let mut per_signature = Vec::with_capacity(signatures.len());
    let mut best: Option<(f64, &str)> = None;
    for sig in signatures {
        let score = cosine_similarity(response_embedding, &sig.embedding)?;
        per_signature.push(SimilarityRecord {
            response_id: response_id.to_string(),
            signature_id: sig.signature_id.clone(),
            score,
        });
        best = match best {
            Some((b, id))
                if b > score || (b == score && id <= sig.signature_id.as_str()) =>
            {
                Some((b, id))
            }
            _ => Some((score, sig.signature_id.as_str())),
        };
    }
    let (final_score, best_id) = best.expect("non-empty signatures");
    Ok(ScoredResponse {
        response_id: response_id.to_string(),
        question_id: question_id.to_string(),
        study_id: study_id.to_string(),
        per_signature,
        final_score: Some(final_score),
        best_signature_id: Some(best_id.to_string()),
        flags: Vec::new(),
    })
}

pub fn check_threshold(th: f64) -> Result<()> {
    if th.is_finite() && th > -1.0 && th <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {th} outside (-1, 1]")))
    }
}

/// AI when `final_score >= th`, HUMAN otherwise (including empty responses).
pub fn classify_by_threshold(scored: &ScoredResponse, th: f64) -> Verdict {
    let detail = match scored.final_score {
        Some(_) => format!("th={}", format_threshold(th)),
        None => format!("th={}; empty response", format_threshold(th)),
    };
    Verdict {
        flag: if scored.meets(th) {
            VerdictFlag::Ai
        } else {
            VerdictFlag::Human
        },
        source: VerdictSource::Signature,
        detail,
    }
}

/// Marks the response IRRELEVANT when `final_score <= low_th`.
pub fn flag_irrelevant(scored: &mut ScoredResponse, low_th: f64) -> bool {
    let irrelevant = scored.final_score.is_some_and(|s| s <= low_th);
    if irrelevant {
        scored.add_flag(ResponseFlag::Irrelevant);
    }
    irrelevant
}

/// Sets AI_AT_THRESHOLD for every threshold met, and the irrelevance flag.
pub fn apply_flags(scored: &mut ScoredResponse, thresholds: &[f64], low_th: f64) {
    for &th in thresholds {
        if scored.meets(th) {
            scored.add_flag(ResponseFlag::AiAtThreshold(th));
        }
    }
    flag_irrelevant(scored, low_th);
}
