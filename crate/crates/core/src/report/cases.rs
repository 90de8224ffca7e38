use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::ScoredResponse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub response_id: String,
    pub study_id: String,
    pub question_id: String,
    pub final_score: f64,
    pub response_text: String,
    pub best_signature_id: String,
    pub signature_text: String,
}

/// Highest-scoring responses side by side with their closest signature, plus
/// every response at or below the irrelevance cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseExtract {
    pub k_high: usize,
    pub low_threshold: f64,
    pub high_cases: Vec<CaseEntry>,
    pub low_cases: Vec<CaseEntry>,
}

pub fn extract_cases(
    scored: &[ScoredResponse],
    response_texts: &HashMap<&str, &str>,
    signature_texts: &HashMap<&str, &str>,
    k_high: usize,
    low_th: f64,
) -> Result<CaseExtract> {
    let entry = |r: &ScoredResponse, score: f64| -> Result<CaseEntry> {
        let best = r.best_signature_id.clone().unwrap_or_default();
        Ok(CaseEntry {
            response_id: r.response_id.clone(),
            study_id: r.study_id.clone(),
            question_id: r.question_id.clone(),
            final_score: score,
            response_text: response_texts
                .get(r.response_id.as_str())
                .ok_or_else(|| Error::DanglingReference {
                    kind: "response",
                    id: r.response_id.clone(),
                })?
                .to_string(),
            signature_text: signature_texts
                .get(best.as_str())
                .ok_or_else(|| Error::DanglingReference {
                    kind: "signature",
                    id: best.clone(),
                })?
                .to_string(),
            best_signature_id: best,
        })
    };

    let mut with_scores: Vec<(&ScoredResponse, f64)> = scored
        .iter()
        .filter_map(|r| r.final_score.map(|s| (r, s)))
        .collect();
    with_scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.response_id.cmp(&b.0.response_id)));

    let high_cases = with_scores
        .iter()
        .take(k_high)
        .map(|&(r, s)| entry(r, s))
        .collect::<Result<Vec<_>>>()?;
    let low_cases = with_scores
        .iter()
        .rev()
        .filter(|&&(_, s)| s <= low_th)
        .map(|&(r, s)| entry(r, s))
        .collect::<Result<Vec<_>>>()?;

    Ok(CaseExtract {
        k_high,
        low_threshold: low_th,
        high_cases,
        low_cases,
    })
}
