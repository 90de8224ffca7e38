//! Signature scoring over a whole dataset: embed every signature and every
//! non-empty open-ended response, take the max cosine per response, flag.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SurveyDataset;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::signature::{SignatureSet, StrategyKind};
use crate::similarity::{apply_flags, check_threshold, score_response, ScoredResponse, SignatureEmbedding};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOptions {
    pub thresholds: Vec<f64>,
    pub low_threshold: f64,
    /// Keep every per-signature similarity, not just the maximum.
    pub keep_per_signature: bool,
}

/// Scored responses of one strategy, as written to `scores/<strategy>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRun {
    pub strategy: StrategyKind,
    pub embedding_provider: String,
    pub thresholds: Vec<f64>,
    pub low_threshold: f64,
    pub responses: Vec<ScoredResponse>,
}

/// Scores every open-ended response against its question's signatures.
///
/// Fails with `MissingSignatures` (before any embedding call) when an
/// open-ended question has no signature set or an empty one.
pub fn score_dataset(
    gateway: &Gateway,
    embedder_id: &str,
    dataset: &SurveyDataset,
    strategy: StrategyKind,
    sets: &[SignatureSet],
    options: &ScoreOptions,
) -> Result<ScoreRun> {
    for &t in &options.thresholds {
        check_threshold(t)?;
    }
    let by_question: HashMap<&str, &SignatureSet> = sets
        .iter()
        .filter(|s| s.strategy == strategy)
        .map(|s| (s.question_id.as_str(), s))
        .collect();
    let missing: Vec<String> = dataset
        .open_ended_questions()
        .filter(|q| by_question.get(q.question_id.as_str()).is_none_or(|s| s.is_empty()))
        .map(|q| q.question_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSignatures(missing));
    }

    let questions: Vec<&str> = dataset.open_ended_questions().map(|q| q.question_id.as_str()).collect();
    let embedded: BTreeMap<&str, Vec<SignatureEmbedding>> = questions
        .par_iter()
        .map(|qid| {
            let set = by_question[qid];
            let sigs = set
                .signatures
                .par_iter()
                .map(|s| {
                    Ok(SignatureEmbedding {
                        signature_id: s.signature_id.clone(),
                        embedding: gateway.embed_text(&s.text, embedder_id)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((*qid, sigs))
        })
        .collect::<Result<_>>()?;

    let study_of = dataset.question_study_index();
    let responses: Vec<_> = dataset
        .responses
        .iter()
        .filter(|r| embedded.contains_key(r.question_id.as_str()))
        .collect();
    let scored = responses
        .par_iter()
        .map(|r| {
            let study = study_of[r.question_id.as_str()];
            if r.is_blank() {
                return Ok(ScoredResponse::empty(&r.response_id, &r.question_id, study));
            }
            let emb = gateway.embed_text(&r.text, embedder_id)?;
            let mut s = score_response(
                &r.response_id,
                &r.question_id,
                study,
                &emb,
                &embedded[r.question_id.as_str()],
            )?;
            apply_flags(&mut s, &options.thresholds, options.low_threshold);
            if !options.keep_per_signature {
                s.per_signature.clear();
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScoreRun {
        strategy,
        embedding_provider: embedder_id.to_string(),
        thresholds: options.thresholds.clone(),
        low_threshold: options.low_threshold,
        responses: scored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{HashEmbedder, MockChatProvider};
    use crate::gateway::EmbeddingProvider;
    use crate::model::{QuestionKind, SurveyQuestion, SurveyResponse, SurveyStudy};
    use crate::signature::{generate_signatures, DEFAULT_MODELS, DEFAULT_TEMPERATURES};
    use std::sync::Arc;

    fn dataset() -> SurveyDataset {
        SurveyDataset::new(
            vec![SurveyStudy::new("s1", "one", "2021-05", "travel", "mturk").unwrap()],
            vec![
                SurveyQuestion {
                    question_id: "q1".into(),
                    study_id: "s1".into(),
                    text: "Why did you choose this hotel?".into(),
                    kind: QuestionKind::OpenEnded,
                },
                SurveyQuestion {
                    question_id: "q2".into(),
                    study_id: "s1".into(),
                    text: "Age".into(),
                    kind: QuestionKind::Other,
                },
            ],
            vec![
                SurveyResponse::new("r1", "q1", "It was close to the beach"),
                SurveyResponse::new("r2", "q1", "  "),
                SurveyResponse::new("r3", "q2", "42"),
            ],
        )
        .unwrap()
    }

    fn gateway() -> (Gateway, String) {
        let emb = Arc::new(HashEmbedder::new(7, 32));
        let id = emb.provider_id().to_string();
        let gw = Gateway::builder()
            .chat(Arc::new(MockChatProvider::new(7)))
            .embedder(emb)
            .build();
        (gw, id)
    }

    fn options() -> ScoreOptions {
        ScoreOptions {
            thresholds: vec![0.7, 0.9],
            low_threshold: 0.0,
            keep_per_signature: true,
        }
    }

    #[test]
    fn missing_signatures_named_before_any_call() {
        let (gw, id) = gateway();
        let err = score_dataset(&gw, &id, &dataset(), StrategyKind::Basic, &[], &options()).unwrap_err();
        assert!(matches!(err, Error::MissingSignatures(ref q) if q == &vec!["q1".to_string()]));
        assert_eq!(gw.stats().provider_calls(), 0);
    }

    #[test]
    fn scores_open_ended_only() {
        let (gw, id) = gateway();
        let ds = dataset();
        let models: Vec<String> = DEFAULT_MODELS.iter().map(|s| s.to_string()).collect();
        let set = generate_signatures(&gw, &ds.questions[0], StrategyKind::Basic, &models, &DEFAULT_TEMPERATURES, &[])
            .unwrap();
        let run = score_dataset(&gw, &id, &ds, StrategyKind::Basic, std::slice::from_ref(&set), &options()).unwrap();
        assert_eq!(run.responses.len(), 2);
        let r1 = &run.responses[0];
        assert_eq!(r1.per_signature.len(), set.len());
        let max = r1.per_signature.iter().map(|p| p.score).fold(f64::MIN, f64::max);
        assert_eq!(r1.final_score, Some(max));
        assert!(run.responses[1].is_empty_response());
    }
}
