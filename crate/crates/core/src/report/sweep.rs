use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::percent::{Percentage, PercentageRecord};
use crate::error::{Error, Result};
use crate::model::Cohort;
use crate::signature::StrategyKind;
use crate::similarity::{check_threshold, ScoredResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AverageConvention {
    /// Mean of per-study percentages; every study weighs the same.
    UnweightedMean,
    /// Total flagged over total responses across the cohort's studies.
    PooledWeighted,
}

impl AverageConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            AverageConvention::UnweightedMean => "unweighted mean of per-study percentages",
            AverageConvention::PooledWeighted => "pooled (count-weighted) rate",
        }
    }
}

/// One study's outcome as fed to cohort averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study_id: String,
    pub cohort: Cohort,
    pub percentage: Percentage,
    /// `(flagged, total)` when the percentage came from counts.
    pub counts: Option<(u64, u64)>,
}

impl StudyResult {
    pub fn from_counts(study_id: impl Into<String>, cohort: Cohort, flagged: u64, total: u64) -> Result<Self> {
        Ok(StudyResult {
            study_id: study_id.into(),
            cohort,
            percentage: Percentage::from_counts(flagged, total)?,
            counts: Some((flagged, total)),
        })
    }

    pub fn from_percentage(study_id: impl Into<String>, cohort: Cohort, percentage: Percentage) -> Self {
        StudyResult {
            study_id: study_id.into(),
            cohort,
            percentage,
            counts: None,
        }
    }
}

pub fn percentage(flagged: u64, total: u64) -> Result<Percentage> {
    Percentage::from_counts(flagged, total)
}

pub fn average_unweighted(per_study: &[Percentage]) -> Result<Percentage> {
    Percentage::mean(per_study)
}

pub fn average_pooled(per_study: &[(u64, u64)]) -> Result<Percentage> {
    Percentage::pooled(per_study)
}

fn average(results: &[&StudyResult], convention: AverageConvention) -> Result<Percentage> {
    match convention {
        AverageConvention::UnweightedMean => {
            let values: Vec<Percentage> = results.iter().map(|r| r.percentage).collect();
            average_unweighted(&values)
        }
        AverageConvention::PooledWeighted => {
            let counts = results
                .iter()
                .map(|r| {
                    r.counts.ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "study {:?} has no counts; pooled averaging needs them",
                            r.study_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            average_pooled(&counts)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub pre_average: PercentageRecord,
    pub post_average: PercentageRecord,
    pub convention: AverageConvention,
    pub pre_studies: Vec<String>,
    pub post_studies: Vec<String>,
}

pub fn cohort_compare(per_study: &[StudyResult], convention: AverageConvention) -> Result<CohortComparison> {
    let pick = |c: Cohort| per_study.iter().filter(|r| r.cohort == c).collect::<Vec<_>>();
    let pre = pick(Cohort::Pre2022);
    let post = pick(Cohort::Post2022);
    for (c, list) in [(Cohort::Pre2022, &pre), (Cohort::Post2022, &post)] {
        if list.is_empty() {
            return Err(Error::InvalidArgument(format!("cohort {c} has no studies")));
        }
    }
    Ok(CohortComparison {
        pre_average: average(&pre, convention)?.into(),
        post_average: average(&post, convention)?.into(),
        convention,
        pre_studies: pre.iter().map(|r| r.study_id.clone()).collect(),
        post_studies: post.iter().map(|r| r.study_id.clone()).collect(),
    })
}

/// Scored responses of one signature strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub strategy: StrategyKind,
    pub responses: Vec<ScoredResponse>,
}

/// Study column metadata, in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyColumn {
    pub study_id: String,
    pub label: String,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub study_id: String,
    pub cohort: Cohort,
    pub flagged: u64,
    pub total: u64,
    pub percentage: PercentageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub strategy: StrategyKind,
    pub cells: Vec<SweepCell>,
    pub pre_average: Option<PercentageRecord>,
    pub post_average: Option<PercentageRecord>,
}

impl SweepRow {
    pub fn cell(&self, study_id: &str) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.study_id == study_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub thresholds: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub studies: Vec<StudyColumn>,
    pub convention: AverageConvention,
    pub exclude_empty: bool,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub convention: AverageConvention,
    /// Drop empty responses from denominators instead of counting them as not flagged.
    pub exclude_empty: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            convention: AverageConvention::PooledWeighted,
            exclude_empty: false,
        }
    }
}

/// One row per (threshold, strategy) with per-study rates and cohort averages.
pub fn threshold_sweep(
    scored: &[StrategyScores],
    studies: &[StudyColumn],
    thresholds: &[f64],
    options: SweepOptions,
) -> Result<SweepTable> {
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no strategies to sweep".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("no thresholds to sweep".into()));
    }
    for t in thresholds {
        check_threshold(*t)?;
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("thresholds must be strictly ascending".into()));
    }
    if scored.iter().all(|s| s.responses.is_empty()) {
        return Err(Error::InvalidArgument("empty scored set".into()));
    }
    let known: BTreeMap<&str, &StudyColumn> = studies.iter().map(|s| (s.study_id.as_str(), s)).collect();
    for s in scored {
        if let Some(r) = s.responses.iter().find(|r| !known.contains_key(r.study_id.as_str())) {
            return Err(Error::DanglingReference {
                kind: "study",
                id: r.study_id.clone(),
            });
        }
    }

    let mut rows = Vec::new();
    for &th in thresholds {
        for s in scored {
            let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
            for r in &s.responses {
                if options.exclude_empty && r.is_empty_response() {
                    continue;
                }
                let e = counts.entry(r.study_id.as_str()).or_default();
                e.1 += 1;
                if r.meets(th) {
                    e.0 += 1;
                }
            }
            let mut cells = Vec::new();
            let mut results = Vec::new();
            for col in studies {
                let Some(&(flagged, total)) = counts.get(col.study_id.as_str()) else {
                    continue;
                };
                let result = StudyResult::from_counts(&col.study_id, col.cohort, flagged, total)?;
                cells.push(SweepCell {
                    study_id: col.study_id.clone(),
                    cohort: col.cohort,
                    flagged,
                    total,
                    percentage: result.percentage.into(),
                });
                results.push(result);
            }
            let cohort_avg = |c: Cohort| -> Result<Option<PercentageRecord>> {
                let members: Vec<&StudyResult> = results.iter().filter(|r| r.cohort == c).collect();
                if members.is_empty() {
                    return Ok(None);
                }
                Ok(Some(average(&members, options.convention)?.into()))
            };
            rows.push(SweepRow {
                threshold: th,
                strategy: s.strategy,
                pre_average: cohort_avg(Cohort::Pre2022)?,
                post_average: cohort_avg(Cohort::Post2022)?,
                cells,
            });
        }
    }
    Ok(SweepTable {
        thresholds: thresholds.to_vec(),
        strategies: scored.iter().map(|s| s.strategy).collect(),
        studies: studies
            .iter()
            .filter(|c| scored.iter().any(|s| s.responses.iter().any(|r| r.study_id == c.study_id)))
            .cloned()
            .collect(),
        convention: options.convention,
        exclude_empty: options.exclude_empty,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::DEFAULT_THRESHOLDS;
    use proptest::prelude::*;

    fn p(s: &str) -> Percentage {
        Percentage::parse_percent(s).unwrap()
    }

    fn scored(study: &str, i: usize, score: Option<f64>) -> ScoredResponse {
        match score {
            Some(s) => ScoredResponse {
                response_id: format!("{study}-r{i}"),
                question_id: format!("{study}-q"),
                study_id: study.into(),
                per_signature: vec![],
                final_score: Some(s),
                best_signature_id: Some("sig".into()),
                flags: vec![],
            },
            None => ScoredResponse::empty(&format!("{study}-r{i}"), &format!("{study}-q"), study),
        }
    }

    fn cols() -> Vec<StudyColumn> {
        vec![
            StudyColumn { study_id: "s1".into(), label: "one".into(), cohort: Cohort::Pre2022 },
            StudyColumn { study_id: "s2".into(), label: "two".into(), cohort: Cohort::Post2022 },
        ]
    }

    #[test]
    fn table2_unweighted_cohorts() {
        let pre = [("1", "13.91"), ("2", "1.18"), ("3", "7.03"), ("4", "2.50")];
        let post = [("5", "48.71"), ("6", "18.18"), ("7", "24.76")];
        let mut results: Vec<StudyResult> = pre
            .iter()
            .map(|(id, v)| StudyResult::from_percentage(*id, Cohort::Pre2022, p(v)))
            .collect();
        results.extend(post.iter().map(|(id, v)| StudyResult::from_percentage(*id, Cohort::Post2022, p(v))));
        let c = cohort_compare(&results, AverageConvention::UnweightedMean).unwrap();
        assert_eq!(c.pre_average.rendered, "6.16");
        assert_eq!(c.post_average.rendered, "30.55");
        // pooled needs counts
        assert!(cohort_compare(&results, AverageConvention::PooledWeighted).is_err());
    }

    #[test]
    fn cohort_compare_edges() {
        let sym = vec![
            StudyResult::from_counts("a", Cohort::Pre2022, 3, 10).unwrap(),
            StudyResult::from_counts("b", Cohort::Post2022, 3, 10).unwrap(),
        ];
        for conv in [AverageConvention::UnweightedMean, AverageConvention::PooledWeighted] {
            let c = cohort_compare(&sym, conv).unwrap();
            assert_eq!(c.pre_average.rendered, c.post_average.rendered);
            assert_eq!(c.pre_average.rendered, "30.00");
        }
        let only_pre = vec![StudyResult::from_counts("a", Cohort::Pre2022, 1, 2).unwrap()];
        assert!(cohort_compare(&only_pre, AverageConvention::UnweightedMean).is_err());
    }

    #[test]
    fn step_function() {
        let responses = (0..4).map(|i| scored("s1", i, Some(0.72))).collect();
        let t = threshold_sweep(
            &[StrategyScores { strategy: StrategyKind::Basic, responses }],
            &cols(),
            &DEFAULT_THRESHOLDS,
            SweepOptions::default(),
        )
        .unwrap();
        let rendered: Vec<&str> = t.rows.iter().map(|r| r.cells[0].percentage.rendered.as_str()).collect();
        assert_eq!(rendered, ["100.00", "0.00", "0.00", "0.00", "0.00"]);
        assert_eq!(t.rows[0].post_average, None);
        assert_eq!(t.studies.len(), 1);
    }

    #[test]
    fn staircase_counts() {
        let responses = [0.71, 0.76, 0.81, 0.86, 0.91]
            .iter()
            .enumerate()
            .map(|(i, &s)| scored("s1", i, Some(s)))
            .collect();
        let t = threshold_sweep(
            &[StrategyScores { strategy: StrategyKind::Basic, responses }],
            &cols(),
            &DEFAULT_THRESHOLDS,
            SweepOptions::default(),
        )
        .unwrap();
        let flagged: Vec<u64> = t.rows.iter().map(|r| r.cells[0].flagged).collect();
        assert_eq!(flagged, [5, 4, 3, 2, 1]);
    }

    #[test]
    fn sweep_preconditions() {
        let s = vec![StrategyScores { strategy: StrategyKind::Basic, responses: vec![scored("s1", 0, Some(0.5))] }];
        assert!(threshold_sweep(&[], &cols(), &[0.8], SweepOptions::default()).is_err());
        assert!(threshold_sweep(&s, &cols(), &[], SweepOptions::default()).is_err());
        assert!(threshold_sweep(&s, &cols(), &[0.9, 0.8], SweepOptions::default()).is_err());
        let empty = vec![StrategyScores { strategy: StrategyKind::Basic, responses: vec![] }];
        assert!(threshold_sweep(&empty, &cols(), &[0.8], SweepOptions::default()).is_err());
        let stray = vec![StrategyScores { strategy: StrategyKind::Basic, responses: vec![scored("s9", 0, Some(0.5))] }];
        assert!(threshold_sweep(&stray, &cols(), &[0.8], SweepOptions::default()).is_err());
        let one = threshold_sweep(&s, &cols(), &[0.8], SweepOptions::default()).unwrap();
        assert_eq!(one.rows.len(), 1);
    }

    #[test]
    fn empty_responses_and_pooling() {
        let responses = vec![
            scored("s1", 0, Some(0.95)),
            scored("s1", 1, None),
            scored("s2", 0, Some(0.95)),
            scored("s2", 1, Some(0.1)),
            scored("s2", 2, Some(0.1)),
        ];
        let run = |exclude_empty| {
            threshold_sweep(
                &[StrategyScores { strategy: StrategyKind::Basic, responses: responses.clone() }],
                &cols(),
                &[0.9],
                SweepOptions { exclude_empty, ..Default::default() },
            )
            .unwrap()
        };
        let counted = run(false);
        assert_eq!(counted.rows[0].cells[0].total, 2);
        assert_eq!(counted.rows[0].pre_average.as_ref().unwrap().rendered, "50.00");
        let excluded = run(true);
        assert_eq!(excluded.rows[0].cells[0].total, 1);
        assert_eq!(excluded.rows[0].post_average.as_ref().unwrap().rendered, "33.33");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sweep_is_monotone(scores in prop::collection::vec((0usize..2, prop::option::weighted(0.9, -1.0f64..=1.0)), 1..60)) {
            let responses: Vec<ScoredResponse> = scores.iter().enumerate()
                .map(|(i, (s, v))| scored(if *s == 0 { "s1" } else { "s2" }, i, *v))
                .collect();
            let t = threshold_sweep(
                &[StrategyScores { strategy: StrategyKind::Basic, responses }],
                &cols(),
                &[-0.5, 0.0, 0.5, 0.7, 0.75, 0.8, 0.85, 0.9, 1.0],
                SweepOptions::default(),
            ).unwrap();
            for col in &t.studies {
                let series: Vec<Percentage> = t.rows.iter()
                    .filter_map(|r| r.cell(&col.study_id))
                    .map(|c| c.percentage.clone().try_into().unwrap())
                    .collect();
                prop_assert!(series.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}
