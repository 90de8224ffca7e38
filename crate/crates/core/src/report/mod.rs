//! Aggregation and rendering: per-study percentages, cohort averages,
//! threshold sweeps, histograms, case extracts and the final report files.

pub mod cases;
pub mod histogram;
pub mod percent;
pub mod render;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cases::{extract_cases, CaseEntry, CaseExtract};
pub use histogram::{build_histogram, CohortCounts, HistogramSpec, DEFAULT_BIN_WIDTH};
pub use percent::{Percentage, PercentageRecord};
pub use sweep::{
    average_pooled, average_unweighted, cohort_compare, percentage, threshold_sweep, AverageConvention,
    CohortComparison, StrategyScores, StudyColumn, StudyResult, SweepCell, SweepOptions, SweepRow, SweepTable,
};

use crate::dataset::{StudySummary, SurveyDataset};
use crate::detector::StudyVerdicts;
use crate::error::{Error, Result};
use crate::model::Cohort;
use crate::signature::StrategyKind;
use render::{canonical_json, canonical_json_compact, csv_text, format_threshold, markdown_table, write_atomic};

/// Study columns in dataset order.
pub fn study_columns(ds: &SurveyDataset) -> Vec<StudyColumn> {
    ds.studies
        .iter()
        .map(|s| StudyColumn {
            study_id: s.study_id.clone(),
            label: s.label.clone(),
            cohort: s.cohort,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorStudyRow {
    pub study_id: String,
    pub cohort: Cohort,
    pub ai_count: u64,
    pub classified: u64,
    pub undetermined: u64,
    pub percentage: Option<PercentageRecord>,
}

/// One detector model's per-study rates and cohort comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSection {
    pub model_id: String,
    pub template_version: String,
    pub temperature: f64,
    pub studies: Vec<DetectorStudyRow>,
    pub comparison: Option<CohortComparison>,
}

pub fn detector_section(
    verdicts: &[StudyVerdicts],
    columns: &[StudyColumn],
    convention: AverageConvention,
) -> Result<DetectorSection> {
    let first = verdicts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no detector verdicts".into()))?;
    let mut studies = Vec::new();
    let mut results = Vec::new();
    for col in columns {
        let Some(v) = verdicts.iter().find(|v| v.study_id == col.study_id) else {
            continue;
        };
        if v.model_id != first.model_id {
            return Err(Error::InvalidArgument(format!(
                "mixed detector models {:?} and {:?}",
                first.model_id, v.model_id
            )));
        }
        if v.classified > 0 {
            results.push(StudyResult::from_counts(&v.study_id, col.cohort, v.ai_count, v.classified)?);
        }
        studies.push(DetectorStudyRow {
            study_id: v.study_id.clone(),
            cohort: col.cohort,
            ai_count: v.ai_count,
            classified: v.classified,
            undetermined: v.undetermined,
            percentage: v.percentage.clone(),
        });
    }
    if let Some(v) = verdicts.iter().find(|v| !columns.iter().any(|c| c.study_id == v.study_id)) {
        return Err(Error::DanglingReference {
            kind: "study",
            id: v.study_id.clone(),
        });
    }
    // a comparison needs both cohorts
    let comparison = cohort_compare(&results, convention).ok();
    Ok(DetectorSection {
        model_id: first.model_id.clone(),
        template_version: first.template_version.clone(),
        temperature: first.temperature,
        studies,
        comparison,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyHistogram {
    pub strategy: StrategyKind,
    pub histogram: HistogramSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCases {
    pub strategy: StrategyKind,
    pub cases: CaseExtract,
}

/// Everything a run reports, plus the provenance needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub provenance: BTreeMap<String, serde_json::Value>,
    pub studies: Vec<StudySummary>,
    pub detector: Vec<DetectorSection>,
    pub sweep: Option<SweepTable>,
    pub histograms: Vec<StrategyHistogram>,
    pub cases: Vec<StrategyCases>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Json,
    Csv,
    MarkdownTable,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::MarkdownTable];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::MarkdownTable => "md",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::MarkdownTable => "markdown",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" | "markdown_table" => Ok(ReportFormat::MarkdownTable),
            other => Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
        }
    }
}

pub fn render_report(report: &DetectionReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => canonical_json(report),
        ReportFormat::Csv => report_csv(report),
        ReportFormat::MarkdownTable => Ok(report_markdown(report)),
    }
}

pub fn write_report(report: &DetectionReport, path: &Path, format: ReportFormat) -> Result<()> {
    write_atomic(path, render_report(report, format)?.as_bytes())
}

fn rendered(p: &Option<PercentageRecord>) -> String {
    p.as_ref().map(|p| p.rendered.clone()).unwrap_or_else(|| "-".into())
}

const CSV_HEADER: [&str; 9] = [
    "section",
    "threshold",
    "strategy",
    "model_id",
    "study_id",
    "cohort",
    "flagged",
    "total",
    "percentage",
];

/// Long-form CSV: one line per study cell plus one per cohort average.
fn report_csv(report: &DetectionReport) -> Result<String> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let avg_row = |section: &str, th: &str, strat: &str, model: &str, cohort: Cohort, p: &Option<PercentageRecord>| {
        vec![
            section.to_string(),
            th.to_string(),
            strat.to_string(),
            model.to_string(),
            "AVERAGE".to_string(),
            cohort.label().to_string(),
            String::new(),
            String::new(),
            rendered(p),
        ]
    };
    for d in &report.detector {
        for s in &d.studies {
            rows.push(vec![
                "llm_detector".into(),
                String::new(),
                String::new(),
                d.model_id.clone(),
                s.study_id.clone(),
                s.cohort.label().into(),
                s.ai_count.to_string(),
                s.classified.to_string(),
                rendered(&s.percentage),
            ]);
        }
        if let Some(c) = &d.comparison {
            rows.push(avg_row("llm_detector", "", "", &d.model_id, Cohort::Pre2022, &Some(c.pre_average.clone())));
            rows.push(avg_row("llm_detector", "", "", &d.model_id, Cohort::Post2022, &Some(c.post_average.clone())));
        }
    }
    if let Some(sweep) = &report.sweep {
        for r in &sweep.rows {
            let th = format_threshold(r.threshold);
            for c in &r.cells {
                rows.push(vec![
                    "signature".into(),
                    th.clone(),
                    r.strategy.as_str().into(),
                    String::new(),
                    c.study_id.clone(),
                    c.cohort.label().into(),
                    c.flagged.to_string(),
                    c.total.to_string(),
                    c.percentage.rendered.clone(),
                ]);
            }
            rows.push(avg_row("signature", &th, r.strategy.as_str(), "", Cohort::Pre2022, &r.pre_average));
            rows.push(avg_row("signature", &th, r.strategy.as_str(), "", Cohort::Post2022, &r.post_average));
        }
    }
    csv_text(&CSV_HEADER, &rows)
}

fn label_for<'a>(report: &'a DetectionReport, study_id: &'a str) -> &'a str {
    report
        .studies
        .iter()
        .find(|s| s.study_id == study_id)
        .map(|s| s.label.as_str())
        .unwrap_or(study_id)
}

/// Header cells: pre-2022 studies, pre average, post-2022 studies, post average.
fn cohort_header(report: &DetectionReport, lead: &[&str], studies: &[(String, Cohort, Option<u64>)]) -> Vec<String> {
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    for cohort in [Cohort::Pre2022, Cohort::Post2022] {
        for (id, c, n) in studies {
            if *c == cohort {
                h.push(match n {
                    Some(n) => format!("{} (n={n})", label_for(report, id)),
                    None => label_for(report, id).to_string(),
                });
            }
        }
        h.push(format!("{} avg", cohort.label()));
    }
    h
}

fn report_markdown(report: &DetectionReport) -> String {
    let mut out = String::from("# AI-generated response report\n\n");

    if !report.provenance.is_empty() {
        out.push_str("## Provenance\n\n");
        for (k, v) in &report.provenance {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => canonical_json_compact(other).unwrap_or_default(),
            };
            out.push_str(&format!("- {k}: {v}\n"));
        }
        out.push('\n');
    }

    if !report.studies.is_empty() {
        out.push_str("## Studies\n\n");
        let header: Vec<String> = ["Study", "Label", "Collected", "Cohort", "Responses", "Empty", "Mean words", "SD words"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = report
            .studies
            .iter()
            .map(|s| {
                let (mean, sd) = match &s.length {
                    Some(l) => (format!("{:.2}", l.mean), format!("{:.2}", l.std_dev)),
                    None => ("-".into(), "-".into()),
                };
                vec![
                    s.study_id.clone(),
                    s.label.clone(),
                    s.month_year.clone(),
                    s.cohort.label().into(),
                    s.responses.to_string(),
                    s.empty_responses.to_string(),
                    mean,
                    sd,
                ]
            })
            .collect();
        out.push_str(&markdown_table(&header, &rows));
        out.push('\n');
    }

    if let Some(first) = report.detector.first() {
        out.push_str("## LLM detector: share of responses judged AI-generated (%)\n\n");
        let studies: Vec<(String, Cohort, Option<u64>)> = first
            .studies
            .iter()
            .map(|s| (s.study_id.clone(), s.cohort, Some(s.classified)))
            .collect();
        let header = cohort_header(report, &["LLM model"], &studies);
        let mut rows = Vec::new();
        for d in &report.detector {
            let mut row = vec![d.model_id.clone()];
            for cohort in [Cohort::Pre2022, Cohort::Post2022] {
                for (id, c, _) in &studies {
                    if *c == cohort {
                        row.push(rendered(
                            &d.studies.iter().find(|s| &s.study_id == id).and_then(|s| s.percentage.clone()),
                        ));
                    }
                }
                row.push(match &d.comparison {
                    Some(c) if cohort == Cohort::Pre2022 => c.pre_average.rendered.clone(),
                    Some(c) => c.post_average.rendered.clone(),
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        out.push_str(&markdown_table(&header, &rows));
        if let Some(c) = &first.comparison {
            out.push_str(&format!("\nCohort averages: {}.\n", c.convention.as_str()));
        }
        out.push('\n');
    }

    if let Some(sweep) = &report.sweep {
        out.push_str("## Signature similarity: share of responses at or above threshold (%)\n\n");
        let studies: Vec<(String, Cohort, Option<u64>)> = sweep
            .studies
            .iter()
            .map(|s| (s.study_id.clone(), s.cohort, None))
            .collect();
        let header = cohort_header(report, &["Threshold", "Strategy"], &studies);
        let rows: Vec<Vec<String>> = sweep
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![format_threshold(r.threshold), r.strategy.as_str().to_string()];
                for cohort in [Cohort::Pre2022, Cohort::Post2022] {
                    for (id, c, _) in &studies {
                        if *c == cohort {
                            row.push(r.cell(id).map(|c| c.percentage.rendered.clone()).unwrap_or_else(|| "-".into()));
                        }
                    }
                    row.push(rendered(if cohort == Cohort::Pre2022 {
                        &r.pre_average
                    } else {
                        &r.post_average
                    }));
                }
                row
            })
            .collect();
        out.push_str(&markdown_table(&header, &rows));
        out.push_str(&format!(
            "\nCohort averages: {}. Empty responses {}.\n\n",
            sweep.convention.as_str(),
            if sweep.exclude_empty {
                "excluded from denominators"
            } else {
                "counted as not flagged"
            }
        ));
    }

    for h in &report.histograms {
        out.push_str(&format!("## Final-score distribution ({})\n\n", h.strategy.as_str()));
        let header: Vec<String> = ["Bin", "pre-2022", "post-2022"].iter().map(|s| s.to_string()).collect();
        let spec = &h.histogram;
        let rows: Vec<Vec<String>> = (0..spec.bins())
            .filter(|&i| spec.cohorts.iter().any(|c| c.counts[i] > 0))
            .map(|i| {
                let close = if i + 1 == spec.bins() { "]" } else { ")" };
                let mut row = vec![format!(
                    "[{}, {}{close}",
                    format_threshold(spec.bin_edges[i]),
                    format_threshold(spec.bin_edges[i + 1])
                )];
                for cohort in [Cohort::Pre2022, Cohort::Post2022] {
                    row.push(spec.counts_for(cohort).map(|c| c.counts[i]).unwrap_or(0).to_string());
                }
                row
            })
            .collect();
        out.push_str(&markdown_table(&header, &rows));
        out.push('\n');
    }

    for c in &report.cases {
        let strat = c.strategy.as_str();
        let header: Vec<String> = ["Response", "Study", "Score", "Response text", "Closest signature", "Signature text"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let to_rows = |entries: &[CaseEntry]| -> Vec<Vec<String>> {
            entries
                .iter()
                .map(|e| {
                    vec![
                        e.response_id.clone(),
                        e.study_id.clone(),
                        format!("{:.4}", e.final_score),
                        e.response_text.clone(),
                        e.best_signature_id.clone(),
                        e.signature_text.clone(),
                    ]
                })
                .collect()
        };
        out.push_str(&format!("## Top {} most similar responses ({strat})\n\n", c.cases.k_high));
        out.push_str(&markdown_table(&header, &to_rows(&c.cases.high_cases)));
        out.push_str(&format!(
            "\n## Responses at or below {} ({strat})\n\n",
            format_threshold(c.cases.low_threshold)
        ));
        out.push_str(&markdown_table(&header, &to_rows(&c.cases.low_cases)));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ResponseVerdict;

    fn verdicts(model: &str, study: &str, ai: u64, n: u64) -> StudyVerdicts {
        StudyVerdicts {
            study_id: study.into(),
            model_id: model.into(),
            template_version: "detector-v1".into(),
            temperature: 0.0,
            verdicts: Vec::<ResponseVerdict>::new(),
            ai_count: ai,
            classified: n,
            undetermined: 0,
            percentage: Some(Percentage::from_counts(ai, n).unwrap().into()),
        }
    }

    fn columns() -> Vec<StudyColumn> {
        vec![
            StudyColumn { study_id: "s1".into(), label: "Hotel".into(), cohort: Cohort::Pre2022 },
            StudyColumn { study_id: "s2".into(), label: "Diet".into(), cohort: Cohort::Post2022 },
        ]
    }

    fn sample() -> DetectionReport {
        let section = detector_section(
            &[verdicts("gpt-4", "s1", 1, 4), verdicts("gpt-4", "s2", 3, 4)],
            &columns(),
            AverageConvention::UnweightedMean,
        )
        .unwrap();
        let mut provenance = BTreeMap::new();
        provenance.insert("run".to_string(), serde_json::json!("test"));
        DetectionReport {
            provenance,
            detector: vec![section],
            ..Default::default()
        }
    }

    #[test]
    fn detector_section_compares_cohorts() {
        let r = sample();
        let c = r.detector[0].comparison.as_ref().unwrap();
        assert_eq!(c.pre_average.rendered, "25.00");
        assert_eq!(c.post_average.rendered, "75.00");
    }

    #[test]
    fn detector_section_rejects_unknown_study() {
        let err = detector_section(&[verdicts("m", "zz", 0, 1)], &columns(), AverageConvention::PooledWeighted);
        assert!(err.is_err());
    }

    #[test]
    fn markdown_shape() {
        let md = render_report(&sample(), ReportFormat::MarkdownTable).unwrap();
        assert!(md.contains("| LLM model | s1 (n=4) | pre-2022 avg | s2 (n=4) | post-2022 avg |"), "{md}");
        assert!(md.contains("| gpt-4 | 25.00 | 25.00 | 75.00 | 75.00 |"));
    }

    #[test]
    fn csv_and_json() {
        let r = sample();
        let csv = render_report(&r, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with("section,threshold,strategy,model_id,study_id,cohort,flagged,total,percentage\n"));
        assert!(csv.contains("llm_detector,,,gpt-4,s1,pre-2022,1,4,25.00\n"));
        assert!(csv.contains("llm_detector,,,gpt-4,AVERAGE,post-2022,,,75.00\n"));
        let json = render_report(&r, ReportFormat::Json).unwrap();
        let back: DetectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn format_names() {
        for f in ReportFormat::ALL {
            assert_eq!(f.to_string().parse::<ReportFormat>().unwrap(), f);
        }
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
