//! Loading, validating and writing survey datasets.
//!
//! Two on-disk layouts are supported:
//!
//! * a CSV bundle: a directory holding `studies.csv`, `questions.csv` and
//!   `responses.csv` (UTF-8, RFC-4180 quoting, header row required);
//! * a single JSON object with `studies`, `questions` and `responses` arrays
//!   whose objects carry the same columns as the CSV files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    compute_length_stats, Cohort, LengthStats, QuestionKind, SurveyQuestion, SurveyResponse,
    SurveyStudy,
};

pub const STUDIES_FILE: &str = "studies.csv";
pub const QUESTIONS_FILE: &str = "questions.csv";
pub const RESPONSES_FILE: &str = "responses.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    CsvBundle,
    SingleJson,
}

impl DatasetFormat {
    /// Directories are CSV bundles, files are single JSON documents.
    pub fn detect(path: &Path) -> DatasetFormat {
        if path.is_dir() {
            DatasetFormat::CsvBundle
        } else {
            DatasetFormat::SingleJson
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StudyRow {
    study_id: String,
    label: String,
    month_year: String,
    domain: String,
    platform: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct QuestionRow {
    question_id: String,
    study_id: String,
    kind: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ResponseRow {
    response_id: String,
    question_id: String,
    text: String,
    #[serde(default)]
    collected_at: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDocument {
    studies: Vec<StudyRow>,
    questions: Vec<QuestionRow>,
    responses: Vec<ResponseRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyDataset {
    pub studies: Vec<SurveyStudy>,
    pub questions: Vec<SurveyQuestion>,
    pub responses: Vec<SurveyResponse>,
}

impl SurveyDataset {
    /// Builds a dataset and checks referential integrity.
    pub fn new(
        studies: Vec<SurveyStudy>,
        questions: Vec<SurveyQuestion>,
        responses: Vec<SurveyResponse>,
    ) -> Result<Self> {
        let ds = SurveyDataset {
            studies,
            questions,
            responses,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut study_ids = HashSet::new();
        for s in &self.studies {
            if !study_ids.insert(s.study_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "study",
                    id: s.study_id.clone(),
                });
            }
        }
        let mut question_ids = HashSet::new();
        for q in &self.questions {
            if !question_ids.insert(q.question_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "question",
                    id: q.question_id.clone(),
                });
            }
            if !study_ids.contains(q.study_id.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "study",
                    id: q.study_id.clone(),
                });
            }
        }
        let mut response_ids = HashSet::new();
        for r in &self.responses {
            if !response_ids.insert(r.response_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "response",
                    id: r.response_id.clone(),
                });
            }
            if !question_ids.contains(r.question_id.as_str()) {
                return Err(Error::DanglingReference {
                    kind: "question",
                    id: r.question_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn study(&self, study_id: &str) -> Option<&SurveyStudy> {
        self.studies.iter().find(|s| s.study_id == study_id)
    }

    pub fn question(&self, question_id: &str) -> Option<&SurveyQuestion> {
        self.questions.iter().find(|q| q.question_id == question_id)
    }

    pub fn open_ended_questions(&self) -> impl Iterator<Item = &SurveyQuestion> {
        self.questions.iter().filter(|q| q.is_open_ended())
    }

    /// question_id -> study_id
    pub fn question_study_index(&self) -> HashMap<&str, &str> {
        self.questions
            .iter()
            .map(|q| (q.question_id.as_str(), q.study_id.as_str()))
            .collect()
    }

    /// study_id -> cohort
    pub fn cohorts(&self) -> BTreeMap<String, Cohort> {
        self.studies
            .iter()
            .map(|s| (s.study_id.clone(), s.cohort))
            .collect()
    }

    /// Responses to open-ended questions, grouped by study id.
    pub fn open_ended_responses_by_study(&self) -> BTreeMap<&str, Vec<&SurveyResponse>> {
        let open: HashMap<&str, &str> = self
            .open_ended_questions()
            .map(|q| (q.question_id.as_str(), q.study_id.as_str()))
            .collect();
        let mut out: BTreeMap<&str, Vec<&SurveyResponse>> = self
            .studies
            .iter()
            .map(|s| (s.study_id.as_str(), Vec::new()))
            .collect();
        for r in &self.responses {
            if let Some(study) = open.get(r.question_id.as_str()) {
                out.entry(study).or_default().push(r);
            }
        }
        out
    }

    /// Per-study response counts and length statistics over open-ended answers.
    pub fn summary(&self) -> Vec<StudySummary> {
        let grouped = self.open_ended_responses_by_study();
        self.studies
            .iter()
            .map(|s| {
                let rs: Vec<SurveyResponse> = grouped
                    .get(s.study_id.as_str())
                    .map(|v| v.iter().map(|r| (*r).clone()).collect())
                    .unwrap_or_default();
                StudySummary {
                    study_id: s.study_id.clone(),
                    label: s.label.clone(),
                    month_year: s.collected_month_year.to_string(),
                    cohort: s.cohort,
                    responses: rs.len(),
                    empty_responses: rs.iter().filter(|r| r.is_blank()).count(),
                    length: compute_length_stats(&rs).ok(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub label: String,
    pub month_year: String,
    pub cohort: Cohort,
    pub responses: usize,
    pub empty_responses: usize,
    pub length: Option<LengthStats>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<SurveyDataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (studies, questions, responses) = match format {
        DatasetFormat::CsvBundle => (
            read_csv::<StudyRow>(&path.join(STUDIES_FILE), STUDY_COLUMNS)?,
            read_csv::<QuestionRow>(&path.join(QUESTIONS_FILE), QUESTION_COLUMNS)?,
            read_csv::<ResponseRow>(&path.join(RESPONSES_FILE), RESPONSE_COLUMNS)?,
        ),
        DatasetFormat::SingleJson => {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc: JsonDocument = serde_json::from_str(&raw).map_err(|e| Error::Schema {
                file: path.display().to_string(),
                row: e.line(),
                message: e.to_string(),
            })?;
            (doc.studies, doc.questions, doc.responses)
        }
    };
    from_rows(studies, questions, responses, format)
}

fn from_rows(
    studies: Vec<StudyRow>,
    questions: Vec<QuestionRow>,
    responses: Vec<ResponseRow>,
    format: DatasetFormat,
) -> Result<SurveyDataset> {
    let file_for = |csv: &str, array: &str| match format {
        DatasetFormat::CsvBundle => csv.to_string(),
        DatasetFormat::SingleJson => array.to_string(),
    };
    // CSV rows are numbered from 1 after the header; JSON entries are 0-based indices.
    let row_no = |i: usize| match format {
        DatasetFormat::CsvBundle => i + 1,
        DatasetFormat::SingleJson => i,
    };

    let mut out_studies = Vec::with_capacity(studies.len());
    for (i, s) in studies.into_iter().enumerate() {
        let study = SurveyStudy::new(s.study_id, s.label, &s.month_year, s.domain, s.platform)
            .map_err(|e| Error::Schema {
                file: file_for(STUDIES_FILE, "studies"),
                row: row_no(i),
                message: e.to_string(),
            })?;
        if study.study_id.trim().is_empty() {
            return Err(Error::Schema {
                file: file_for(STUDIES_FILE, "studies"),
                row: row_no(i),
                message: "empty study_id".into(),
            });
        }
        out_studies.push(study);
    }

    let mut out_questions = Vec::with_capacity(questions.len());
    for (i, q) in questions.into_iter().enumerate() {
        let schema = |message: String| Error::Schema {
            file: file_for(QUESTIONS_FILE, "questions"),
            row: row_no(i),
            message,
        };
        let kind: QuestionKind = q.kind.parse().map_err(|e: Error| schema(e.to_string()))?;
        if q.text.trim().is_empty() {
            return Err(schema("empty question text".into()));
        }
        out_questions.push(SurveyQuestion {
            question_id: q.question_id,
            study_id: q.study_id,
            text: q.text,
            kind,
        });
    }

    let out_responses = responses
        .into_iter()
        .map(|r| {
            let mut resp = SurveyResponse::new(r.response_id, r.question_id, r.text);
            resp.collected_at = r.collected_at.filter(|s| !s.is_empty());
            resp
        })
        .collect();

    SurveyDataset::new(out_studies, out_questions, out_responses)
}

const STUDY_COLUMNS: &[&str] = &["study_id", "label", "month_year", "domain", "platform"];
const QUESTION_COLUMNS: &[&str] = &["question_id", "study_id", "kind", "text"];
const RESPONSE_COLUMNS: &[&str] = &["response_id", "question_id", "text", "collected_at"];

fn read_csv<T: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(&file_name, e))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(&file_name, e))?
        .clone();
    for col in required {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(Error::Schema {
                file: file_name,
                row: 0,
                message: format!("missing column {col:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<T>().enumerate() {
        rows.push(rec.map_err(|e| {
            let row = e
                .position()
                .map(|p| p.record() as usize)
                .unwrap_or(i + 1);
            Error::Schema {
                file: file_name.clone(),
                row,
                message: e.to_string(),
            }
        })?);
    }
    Ok(rows)
}

fn csv_error(file: &str, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io {
            path: file.into(),
            source: io,
        },
        other => Error::Schema {
            file: file.to_string(),
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

fn to_rows(ds: &SurveyDataset) -> JsonDocument {
    JsonDocument {
        studies: ds
            .studies
            .iter()
            .map(|s| StudyRow {
                study_id: s.study_id.clone(),
                label: s.label.clone(),
                month_year: s.collected_month_year.to_string(),
                domain: s.domain_tag.clone(),
                platform: s.platform.clone(),
            })
            .collect(),
        questions: ds
            .questions
            .iter()
            .map(|q| QuestionRow {
                question_id: q.question_id.clone(),
                study_id: q.study_id.clone(),
                kind: q.kind.as_str().to_string(),
                text: q.text.clone(),
            })
            .collect(),
        responses: ds
            .responses
            .iter()
            .map(|r| ResponseRow {
                response_id: r.response_id.clone(),
                question_id: r.question_id.clone(),
                text: r.text.clone(),
                collected_at: r.collected_at.clone(),
            })
            .collect(),
    }
}

/// Writes a dataset in either layout; the output loads back to an equal dataset.
pub fn write_dataset(ds: &SurveyDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    let doc = to_rows(ds);
    match format {
        DatasetFormat::CsvBundle => {
            fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
            write_csv(&path.join(STUDIES_FILE), &doc.studies)?;
            write_csv(&path.join(QUESTIONS_FILE), &doc.questions)?;
            write_csv(&path.join(RESPONSES_FILE), &doc.responses)?;
        }
        DatasetFormat::SingleJson => {
            let text = crate::report::render::canonical_json(&doc)?;
            crate::report::render::write_atomic(path, text.as_bytes())?;
        }
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&path.display().to_string(), e))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| csv_error(&path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
