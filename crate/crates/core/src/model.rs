//! Shared domain types and the elementary statistics over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month a study was collected in, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthYear {
    pub year: u16,
    pub month: u8,
}

impl MonthYear {
    pub const COHORT_BOUNDARY: MonthYear = MonthYear {
        year: 2022,
        month: 1,
    };

    pub fn new(year: u16, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::BadDate(format!("{year:04}-{month:02}")));
        }
        Ok(MonthYear { year, month })
    }
}

impl FromStr for MonthYear {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::BadDate(s.to_string());
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year: u16 = y.parse().map_err(|_| bad())?;
        let month: u8 = m.parse().map_err(|_| bad())?;
        MonthYear::new(year, month).map_err(|_| bad())
    }
}

impl fmt::Display for MonthYear {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for MonthYear {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthYear {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cohort {
    #[serde(rename = "PRE_2022")]
    Pre2022,
    #[serde(rename = "POST_2022")]
    Post2022,
}

impl Cohort {
    pub fn label(self) -> &'static str {
        match self {
            Cohort::Pre2022 => "pre-2022",
            Cohort::Post2022 => "post-2022",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Studies collected before January 2022 form the pre-ChatGPT baseline.
pub fn cohort_for(month: MonthYear) -> Cohort {
    if month < MonthYear::COHORT_BOUNDARY {
        Cohort::Pre2022
    } else {
        Cohort::Post2022
    }
}

/// Parses the study's collection month and returns its cohort.
pub fn assign_cohort(collected_month_year: &str) -> Result<Cohort> {
    collected_month_year.parse().map(cohort_for)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyStudy {
    pub study_id: String,
    pub label: String,
    pub collected_month_year: MonthYear,
    pub domain_tag: String,
    pub platform: String,
    pub cohort: Cohort,
}

impl SurveyStudy {
    pub fn new(
        study_id: impl Into<String>,
        label: impl Into<String>,
        collected_month_year: &str,
        domain_tag: impl Into<String>,
        platform: impl Into<String>,
    ) -> Result<Self> {
        let month: MonthYear = collected_month_year.parse()?;
        Ok(SurveyStudy {
            study_id: study_id.into(),
            label: label.into(),
            collected_month_year: month,
            domain_tag: domain_tag.into(),
            platform: platform.into(),
            cohort: cohort_for(month),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    OpenEnded,
    Other,
}

impl QuestionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::OpenEnded => "open_ended",
            QuestionKind::Other => "other",
        }
    }
}

impl FromStr for QuestionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "open_ended" | "open" => Ok(QuestionKind::OpenEnded),
            "other" => Ok(QuestionKind::Other),
            other => Err(Error::InvalidArgument(format!("unknown question kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub question_id: String,
    pub study_id: String,
    pub text: String,
    pub kind: QuestionKind,
}

impl SurveyQuestion {
    pub fn is_open_ended(&self) -> bool {
        self.kind == QuestionKind::OpenEnded
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub response_id: String,
    pub question_id: String,
    pub text: String,
    pub word_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collected_at: Option<String>,
}

impl SurveyResponse {
    pub fn new(
        response_id: impl Into<String>,
        question_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        SurveyResponse {
            response_id: response_id.into(),
            question_id: question_id.into(),
            word_count: word_count(&text),
            text,
            collected_at: None,
        }
    }

    pub fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }
}

/// Number of whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Mean and sample standard deviation of response lengths, in words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std_dev: f64,
    pub n: usize,
}

impl fmt::Display for LengthStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2} (n={})", self.mean, self.std_dev, self.n)
    }
}

pub fn compute_length_stats(responses: &[SurveyResponse]) -> Result<LengthStats> {
    length_stats_of(responses.iter().map(|r| r.word_count))
}

pub fn length_stats_of(counts: impl IntoIterator<Item = usize>) -> Result<LengthStats> {
    let counts: Vec<usize> = counts.into_iter().collect();
    let n = counts.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    // Integer sums keep the result independent of input order.
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    let mean = sum as f64 / n as f64;
    let std_dev = if n == 1 {
        0.0
    } else {
        let sum_sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
        // n * sum_sq - sum^2 is exact in integers
        let numer = (n as u128) * sum_sq - sum * sum;
        let var = numer as f64 / (n as f64 * (n as f64 - 1.0));
        var.max(0.0).sqrt()
    };
    Ok(LengthStats { mean, std_dev, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictFlag {
    Ai,
    Human,
    Undetermined,
}

impl VerdictFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictFlag::Ai => "AI",
            VerdictFlag::Human => "HUMAN",
            VerdictFlag::Undetermined => "UNDETERMINED",
        }
    }
}

impl fmt::Display for VerdictFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictSource {
    LlmDetector,
    Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub flag: VerdictFlag,
    pub source: VerdictSource,
    pub detail: String,
}

impl Verdict {
    pub fn is_ai(&self) -> bool {
        self.flag == VerdictFlag::Ai
    }
}
