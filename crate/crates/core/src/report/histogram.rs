use serde::{Deserialize, Serialize};

use super::render::{csv_text, format_threshold};
use crate::error::{Error, Result};
use crate::model::Cohort;

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCounts {
    pub cohort: Cohort,
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Similarity histogram over [-1, 1]: half-open bins, the last one closed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_width: f64,
    pub bin_edges: Vec<f64>,
    pub cohorts: Vec<CohortCounts>,
}

fn bin_count(width: f64) -> Result<usize> {
    let bad = || Error::InvalidArgument(format!("bin width {width} does not divide [-1, 1]"));
    if !width.is_finite() || width <= 0.0 || width > 2.0 {
        return Err(bad());
    }
    let n = (2.0 / width).round();
    if (n * width - 2.0).abs() > 1e-9 {
        return Err(bad());
    }
    Ok(n as usize)
}

fn edge(i: usize, width: f64) -> f64 {
    let e = -1.0 + i as f64 * width;
    // strip accumulated float noise so edges print cleanly
    (e * 1e12).round() / 1e12
}

impl HistogramSpec {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// Index of the bin holding `score`, consistent with the printed edges.
    pub fn bin_of(&self, score: f64) -> usize {
        let n = self.bins();
        let mut i = ((score + 1.0) / self.bin_width).floor().clamp(0.0, (n - 1) as f64) as usize;
        while i + 1 < n && score >= self.bin_edges[i + 1] {
            i += 1;
        }
        while i > 0 && score < self.bin_edges[i] {
            i -= 1;
        }
        i
    }

    pub fn counts_for(&self, cohort: Cohort) -> Option<&CohortCounts> {
        self.cohorts.iter().find(|c| c.cohort == cohort)
    }

    /// `bin_start,bin_end,cohort,count` rows for external plotting.
    pub fn to_csv(&self) -> Result<String> {
        let mut rows = Vec::new();
        for c in &self.cohorts {
            for (i, count) in c.counts.iter().enumerate() {
                rows.push(vec![
                    format_threshold(self.bin_edges[i]),
                    format_threshold(self.bin_edges[i + 1]),
                    c.cohort.label().to_string(),
                    count.to_string(),
                ]);
            }
        }
        csv_text(&["bin_start", "bin_end", "cohort", "count"], &rows)
    }
}

/// Bins final scores per cohort. Scores outside [-1, 1] land in the end bins.
pub fn build_histogram(scores: &[(Cohort, f64)], bin_width: f64) -> Result<HistogramSpec> {
    let n = bin_count(bin_width)?;
    let mut bin_edges: Vec<f64> = (0..=n).map(|i| edge(i, bin_width)).collect();
    bin_edges[0] = -1.0;
    bin_edges[n] = 1.0;
    let mut spec = HistogramSpec {
        bin_width,
        bin_edges,
        cohorts: [Cohort::Pre2022, Cohort::Post2022]
            .into_iter()
            .map(|cohort| CohortCounts {
                cohort,
                counts: vec![0; n],
                total: 0,
            })
            .collect(),
    };
    for &(cohort, score) in scores {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite score {score}")));
        }
        let bin = spec.bin_of(score);
        let c = spec
            .cohorts
            .iter_mut()
            .find(|c| c.cohort == cohort)
            .expect("both cohorts present");
        c.counts[bin] += 1;
        c.total += 1;
    }
    Ok(spec)
}
