//! Histogram data describing a ranked benchmark and generated-test outcomes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::benchmark::RankedEntry;
use crate::verifier::{OutcomeCounts, VerifierEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub name: String,
    /// `labels.len() + 1` edges for numeric bins; empty for categorical data.
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
}

impl HistogramData {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,count\n");
        for (l, c) in self.labels.iter().zip(&self.counts) {
            out.push_str(&format!("{l},{c}\n"));
        }
        out
    }
}

/// Integer-valued histogram with one bin per observed value between the
/// smallest and largest.
fn integer_histogram(name: &str, values: impl Iterator<Item = usize>) -> HistogramData {
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *tally.entry(v).or_default() += 1;
    }
    let (Some(&lo), Some(&hi)) = (tally.keys().next(), tally.keys().next_back()) else {
        return HistogramData { name: name.into(), edges: vec![], labels: vec![], counts: vec![] };
    };
    HistogramData {
        name: name.into(),
        edges: (lo..=hi + 1).map(|v| v as f64 - 0.5).collect(),
        labels: (lo..=hi).map(|v| v.to_string()).collect(),
        counts: (lo..=hi).map(|v| tally.get(&v).copied().unwrap_or(0)).collect(),
    }
}

/// Number of ranked solutions per problem.
pub fn solutions_per_problem(entries: &[RankedEntry]) -> HistogramData {
    integer_histogram("solutions_per_problem", entries.iter().map(|e| e.solutions.len()))
}

pub const SCORE_BINS: usize = 20;

fn score_bin(v: f64) -> usize {
    ((v * SCORE_BINS as f64 + 1e-9).floor() as usize).min(SCORE_BINS - 1)
}

fn unit_histogram(name: &str, values: impl Iterator<Item = f64>) -> HistogramData {
    let mut counts = vec![0; SCORE_BINS];
    for v in values {
        counts[score_bin(v.clamp(0.0, 1.0))] += 1;
    }
    let edges: Vec<f64> = (0..=SCORE_BINS).map(|i| i as f64 / SCORE_BINS as f64).collect();
    let labels = edges.windows(2).map(|w| format!("{:.2}-{:.2}", w[0], w[1])).collect();
    HistogramData { name: name.into(), edges, labels, counts }
}

/// Scores of every ranked solution, in bins of width 0.05 over [0, 1].
pub fn score_distribution(entries: &[RankedEntry]) -> HistogramData {
    unit_histogram("score_distribution", entries.iter().flat_map(|e| e.solutions.iter().map(|s| s.score)))
}

/// Highest minus lowest ranked score per problem.
pub fn score_range(entries: &[RankedEntry]) -> HistogramData {
    unit_histogram(
        "score_range",
        entries.iter().map(|e| {
            let s = e.scores();
            s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.iter().copied().fold(f64::INFINITY, f64::min)
        }),
    )
}

/// Generated-test outcomes split into passes, assertion failures and
/// everything else (errors and timeouts).
pub fn testgen_error_distribution(estimates: &[VerifierEstimate]) -> HistogramData {
    let total = estimates.iter().filter_map(|e| e.outcome_counts).fold(OutcomeCounts::default(), |mut acc, c| {
        acc.pass += c.pass;
        acc.assert_fail += c.assert_fail;
        acc.error += c.error;
        acc.timeout += c.timeout;
        acc
    });
    HistogramData {
        name: "testgen_error_distribution".into(),
        edges: vec![],
        labels: vec!["pass".into(), "assert_fail".into(), "non_assert".into()],
        counts: vec![total.pass, total.assert_fail, total.non_assertion()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_edges() {
        assert_eq!(score_bin(0.0), 0);
        assert_eq!(score_bin(0.05), 1);
        assert_eq!(score_bin(0.15), 3);
        assert_eq!(score_bin(0.999), 19);
        assert_eq!(score_bin(1.0), 19);
    }

    #[test]
    fn integer_bins_fill_gaps() {
        let h = integer_histogram("x", [2, 5, 5].into_iter());
        assert_eq!(h.labels, vec!["2", "3", "4", "5"]);
        assert_eq!(h.counts, vec![1, 0, 0, 2]);
        assert_eq!(h.edges.len(), 5);
    }
}
