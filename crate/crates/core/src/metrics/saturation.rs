//! How well a random subset of k tests reproduces the full-suite ranking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{spearman, MetricsError};
use crate::benchmark::RankedEntry;
use crate::sandbox::{ExecError, Job, Sandbox};

/// Pass/fail grid for one problem: rows are solutions, columns are tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    pub task_id: String,
    pub passes: Vec<Vec<bool>>,
}

impl OutcomeMatrix {
    pub fn test_count(&self) -> usize {
        self.passes.first().map_or(0, Vec::len)
    }

    pub fn full_scores(&self) -> Vec<f64> {
        self.passes.iter().map(|row| row.iter().filter(|&&p| p).count() as f64 / row.len() as f64).collect()
    }

    fn subset_scores(&self, columns: &[usize]) -> Vec<f64> {
        self.passes
            .iter()
            .map(|row| columns.iter().filter(|&&c| row[c]).count() as f64 / columns.len() as f64)
            .collect()
    }
}

/// Runs every solution of `entry` against `tests` and records pass/fail.
pub fn build_outcome_matrix(entry: &RankedEntry, tests: &[String], sandbox: &Sandbox) -> Result<OutcomeMatrix, ExecError> {
    let jobs: Vec<Job<'_>> = entry.solutions.iter().map(|s| Job { solution: &s.code, tests }).collect();
    let outcomes = sandbox.run_batch(&jobs)?;
    Ok(OutcomeMatrix {
        task_id: entry.task_id.clone(),
        passes: outcomes.iter().map(|row| row.iter().map(|o| o.passed()).collect()).collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// 2.5th and 97.5th percentiles of the repetition values.
    #[default]
    Percentile,
    /// Mean ± 1.96 standard errors.
    MeanNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    pub k_max: usize,
    pub reps: usize,
    pub seed: u64,
    pub interval: IntervalMethod,
}

impl Default for SaturationParams {
    fn default() -> Self {
        SaturationParams { k_max: 10, reps: 1000, seed: 0, interval: IntervalMethod::Percentile }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationRow {
    pub k: usize,
    pub rho_mean: f64,
    pub rho_ci_low: f64,
    pub rho_ci_high: f64,
    pub rho_std: f64,
    /// Problems with fewer than k tests, sampled at their full size.
    pub capped: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SaturationError {
    #[error("k_max and reps must be >= 1")]
    InvalidParams,
    #[error("no problem has at least two solutions and one test")]
    NoProblems,
    #[error("problem `{0}` has rows of unequal length")]
    Ragged(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Random source for one (k, repetition) cell; independent of scheduling.
pub fn cell_rng(seed: u64, k: usize, rep: usize, reps: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k - 1) * reps + rep) as u64);
    rng
}

/// Linear-interpolation percentile of sorted values, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn saturation_analysis(matrices: &[OutcomeMatrix], params: &SaturationParams) -> Result<Vec<SaturationRow>, SaturationError> {
    if params.k_max == 0 || params.reps == 0 {
        return Err(SaturationError::InvalidParams);
    }
    for m in matrices {
        let n = m.test_count();
        if m.passes.iter().any(|r| r.len() != n) {
            return Err(SaturationError::Ragged(m.task_id.clone()));
        }
    }
    let usable: Vec<(&OutcomeMatrix, Vec<f64>)> = matrices
        .iter()
        .filter(|m| m.passes.len() >= 2 && m.test_count() >= 1)
        .map(|m| (m, m.full_scores()))
        .collect();
    if usable.is_empty() {
        return Err(SaturationError::NoProblems);
    }

    (1..=params.k_max)
        .map(|k| {
            let values: Vec<f64> = (0..params.reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = cell_rng(params.seed, k, rep, params.reps);
                    let mut total = 0.0;
                    for (m, full) in &usable {
                        let n = m.test_count();
                        let cols = sample(&mut rng, n, k.min(n)).into_vec();
                        total += spearman(full, &m.subset_scores(&cols))?;
                    }
                    Ok(total / usable.len() as f64)
                })
                .collect::<Result<_, MetricsError>>()?;
            let capped = usable.iter().filter(|(m, _)| m.test_count() < k).count();
            Ok(summarize(k, values, capped, params.interval))
        })
        .collect()
}

fn summarize(k: usize, mut values: Vec<f64>, capped: usize, method: IntervalMethod) -> SaturationRow {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values.sort_by(f64::total_cmp);
    let (low, high) = match method {
        IntervalMethod::Percentile => (percentile(&values, 0.025), percentile(&values, 0.975)),
        IntervalMethod::MeanNormal => {
            let half = 1.96 * std / n.sqrt();
            (mean - half, mean + half)
        }
    };
    // summation rounding can move the mean of identical values by an ulp
    SaturationRow { k, rho_mean: mean, rho_ci_low: low.min(mean), rho_ci_high: high.max(mean), rho_std: std, capped }
}
