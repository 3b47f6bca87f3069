//! Ranking-agreement metrics between expected and estimated scores.

pub mod saturation;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::verifier::VerifierEstimate;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {expected} expected scores vs {estimated} estimates")]
    LengthMismatch { expected: usize, estimated: usize },
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("no problem has a complete set of estimates")]
    NoUsableEstimates,
}

fn check(expected: &[f64], estimated: &[f64], needed: usize) -> Result<(), MetricsError> {
    if expected.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch { expected: expected.len(), estimated: estimated.len() });
    }
    if expected.len() < needed {
        return Err(MetricsError::TooShort { needed, got: expected.len() });
    }
    Ok(())
}

fn extreme_agreement(expected: &[f64], estimated: &[f64], pick: fn(f64, f64) -> f64) -> f64 {
    let best_est = estimated.iter().copied().reduce(pick).unwrap();
    let best_exp = expected.iter().copied().reduce(pick).unwrap();
    let chosen: Vec<usize> = (0..estimated.len()).filter(|&i| estimated[i] == best_est).collect();
    let hits = chosen.iter().filter(|&&i| expected[i] == best_exp).count();
    hits as f64 / chosen.len() as f64
}

/// Share of the top-estimated solutions (ties included) that are truly best.
pub fn top1(expected: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    check(expected, estimated, 1)?;
    Ok(extreme_agreement(expected, estimated, f64::max))
}

/// Share of the bottom-estimated solutions (ties included) that are truly worst.
pub fn bottom1(expected: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    check(expected, estimated, 1)?;
    Ok(extreme_agreement(expected, estimated, f64::min))
}

/// 1-based ascending ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks for ties. A constant input has no
/// defined correlation and yields 0.
pub fn spearman(expected: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    check(expected, estimated, 2)?;
    // doubled average ranks are integers centred on n + 1, so every sum below
    // is exact and perfect agreement gives exactly 1
    let centred = |v: &[f64]| -> Vec<i64> {
        let n = v.len() as i64;
        average_ranks(v).into_iter().map(|r| (2.0 * r) as i64 - (n + 1)).collect()
    };
    let a = centred(expected);
    let b = centred(estimated);
    let (mut cov, mut va, mut vb) = (0i64, 0i64, 0i64);
    for (x, y) in a.iter().zip(&b) {
        cov += x * y;
        va += x * x;
        vb += y * y;
    }
    if va == 0 || vb == 0 {
        return Ok(0.0);
    }
    Ok((cov as f64 / ((va as f64) * (vb as f64)).sqrt()).clamp(-1.0, 1.0))
}

pub fn mae(expected: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    check(expected, estimated, 1)?;
    Ok(expected.iter().zip(estimated).map(|(a, b)| (a - b).abs()).sum::<f64>() / expected.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetrics {
    pub task_id: String,
    pub top1: f64,
    pub bottom1: f64,
    pub spearman: f64,
    pub mae: f64,
}

/// Metrics for one problem, or `None` when any estimate is missing.
pub fn problem_metrics(estimate: &VerifierEstimate) -> Result<Option<ProblemMetrics>, MetricsError> {
    let Some(est) = estimate.estimated() else { return Ok(None) };
    let exp = estimate.expected();
    Ok(Some(ProblemMetrics {
        task_id: estimate.task_id.clone(),
        top1: top1(&exp, &est)?,
        bottom1: bottom1(&exp, &est)?,
        spearman: spearman(&exp, &est)?,
        mae: mae(&exp, &est)?,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaeMode {
    /// Mean of per-problem MAE values.
    #[default]
    PerProblem,
    /// Mean absolute error over every solution of every problem.
    Pooled,
}

/// Aggregated metrics; Top-1 and Bottom-1 are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top1: f64,
    pub spearman: f64,
    pub bottom1: f64,
    pub mae: f64,
    pub n_problems: usize,
    pub n_excluded: usize,
}

/// Unweighted mean over problems with complete estimates. Problems with a
/// missing estimate are excluded and counted.
pub fn aggregate(estimates: &[VerifierEstimate], mode: MaeMode) -> Result<(MetricsReport, Vec<ProblemMetrics>), MetricsError> {
    let mut rows = Vec::new();
    let mut excluded = 0;
    let (mut abs_sum, mut abs_n) = (0.0, 0usize);
    for e in estimates {
        match problem_metrics(e)? {
            Some(m) => {
                abs_sum += m.mae * e.per_solution.len() as f64;
                abs_n += e.per_solution.len();
                rows.push(m);
            }
            None => {
                tracing::warn!(task_id = %e.task_id, "excluding problem with missing estimates");
                excluded += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(MetricsError::NoUsableEstimates);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&ProblemMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let report = MetricsReport {
        top1: 100.0 * mean(|m| m.top1),
        spearman: mean(|m| m.spearman),
        bottom1: 100.0 * mean(|m| m.bottom1),
        mae: match mode {
            MaeMode::PerProblem => mean(|m| m.mae),
            MaeMode::Pooled => abs_sum / abs_n as f64,
        },
        n_problems: rows.len(),
        n_excluded: excluded,
    };
    Ok((report, rows))
}

/// Aligned plain-text table, one row per labelled report.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Verifier".len());
    let mut out = format!("{:<width$}  {:>7}  {:>8}  {:>8}  {:>6}  {:>8}\n", "Verifier", "Top-1", "Spearman", "Bottom-1", "MAE", "Problems");
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7.2}  {:>8.4}  {:>8.2}  {:>6.4}  {:>8}\n",
            label, r.top1, r.spearman, r.bottom1, r.mae, r.n_problems
        ));
    }
    out
}
