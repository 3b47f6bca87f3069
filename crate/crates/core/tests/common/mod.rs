//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the metric code under test.
#![allow(dead_code)]

use std::path::PathBuf;

use rankbench_core::sandbox::{ExecConfig, ExecutionOutcome, Status};
use rankbench_core::{Sandbox, ScoredSolution};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

pub fn sandbox(workers: usize) -> Sandbox {
    Sandbox::new(ExecConfig { max_workers: workers, ..ExecConfig::default() }).expect("python3 on PATH")
}

/// Rank by counting: r_i = #{v_j < v_i} + (#{v_j == v_i} + 1) / 2.
pub fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Product-moment correlation of counting ranks; 0 for a constant side.
pub fn oracle_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (oracle_ranks(a), oracle_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let sxy: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sxx: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let syy: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Top-1 by enumerating each tied top pick: the probability that a uniformly
/// chosen top-estimated solution is a truly best one.
pub fn oracle_top1(expected: &[f64], estimated: &[f64]) -> f64 {
    let best_est = estimated.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_exp = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let picks: Vec<usize> = (0..estimated.len()).filter(|&i| estimated[i] >= best_est).collect();
    picks.iter().map(|&i| if expected[i] >= best_exp { 1.0 } else { 0.0 }).sum::<f64>() / picks.len() as f64
}

pub fn oracle_bottom1(expected: &[f64], estimated: &[f64]) -> f64 {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    oracle_top1(&neg(expected), &neg(estimated))
}

pub fn outcome(status: Status, ms: f64) -> ExecutionOutcome {
    let error_type = match status {
        Status::Pass => None,
        Status::AssertFail => Some("AssertionError".to_string()),
        Status::Error => Some("SyntaxError".to_string()),
        Status::Timeout => None,
    };
    ExecutionOutcome { status, error_type, elapsed_ms: ms }
}

/// Solution with `passes` of `total` tests passing; remaining tests fail with
/// `fail` status.
pub fn scored(passes: usize, total: usize, fail: Status, ms: f64, order: usize) -> ScoredSolution {
    let outcomes = (0..total).map(|i| outcome(if i < passes { Status::Pass } else { fail }, ms)).collect();
    ScoredSolution::from_outcomes(format!("# solution {order}"), outcomes, order)
}

/// Pool member carrying an arbitrary score behind a placeholder outcome.
pub fn with_score(score: f64, order: usize) -> ScoredSolution {
    let mut s = scored(0, 1, Status::AssertFail, 1.0, order);
    s.score = score;
    s
}
