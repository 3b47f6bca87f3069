//! Building ranked benchmark rows from generated candidates.
//!
//! Candidates are scored by the fraction of predefined tests they pass, then
//! pruned (score-0 solutions that never reached an assertion are dropped,
//! equal scores keep the fastest solution) and finally `k` solutions are
//! selected whose scores sit closest to evenly spaced targets between 1.0 and
//! the minimum score `m`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::benchmark::{Problem, RankedEntry, RankedSolution};
use crate::client::ChatClient;
use crate::generate::{generate_solutions, GenerationConfig, GenerationError, GenerationRecord};
use crate::sandbox::{ExecError, ExecutionOutcome, Job, Sandbox, Status};

/// Scores closer than this are treated as equidistant from a target.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSolution {
    pub code: String,
    pub outcomes: Vec<ExecutionOutcome>,
    pub score: f64,
    pub mean_exec_ms: f64,
    /// Generation order; lower is earlier.
    pub order: usize,
}

impl ScoredSolution {
    /// Panics if `outcomes` is empty.
    pub fn from_outcomes(code: impl Into<String>, outcomes: Vec<ExecutionOutcome>, order: usize) -> Self {
        assert!(!outcomes.is_empty(), "a solution needs at least one outcome");
        let n = outcomes.len() as f64;
        let passed = outcomes.iter().filter(|o| o.passed()).count() as f64;
        let mean_exec_ms = outcomes.iter().map(|o| o.elapsed_ms).sum::<f64>() / n;
        ScoredSolution { code: code.into(), outcomes, score: passed / n, mean_exec_ms, order }
    }

    pub fn has_assertion_failure(&self) -> bool {
        self.outcomes.iter().any(|o| o.status == Status::AssertFail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeficitPolicy {
    Drop,
    KeepPartial,
}

/// How interior targets are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Slot 1 is the 1.0 solution, slot k' the minimum-score solution, and
    /// the k'-2 interior targets are `1 - i/(k'-1) * (1 - m)`. With `m = 0`
    /// and k' = 5 this gives the quartiles.
    Reconciled,
    /// `k'-1` greedy targets `1 - i/k' * (1 - m)` followed by the minimum-score
    /// solution; the 1.0 solution is not forced in.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub k: usize,
    pub max_rounds: usize,
    pub on_deficit: DeficitPolicy,
    pub target_rule: TargetRule,
    /// Discard measured execution times: equal scores then resolve by
    /// generation order and `mean_exec_ms` is written as 0.
    pub ignore_timing: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            k: 5,
            max_rounds: 3,
            on_deficit: DeficitPolicy::KeepPartial,
            target_rule: TargetRule::Reconciled,
            ignore_timing: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectionError {
    #[error("k must be >= 2 (got {0})")]
    InvalidK(usize),
    #[error("max_rounds must be >= 1")]
    InvalidRounds,
    #[error("no solution scores 1.0")]
    MissingGroundTruth,
    #[error("need at least 2 uniquely scored solutions, have {0}")]
    TooFew(usize),
    #[error("scores must be sorted in descending order")]
    NotSorted,
    #[error("pool contains duplicate score {0}")]
    DuplicateScore(f64),
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.k < 2 {
            return Err(SelectionError::InvalidK(self.k));
        }
        if self.max_rounds == 0 {
            return Err(SelectionError::InvalidRounds);
        }
        Ok(())
    }
}

pub fn score_solution(code: &str, problem: &Problem, sandbox: &Sandbox) -> Result<ScoredSolution, ExecError> {
    let outcomes = sandbox.execute_suite(code, &problem.predefined_tests)?;
    Ok(ScoredSolution::from_outcomes(code, outcomes, 0))
}

/// Keeps one solution per distinct score: the one with the lowest mean
/// execution time, then the earliest generated. Survivors keep their relative
/// input order.
pub fn dedupe(solutions: Vec<ScoredSolution>) -> Vec<ScoredSolution> {
    let mut best: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, s) in solutions.iter().enumerate() {
        best.entry(s.score.to_bits())
            .and_modify(|cur| {
                let c = &solutions[*cur];
                let faster = s.mean_exec_ms < c.mean_exec_ms;
                let same_time_earlier = s.mean_exec_ms == c.mean_exec_ms && s.order < c.order;
                if faster || same_time_earlier {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = best.into_values().collect();
    solutions
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| keep.contains(&i).then_some(s))
        .collect()
}

/// Drops solutions that score 0 without a single assertion failure, i.e. that
/// only ever crashed, failed to compile, or timed out.
pub fn filter_trivial_failures(solutions: Vec<ScoredSolution>) -> Vec<ScoredSolution> {
    solutions
        .into_iter()
        .filter(|s| s.score > 0.0 || s.has_assertion_failure())
        .collect()
}

/// The smallest score strictly between 0 and 0.1 if one exists, else the
/// smallest score overall. `scores` must be sorted descending and start at 1.0.
pub fn minimum_score(scores: &[f64]) -> Result<f64, SelectionError> {
    let (&first, &last) = match (scores.first(), scores.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(SelectionError::TooFew(0)),
    };
    if scores.windows(2).any(|w| w[0] < w[1]) {
        return Err(SelectionError::NotSorted);
    }
    if first != 1.0 {
        return Err(SelectionError::MissingGroundTruth);
    }
    Ok(scores
        .iter()
        .copied()
        .filter(|&s| s > 0.0 && s < 0.1)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
        .unwrap_or(last))
}

/// Greedy targets for an effective selection count `k_eff` and minimum score `m`.
pub fn selection_targets(k_eff: usize, m: f64, rule: TargetRule) -> Vec<f64> {
    match rule {
        TargetRule::Reconciled if k_eff >= 2 => {
            let span = (k_eff - 1) as f64;
            (1..k_eff - 1).map(|i| 1.0 - (i as f64 / span) * (1.0 - m)).collect()
        }
        TargetRule::Literal if k_eff >= 1 => {
            let span = k_eff as f64;
            (1..k_eff).map(|i| 1.0 - (i as f64 / span) * (1.0 - m)).collect()
        }
        _ => Vec::new(),
    }
}

/// Selects `min(n, k)` solutions per the configured target rule, returned in
/// descending score order.
///
/// Targets are processed in order; each takes the unchosen solution nearest
/// to it, preferring the higher score on ties.
pub fn select_solutions(pool: Vec<ScoredSolution>, params: &SelectionParams) -> Result<Vec<ScoredSolution>, SelectionError> {
    if params.k < 2 {
        return Err(SelectionError::InvalidK(params.k));
    }
    let mut pool = pool;
    pool.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.order.cmp(&b.order)));
    if let Some(w) = pool.windows(2).find(|w| w[0].score == w[1].score) {
        return Err(SelectionError::DuplicateScore(w[0].score));
    }
    if pool.first().map(|s| s.score) != Some(1.0) {
        return Err(SelectionError::MissingGroundTruth);
    }
    let k_eff = pool.len().min(params.k);
    if k_eff < 2 {
        return Err(SelectionError::TooFew(k_eff));
    }

    let scores: Vec<f64> = pool.iter().map(|s| s.score).collect();
    let m = minimum_score(&scores)?;
    let m_idx = scores.iter().position(|&s| s == m).expect("m is a pool score");

    let mut chosen = vec![false; pool.len()];
    chosen[m_idx] = true;
    if params.target_rule == TargetRule::Reconciled {
        chosen[0] = true;
    }
    for target in selection_targets(k_eff, m, params.target_rule) {
        let pick = (0..pool.len())
            .filter(|&i| !chosen[i])
            .min_by(|&a, &b| {
                let da = (scores[a] - target).abs();
                let db = (scores[b] - target).abs();
                if (da - db).abs() <= TIE_EPS {
                    // higher score first; pool is sorted descending
                    a.cmp(&b)
                } else {
                    da.total_cmp(&db)
                }
            });
        if let Some(i) = pick {
            chosen[i] = true;
        }
    }

    Ok(pool
        .into_iter()
        .zip(chosen)
        .filter_map(|(s, c)| c.then_some(s))
        .collect())
}

/// Why a problem ended without a full set of `k` solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeficitReport {
    pub task_id: String,
    pub rounds_used: usize,
    pub unique_score_count: usize,
    pub reason: String,
    /// Whether a partial entry was still emitted.
    pub kept_partial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemResult {
    pub entry: Option<RankedEntry>,
    pub deficit: Option<DeficitReport>,
    pub log: Vec<GenerationRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("problem `{0}` has no predefined tests")]
    NoTests(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn usable(pool: &[ScoredSolution]) -> Vec<ScoredSolution> {
    dedupe(filter_trivial_failures(pool.to_vec()))
}

fn build_entry(problem: &Problem, selected: Vec<ScoredSolution>) -> RankedEntry {
    RankedEntry {
        task_id: problem.task_id.clone(),
        question: problem.question.clone(),
        solutions: selected
            .into_iter()
            .enumerate()
            .map(|(i, s)| RankedSolution { code: s.code, score: s.score, rank: i + 1, mean_exec_ms: s.mean_exec_ms })
            .collect(),
        test_count: problem.predefined_tests.len(),
    }
}

/// Runs generate → score → filter → dedupe → select until `k` uniquely
/// scored solutions (including a 1.0 solution) exist or `max_rounds` is hit.
///
/// The pool accumulates across rounds. The canonical solution, when present,
/// enters the pool first. Textually identical candidates are executed once.
pub fn transform_problem(
    problem: &Problem,
    client: &dyn ChatClient,
    gen_cfg: &GenerationConfig,
    sandbox: &Sandbox,
    params: &SelectionParams,
) -> Result<ProblemResult, TransformError> {
    params.validate()?;
    if problem.predefined_tests.is_empty() {
        return Err(TransformError::NoTests(problem.task_id.clone()));
    }

    let mut pool: Vec<ScoredSolution> = Vec::new();
    let mut seen_code: HashSet<String> = HashSet::new();
    let mut log = Vec::new();
    let mut seq = 0usize;

    if let Some(canonical) = &problem.canonical_solution {
        let mut s = score_solution(canonical, problem, sandbox)?;
        s.order = seq;
        if params.ignore_timing {
            s.mean_exec_ms = 0.0;
        }
        seq += 1;
        seen_code.insert(canonical.clone());
        pool.push(s);
    }

    let is_complete = |pool: &[ScoredSolution]| {
        let u = usable(pool);
        u.len() >= params.k && u.iter().any(|s| s.score == 1.0)
    };

    let mut rounds_used = 0;
    while rounds_used < params.max_rounds && !is_complete(&pool) {
        let out = generate_solutions(problem, client, gen_cfg, rounds_used * gen_cfg.rounds)?;
        rounds_used += 1;
        log.extend(out.log);

        let fresh: Vec<String> = out
            .candidates
            .into_iter()
            .map(|c| c.code)
            .filter(|code| seen_code.insert(code.clone()))
            .collect();
        if fresh.is_empty() {
            continue;
        }
        let jobs: Vec<Job<'_>> = fresh.iter().map(|code| Job { solution: code, tests: &problem.predefined_tests }).collect();
        let outcomes = sandbox.run_batch(&jobs)?;
        for (code, outs) in fresh.iter().zip(outcomes) {
            let mut s = ScoredSolution::from_outcomes(code.clone(), outs, seq);
            if params.ignore_timing {
                s.mean_exec_ms = 0.0;
            }
            pool.push(s);
            seq += 1;
        }
    }

    let candidates = usable(&pool);
    let unique = candidates.len();
    let has_truth = candidates.iter().any(|s| s.score == 1.0);
    let deficit = |reason: String, kept_partial: bool| DeficitReport {
        task_id: problem.task_id.clone(),
        rounds_used,
        unique_score_count: unique,
        reason,
        kept_partial,
    };

    if has_truth && unique >= params.k {
        let selected = select_solutions(candidates, params)?;
        let entry = build_entry(problem, selected);
        return Ok(match entry.validate() {
            Ok(()) => ProblemResult { entry: Some(entry), deficit: None, log },
            Err(e) => ProblemResult { entry: None, deficit: Some(deficit(e.to_string(), false)), log },
        });
    }

    let reason = if has_truth {
        format!("{unique} uniquely scored solutions after {rounds_used} rounds, wanted {}", params.k)
    } else {
        format!("no solution passes every test after {rounds_used} rounds")
    };
    if params.on_deficit == DeficitPolicy::KeepPartial && has_truth && unique >= 2 {
        let selected = select_solutions(candidates, params)?;
        let entry = build_entry(problem, selected);
        if entry.validate().is_ok() {
            return Ok(ProblemResult { entry: Some(entry), deficit: Some(deficit(reason, true)), log });
        }
    }
    Ok(ProblemResult { entry: None, deficit: Some(deficit(reason, false)), log })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformOutput {
    pub entries: Vec<RankedEntry>,
    pub deficits: Vec<DeficitReport>,
    pub log: Vec<GenerationRecord>,
}

/// Transforms every problem in order. Per-problem shortfalls become deficit
/// reports; configuration and runtime errors abort.
pub fn transform_benchmark(
    problems: &[Problem],
    client: &dyn ChatClient,
    gen_cfg: &GenerationConfig,
    sandbox: &Sandbox,
    params: &SelectionParams,
) -> Result<TransformOutput, TransformError> {
    params.validate()?;
    gen_cfg.validate()?;
    let mut out = TransformOutput::default();
    for problem in problems {
        match transform_problem(problem, client, gen_cfg, sandbox, params) {
            Ok(r) => {
                out.entries.extend(r.entry);
                out.deficits.extend(r.deficit);
                out.log.extend(r.log);
            }
            Err(TransformError::NoTests(task_id)) => out.deficits.push(DeficitReport {
                task_id,
                rounds_used: 0,
                unique_score_count: 0,
                reason: "no predefined tests".into(),
                kept_partial: false,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(status: Status, ms: f64) -> ExecutionOutcome {
        let error_type = match status {
            Status::AssertFail => Some("AssertionError".into()),
            Status::Error => Some("SyntaxError".into()),
            _ => None,
        };
        ExecutionOutcome { status, error_type, elapsed_ms: ms }
    }

    fn sol(score: f64, ms: f64, order: usize) -> ScoredSolution {
        ScoredSolution { code: format!("s{order}"), outcomes: vec![outcome(Status::Pass, ms)], score, mean_exec_ms: ms, order }
    }

    fn pool(scores: &[f64]) -> Vec<ScoredSolution> {
        scores.iter().enumerate().map(|(i, &s)| sol(s, 1.0, i)).collect()
    }

    fn selected_scores(scores: &[f64], k: usize) -> Vec<f64> {
        let params = SelectionParams { k, ..Default::default() };
        select_solutions(pool(scores), &params).unwrap().iter().map(|s| s.score).collect()
    }

    #[test]
    fn score_from_outcomes() {
        let mut outs = vec![outcome(Status::Pass, 2.0); 7];
        outs.extend(vec![outcome(Status::AssertFail, 4.0); 3]);
        let s = ScoredSolution::from_outcomes("c", outs, 0);
        assert_eq!(s.score, 0.7);
        assert!((s.mean_exec_ms - 2.6).abs() < 1e-12);

        let third = ScoredSolution::from_outcomes(
            "c",
            vec![outcome(Status::Pass, 1.0), outcome(Status::AssertFail, 1.0), outcome(Status::Error, 1.0)],
            0,
        );
        assert_eq!(third.score, 1.0 / 3.0);
    }

    #[test]
    fn dedupe_keeps_faster() {
        let out = dedupe(vec![sol(0.5, 120.0, 0), sol(0.5, 80.0, 1)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mean_exec_ms, 80.0);
    }

    #[test]
    fn dedupe_distinct_unchanged() {
        let p = pool(&[1.0, 0.2, 0.7]);
        assert_eq!(dedupe(p.clone()), p);
    }

    #[test]
    fn dedupe_equal_time_keeps_earliest() {
        for (a, b) in [(0, 1), (1, 0)] {
            let out = dedupe(vec![sol(0.5, 10.0, a + 5), sol(0.5, 10.0, b + 5)]);
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].order, 5);
        }
    }

    #[test]
    fn filter_rules() {
        let syntax = ScoredSolution::from_outcomes("x", vec![outcome(Status::Error, 1.0); 3], 0);
        let timeout = ScoredSolution::from_outcomes("t", vec![outcome(Status::Timeout, 3000.0); 2], 1);
        let with_assert = ScoredSolution::from_outcomes(
            "y",
            vec![outcome(Status::Error, 1.0), outcome(Status::AssertFail, 1.0)],
            2,
        );
        let partial = ScoredSolution::from_outcomes(
            "z",
            vec![outcome(Status::Pass, 1.0), outcome(Status::Error, 1.0), outcome(Status::Error, 1.0), outcome(Status::Error, 1.0), outcome(Status::Error, 1.0)],
            3,
        );
        assert_eq!(partial.score, 0.2);
        let kept: Vec<usize> = filter_trivial_failures(vec![syntax, timeout, with_assert, partial]).iter().map(|s| s.order).collect();
        assert_eq!(kept, vec![2, 3]);
    }

    #[test]
    fn minimum_score_table() {
        assert_eq!(minimum_score(&[1.0, 0.6, 0.3, 0.05, 0.0]), Ok(0.05));
        assert_eq!(minimum_score(&[1.0, 0.5, 0.2]), Ok(0.2));
        assert_eq!(minimum_score(&[1.0, 0.0]), Ok(0.0));
        assert_eq!(minimum_score(&[1.0, 0.09, 0.05, 0.0]), Ok(0.05));
        assert_eq!(minimum_score(&[0.9, 0.0]), Err(SelectionError::MissingGroundTruth));
        assert_eq!(minimum_score(&[1.0, 0.0, 0.5]), Err(SelectionError::NotSorted));
    }

    #[test]
    fn targets() {
        assert_eq!(selection_targets(5, 0.0, TargetRule::Reconciled), vec![0.75, 0.5, 0.25]);
        assert_eq!(selection_targets(3, 0.0, TargetRule::Reconciled), vec![0.5]);
        assert!(selection_targets(2, 0.0, TargetRule::Reconciled).is_empty());
        let literal = selection_targets(5, 0.0, TargetRule::Literal);
        let want = [0.8, 0.6, 0.4, 0.2];
        assert_eq!(literal.len(), 4);
        for (a, b) in literal.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_example() {
        assert_eq!(selected_scores(&[1.0, 0.9, 0.75, 0.5, 0.25, 0.1, 0.0], 5), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn short_pool_uses_effective_count() {
        assert_eq!(selected_scores(&[1.0, 0.4, 0.0], 5), vec![1.0, 0.4, 0.0]);
    }

    #[test]
    fn single_solution_cannot_rank() {
        let params = SelectionParams::default();
        assert_eq!(select_solutions(pool(&[1.0]), &params), Err(SelectionError::TooFew(1)));
        assert_eq!(select_solutions(pool(&[0.8, 0.1]), &params), Err(SelectionError::MissingGroundTruth));
        assert_eq!(select_solutions(pool(&[1.0, 0.5, 0.5]), &params), Err(SelectionError::DuplicateScore(0.5)));
    }

    #[test]
    fn ties_prefer_higher_score() {
        // target 0.5 is equidistant from 0.6 and 0.4
        assert_eq!(selected_scores(&[1.0, 0.6, 0.4, 0.0], 3), vec![1.0, 0.6, 0.0]);
    }

    #[test]
    fn small_positive_score_becomes_minimum() {
        // m = 0.05, so 0.0 is only an interior candidate
        assert_eq!(selected_scores(&[1.0, 0.7, 0.5, 0.3, 0.05, 0.0], 5), vec![1.0, 0.7, 0.5, 0.3, 0.05]);
    }

    #[test]
    fn literal_rule_follows_displayed_formula() {
        let params = SelectionParams { k: 5, target_rule: TargetRule::Literal, ..Default::default() };
        let out: Vec<f64> = select_solutions(pool(&[1.0, 0.9, 0.75, 0.5, 0.25, 0.1, 0.0]), &params)
            .unwrap()
            .iter()
            .map(|s| s.score)
            .collect();
        assert_eq!(out, vec![0.75, 0.5, 0.25, 0.1, 0.0]);
    }
}
