//! Synthetic verifiers: per-solution score estimates for ranked entries.
//!
//! Two families are supported. Generated test suites are executed against
//! every solution and the pass fraction becomes the estimate. Reward models
//! score each solution once; raw rewards are min-max normalized per problem.
//! A fixed suite (for example the predefined tests themselves) runs through the
//! same path as generated tests and serves as the oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::RankedEntry;
use crate::client::{with_retry, ChatClient, ChatRequest, Message, RequestTag, RetryPolicy};
use crate::prompts::PromptTemplate;
use crate::sandbox::{ExecError, ExecutionOutcome, Job, Sandbox, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    GeneratedTests,
    RewardModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTestSuite {
    pub task_id: String,
    pub assertions: Vec<String>,
    pub requested_count: usize,
    pub raw_response: String,
    /// Set when the suite was written for one specific solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionEstimate {
    pub rank_expected: usize,
    pub score_expected: f64,
    /// `None` when the verifier failed to produce a value for this solution.
    pub score_estimated: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pass: usize,
    pub assert_fail: usize,
    pub error: usize,
    pub timeout: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: &ExecutionOutcome) {
        match outcome.status {
            Status::Pass => self.pass += 1,
            Status::AssertFail => self.assert_fail += 1,
            Status::Error => self.error += 1,
            Status::Timeout => self.timeout += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pass + self.assert_fail + self.error + self.timeout
    }

    pub fn non_assertion(&self) -> usize {
        self.error + self.timeout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierEstimate {
    pub task_id: String,
    pub per_solution: Vec<SolutionEstimate>,
    pub verifier_kind: VerifierKind,
    /// Outcome tally of generated tests across all solutions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_counts: Option<OutcomeCounts>,
}

impl VerifierEstimate {
    pub fn is_complete(&self) -> bool {
        self.per_solution.iter().all(|s| s.score_estimated.is_some())
    }

    pub fn expected(&self) -> Vec<f64> {
        self.per_solution.iter().map(|s| s.score_expected).collect()
    }

    /// Estimated scores, or `None` if any is missing.
    pub fn estimated(&self) -> Option<Vec<f64>> {
        self.per_solution.iter().map(|s| s.score_estimated).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAssessment {
    pub raw_scores: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum VerifierError {
    #[error("test suite for `{0}` is empty")]
    EmptySuite(String),
    #[error("requested test count must be >= 1")]
    InvalidCount,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Renders the test-generation prompt. The with-solution form is used only
/// when a solution is passed explicitly.
pub fn render_testgen_prompt(question: &str, solution: Option<&str>, count: usize) -> Result<String, VerifierError> {
    if count == 0 {
        return Err(VerifierError::InvalidCount);
    }
    let count = count.to_string();
    let rendered = match solution {
        None => PromptTemplate::testgen_without_solution().render(&[("question", question), ("count", &count)]),
        Some(s) => PromptTemplate::testgen_with_solution().render(&[("question", question), ("solution", s), ("count", &count)]),
    };
    Ok(rendered.expect("built-in templates carry every placeholder"))
}

const OPEN_TAG: &str = "<assertion>";
const CLOSE_TAG: &str = "</assertion>";

/// Interiors of well-formed `<assertion>…</assertion>` pairs, in order and
/// trimmed. An opening tag followed by another opening tag before any closing
/// tag is discarded; interiors that do not start with `assert` are dropped.
pub fn extract_assertions(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = response;
    while let Some(open) = rest.find(OPEN_TAG) {
        let after = &rest[open + OPEN_TAG.len()..];
        let Some(close) = after.find(CLOSE_TAG) else { break };
        let interior = &after[..close];
        if let Some(reopen) = interior.rfind(OPEN_TAG) {
            // unclosed tag earlier on; restart from the innermost opening
            rest = &after[reopen..];
            continue;
        }
        let interior = interior.trim();
        if is_assert_statement(interior) {
            out.push(interior.to_string());
        } else {
            tracing::warn!(interior, "dropping tagged text that is not an assert statement");
        }
        rest = &after[close + CLOSE_TAG.len()..];
    }
    out
}

fn is_assert_statement(s: &str) -> bool {
    s.strip_prefix("assert")
        .and_then(|r| r.chars().next())
        .is_some_and(|c| c.is_whitespace() || c == '(')
}

fn estimate_from_outcomes(entry: &RankedEntry, per_solution: &[Vec<ExecutionOutcome>]) -> VerifierEstimate {
    let mut counts = OutcomeCounts::default();
    let per_solution = entry
        .solutions
        .iter()
        .zip(per_solution)
        .map(|(sol, outs)| {
            outs.iter().for_each(|o| counts.add(o));
            let passed = outs.iter().filter(|o| o.passed()).count();
            SolutionEstimate {
                rank_expected: sol.rank,
                score_expected: sol.score,
                score_estimated: Some(passed as f64 / outs.len() as f64),
            }
        })
        .collect();
    VerifierEstimate {
        task_id: entry.task_id.clone(),
        per_solution,
        verifier_kind: VerifierKind::GeneratedTests,
        outcome_counts: Some(counts),
    }
}

/// Runs every solution of `entry` against `suite`; the estimate is the pass
/// fraction. Erroring tests count as failures.
pub fn score_with_generated_tests(entry: &RankedEntry, suite: &GeneratedTestSuite, sandbox: &Sandbox) -> Result<VerifierEstimate, VerifierError> {
    if suite.assertions.is_empty() {
        return Err(VerifierError::EmptySuite(entry.task_id.clone()));
    }
    let jobs: Vec<Job<'_>> = entry.solutions.iter().map(|s| Job { solution: &s.code, tests: &suite.assertions }).collect();
    let outcomes = sandbox.run_batch(&jobs)?;
    Ok(estimate_from_outcomes(entry, &outcomes))
}

/// Min-max normalization into [0, 1]; all-equal inputs map to 0.5.
pub fn normalize_rewards(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if hi <= lo {
        return vec![0.5; raw.len()];
    }
    raw.iter().map(|&r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSettings {
    /// User turn; must contain `{question}`.
    pub preamble: PromptTemplate,
    /// Assistant turn; must contain `{solution}`.
    pub assistant: PromptTemplate,
    pub retry: RetryPolicy,
}

impl Default for RewardSettings {
    fn default() -> Self {
        RewardSettings {
            preamble: PromptTemplate::reward_user(),
            assistant: PromptTemplate::reward_assistant(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Scores each solution with one user/assistant exchange. Solutions whose
/// call fails after retries get no estimate; the others are normalized among
/// themselves.
pub fn score_with_reward_model(entry: &RankedEntry, client: &dyn ChatClient, settings: &RewardSettings) -> (VerifierEstimate, RewardAssessment) {
    let user = settings
        .preamble
        .render(&[("question", &entry.question)])
        .unwrap_or_else(|_| entry.question.clone());
    let raw: Vec<Option<f64>> = entry
        .solutions
        .iter()
        .enumerate()
        .map(|(i, sol)| {
            let assistant = settings
                .assistant
                .render(&[("solution", &sol.code)])
                .unwrap_or_else(|_| sol.code.clone());
            let req = ChatRequest {
                messages: vec![Message::user(user.clone()), Message::assistant(assistant)],
                temperature: 0.0,
                top_p: 1.0,
                seed: None,
                tag: RequestTag { task_id: entry.task_id.clone(), index: i },
            };
            match with_retry(settings.retry, || client.score(&req)).0 {
                Ok(r) if r.is_finite() => Some(r),
                Ok(r) => {
                    tracing::warn!(task_id = %entry.task_id, rank = sol.rank, reward = r, "non-finite reward");
                    None
                }
                Err(e) => {
                    tracing::warn!(task_id = %entry.task_id, rank = sol.rank, error = %e, "reward call failed");
                    None
                }
            }
        })
        .collect();

    let present: Vec<f64> = raw.iter().flatten().copied().collect();
    let mut normalized = normalize_rewards(&present).into_iter();
    let estimates: Vec<Option<f64>> = raw.iter().map(|r| r.and_then(|_| normalized.next())).collect();

    let estimate = VerifierEstimate {
        task_id: entry.task_id.clone(),
        per_solution: entry
            .solutions
            .iter()
            .zip(&estimates)
            .map(|(s, e)| SolutionEstimate { rank_expected: s.rank, score_expected: s.score, score_estimated: *e })
            .collect(),
        verifier_kind: VerifierKind::RewardModel,
        outcome_counts: None,
    };
    let assessment = RewardAssessment {
        raw_scores: raw.iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
        normalized: estimates.iter().map(|e| e.unwrap_or(f64::NAN)).collect(),
    };
    (estimate, assessment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestGenSettings {
    pub count: usize,
    /// Write one suite per solution with that solution shown in the prompt.
    pub with_solution: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: Option<u64>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for TestGenSettings {
    fn default() -> Self {
        TestGenSettings {
            count: 10,
            with_solution: false,
            temperature: 1.0,
            top_p: 0.95,
            seed: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

pub enum Verifier<'a> {
    GeneratedTests { client: &'a dyn ChatClient, settings: TestGenSettings },
    /// Predetermined assertions per task id; the requested count is ignored.
    FixedSuites { suites: &'a BTreeMap<String, Vec<String>> },
    RewardModel { client: &'a dyn ChatClient, settings: RewardSettings },
}

impl Verifier<'_> {
    pub fn kind(&self) -> VerifierKind {
        match self {
            Verifier::RewardModel { .. } => VerifierKind::RewardModel,
            _ => VerifierKind::GeneratedTests,
        }
    }

    /// Same verifier asking for `count` tests per problem.
    pub fn with_count(&self, count: usize) -> Self {
        match self {
            Verifier::GeneratedTests { client, settings } => {
                Verifier::GeneratedTests { client: *client, settings: TestGenSettings { count, ..settings.clone() } }
            }
            Verifier::FixedSuites { suites } => Verifier::FixedSuites { suites },
            Verifier::RewardModel { client, settings } => Verifier::RewardModel { client: *client, settings: settings.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFailure {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationOutput {
    pub estimates: Vec<VerifierEstimate>,
    pub suites: Vec<GeneratedTestSuite>,
    pub rewards: Vec<(String, RewardAssessment)>,
    pub failures: Vec<EvaluationFailure>,
}

fn generate_suite(
    entry: &RankedEntry,
    client: &dyn ChatClient,
    settings: &TestGenSettings,
    solution: Option<(usize, &str)>,
) -> Result<GeneratedTestSuite, String> {
    let prompt = render_testgen_prompt(&entry.question, solution.map(|(_, code)| code), settings.count).map_err(|e| e.to_string())?;
    let req = ChatRequest {
        messages: vec![Message::user(prompt)],
        temperature: settings.temperature,
        top_p: settings.top_p,
        seed: settings.seed,
        tag: RequestTag { task_id: entry.task_id.clone(), index: solution.map_or(0, |(i, _)| i) },
    };
    let raw = with_retry(settings.retry, || client.complete(&req)).0.map_err(|e| e.to_string())?;
    Ok(GeneratedTestSuite {
        task_id: entry.task_id.clone(),
        assertions: extract_assertions(&raw),
        requested_count: settings.count,
        raw_response: raw,
        solution_rank: solution.map(|(i, _)| entry.solutions[i].rank),
    })
}

/// Evaluates every entry; per-entry problems are recorded as failures and
/// never abort the batch. Only sandbox configuration errors are fatal.
pub fn evaluate_verifier(benchmark: &[RankedEntry], verifier: &Verifier<'_>, sandbox: &Sandbox) -> Result<EvaluationOutput, VerifierError> {
    let mut out = EvaluationOutput::default();
    match verifier {
        Verifier::RewardModel { client, settings } => {
            let results: Vec<_> = benchmark.par_iter().map(|e| score_with_reward_model(e, *client, settings)).collect();
            for (estimate, assessment) in results {
                if !estimate.is_complete() {
                    out.failures.push(EvaluationFailure {
                        task_id: estimate.task_id.clone(),
                        reason: "reward missing for at least one solution".into(),
                    });
                }
                out.rewards.push((estimate.task_id.clone(), assessment));
                out.estimates.push(estimate);
            }
            Ok(out)
        }
        Verifier::FixedSuites { suites } => {
            let per_entry: Vec<Result<Vec<GeneratedTestSuite>, String>> = benchmark
                .iter()
                .map(|e| match suites.get(&e.task_id) {
                    Some(assertions) => Ok(vec![GeneratedTestSuite {
                        task_id: e.task_id.clone(),
                        assertions: assertions.clone(),
                        requested_count: assertions.len(),
                        raw_response: String::new(),
                        solution_rank: None,
                    }]),
                    None => Err("no suite for this task".into()),
                })
                .collect();
            run_suites(benchmark, per_entry, sandbox, &mut out)?;
            Ok(out)
        }
        Verifier::GeneratedTests { client, settings } => {
            if settings.count == 0 {
                return Err(VerifierError::InvalidCount);
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(settings.max_in_flight.max(1))
                .build()
                .expect("thread pool");
            let per_entry: Vec<Result<Vec<GeneratedTestSuite>, String>> = pool.install(|| {
                benchmark
                    .par_iter()
                    .with_max_len(1)
                    .map(|e| {
                        if settings.with_solution {
                            (0..e.solutions.len())
                                .map(|i| generate_suite(e, *client, settings, Some((i, &e.solutions[i].code))))
                                .collect()
                        } else {
                            generate_suite(e, *client, settings, None).map(|s| vec![s])
                        }
                    })
                    .collect()
            });
            run_suites(benchmark, per_entry, sandbox, &mut out)?;
            Ok(out)
        }
    }
}

/// Executes one shared suite per entry, or one suite per solution when the
/// entry has as many suites as solutions.
fn run_suites(
    benchmark: &[RankedEntry],
    per_entry: Vec<Result<Vec<GeneratedTestSuite>, String>>,
    sandbox: &Sandbox,
    out: &mut EvaluationOutput,
) -> Result<(), VerifierError> {
    let mut ready: Vec<(&RankedEntry, Vec<GeneratedTestSuite>)> = Vec::new();
    for (entry, suites) in benchmark.iter().zip(per_entry) {
        match suites {
            Err(reason) => out.failures.push(EvaluationFailure { task_id: entry.task_id.clone(), reason }),
            Ok(suites) => {
                out.suites.extend(suites.iter().cloned());
                if suites.iter().any(|s| s.assertions.is_empty()) {
                    out.failures.push(EvaluationFailure {
                        task_id: entry.task_id.clone(),
                        reason: "no assertions extracted".into(),
                    });
                } else {
                    ready.push((entry, suites));
                }
            }
        }
    }

    let jobs: Vec<Job<'_>> = ready
        .iter()
        .flat_map(|(entry, suites)| {
            entry.solutions.iter().enumerate().map(move |(i, sol)| {
                let suite = if suites.len() == 1 { &suites[0] } else { &suites[i] };
                Job { solution: &sol.code, tests: &suite.assertions }
            })
        })
        .collect();
    let mut outcomes = sandbox.run_batch(&jobs)?.into_iter();
    for (entry, _) in &ready {
        let per_solution: Vec<Vec<ExecutionOutcome>> = outcomes.by_ref().take(entry.solutions.len()).collect();
        out.estimates.push(estimate_from_outcomes(entry, &per_solution));
    }
    Ok(())
}
