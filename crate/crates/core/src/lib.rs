//! Turning pass/fail coding benchmarks into ranked benchmarks and measuring
//! how well synthetic verifiers reproduce those rankings.

pub mod analysis;
pub mod benchmark;
pub mod client;
pub mod generate;
pub mod metrics;
pub mod prompts;
pub mod ranking;
pub mod sandbox;
pub mod verifier;

pub use benchmark::{BenchmarkError, BenchmarkStats, Problem, RankedEntry, RankedSolution, Schema};
pub use client::{ChatClient, ClientConfig, ClientError, OpenAiCompatClient, RetryPolicy, ScriptedClient};
pub use metrics::{MaeMode, MetricsError, MetricsReport, ProblemMetrics};
pub use ranking::{DeficitPolicy, DeficitReport, ScoredSolution, SelectionParams, TargetRule};
pub use sandbox::{ExecConfig, ExecError, ExecutionOutcome, Sandbox, Status};
pub use verifier::{GeneratedTestSuite, Verifier, VerifierEstimate, VerifierKind};
