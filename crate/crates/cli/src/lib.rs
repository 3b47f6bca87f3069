//! `rankbench` subcommands. Each command reads its inputs, writes fixed file
//! names into a run directory and records a manifest.

pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rankbench_core::analysis;
use rankbench_core::benchmark::{compute_stats, load_benchmark, load_ranked_benchmark, read_jsonl};
use rankbench_core::metrics::saturation::{build_outcome_matrix, saturation_analysis, IntervalMethod, OutcomeMatrix, SaturationParams};
use rankbench_core::metrics::sweep::scaling_sweep;
use rankbench_core::metrics::{aggregate, render_table};
use rankbench_core::ranking::transform_benchmark;
use rankbench_core::verifier::{evaluate_verifier, EvaluationOutput};
use rankbench_core::{
    ChatClient, DeficitPolicy, MaeMode, OpenAiCompatClient, Problem, RankedEntry, Sandbox, Schema, ScriptedClient, TargetRule,
    Verifier, VerifierEstimate,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{now, RunDir};

#[derive(Debug, Parser)]
#[command(name = "rankbench", version, about = "Build ranked coding benchmarks and score synthetic verifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for test generation requests and saturation sampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum concurrent test executions.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, score and select solutions to build a ranked benchmark.
    Transform(TransformArgs),
    /// Score a ranked benchmark with one verifier.
    Evaluate(EvaluateArgs),
    /// Evaluate a test-generating verifier at several suite sizes.
    Sweep(SweepArgs),
    /// Measure how quickly subsets of the predefined tests reproduce the ranking.
    Saturate(SaturateArgs),
    /// Emit histogram data for a ranked benchmark.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemaArg {
    Generic,
    Humaneval,
    Mbpp,
}

impl From<SchemaArg> for Schema {
    fn from(s: SchemaArg) -> Self {
        match s {
            SchemaArg::Generic => Schema::Generic,
            SchemaArg::Humaneval => Schema::HumanEval,
            SchemaArg::Mbpp => Schema::Mbpp,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Replay canned responses from this JSON file instead of calling an API.
    #[arg(long)]
    pub mock: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemaArg::Generic)]
    pub schema: SchemaArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub client: ClientArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Drop problems that end short of `k` solutions instead of keeping them.
    #[arg(long)]
    pub drop_deficits: bool,
    /// Use the uncorrected target formula.
    #[arg(long)]
    pub literal_targets: bool,
    /// Ignore execution times so outputs are byte-reproducible.
    #[arg(long)]
    pub ignore_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifierArg {
    /// The source benchmark's own tests (requires --problems).
    Predefined,
    GeneratedTests,
    RewardModel,
}

#[derive(Debug, Args)]
pub struct VerifierArgs {
    #[arg(long, value_enum, default_value_t = VerifierArg::GeneratedTests)]
    pub verifier: VerifierArg,
    /// Source benchmark providing predefined tests.
    #[arg(long)]
    pub problems: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SchemaArg::Generic)]
    pub schema: SchemaArg,
    /// Show each solution to the test writer and score it on its own suite.
    #[arg(long)]
    pub with_solution: bool,
    /// Mean absolute error over all solutions instead of per problem.
    #[arg(long)]
    pub pooled_mae: bool,
    #[command(flatten)]
    pub client: ClientArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of tests requested per problem.
    #[arg(long)]
    pub tests: Option<usize>,
    /// Row label in report.txt.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub verifier: VerifierArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 15, 20, 25])]
    pub counts: Vec<usize>,
    #[command(flatten)]
    pub verifier: VerifierArgs,
}

#[derive(Debug, Args)]
pub struct SaturateArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    /// Source benchmark providing the predefined tests.
    #[arg(long, required_unless_present = "matrices")]
    pub problems: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SchemaArg::Generic)]
    pub schema: SchemaArg,
    /// Reuse outcome matrices from an earlier run instead of executing.
    #[arg(long)]
    pub matrices: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum)]
    pub interval: Option<IntervalArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntervalArg {
    Percentile,
    MeanNormal,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    /// `estimates.jsonl` from an evaluate run, for the test outcome histogram.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one command and returns the summary meant for stdout.
pub fn run(cli: &Cli, argv: &[String]) -> anyhow::Result<String> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(w) = cli.global.workers {
        cfg.exec.max_workers = w;
    }
    let started = now();
    match &cli.command {
        Command::Transform(a) => cmd_transform(&mut cfg, a, argv, cli.global.seed, started),
        Command::Evaluate(a) => cmd_evaluate(&mut cfg, a, argv, cli.global.seed, started),
        Command::Sweep(a) => cmd_sweep(&mut cfg, a, argv, cli.global.seed, started),
        Command::Saturate(a) => cmd_saturate(&mut cfg, a, argv, cli.global.seed, started),
        Command::Analyze(a) => cmd_analyze(&cfg, a, argv, cli.global.seed, started),
    }
}

fn make_client(cfg: &RunConfig, args: &ClientArgs) -> anyhow::Result<Box<dyn ChatClient>> {
    match &args.mock {
        Some(path) => Ok(Box::new(ScriptedClient::from_file(path).with_context(|| format!("loading mock {}", path.display()))?)),
        None => Ok(Box::new(OpenAiCompatClient::from_env(cfg.client.clone())?)),
    }
}

fn load_problems(path: &Path, schema: SchemaArg) -> anyhow::Result<Vec<Problem>> {
    load_benchmark(path, schema.into()).with_context(|| format!("loading benchmark {}", path.display()))
}

fn load_ranked(path: &Path) -> anyhow::Result<Vec<RankedEntry>> {
    load_ranked_benchmark(path).with_context(|| format!("loading ranked benchmark {}", path.display()))
}

pub fn cmd_transform(cfg: &mut RunConfig, a: &TransformArgs, argv: &[String], seed: u64, started: String) -> anyhow::Result<String> {
    if let Some(k) = a.k {
        cfg.selection.k = k;
    }
    if let Some(r) = a.max_rounds {
        cfg.selection.max_rounds = r;
    }
    if a.drop_deficits {
        cfg.selection.on_deficit = DeficitPolicy::Drop;
    }
    if a.literal_targets {
        cfg.selection.target_rule = TargetRule::Literal;
    }
    cfg.selection.ignore_timing |= a.ignore_timing;

    let problems = load_problems(&a.input, a.schema)?;
    let client = make_client(cfg, &a.client)?;
    let sandbox = Sandbox::new(cfg.exec.clone())?;
    let out = transform_benchmark(&problems, client.as_ref(), &cfg.generation, &sandbox, &cfg.selection)?;

    let mut dir = RunDir::create(&a.out)?;
    dir.jsonl("ranked.jsonl", &out.entries)?;
    dir.jsonl("deficits.jsonl", &out.deficits)?;
    dir.jsonl("generations.jsonl", &out.log)?;
    match compute_stats(&out.entries) {
        Ok(stats) => dir.json("stats.json", &stats)?,
        Err(e) => tracing::warn!(error = %e, "no statistics for an empty ranked benchmark"),
    }
    dir.finish("transform", argv, cfg, seed, started)?;
    Ok(format!("{} ranked entries, {} deficit reports\n", out.entries.len(), out.deficits.len()))
}

fn predefined_suites(problems: &[Problem]) -> BTreeMap<String, Vec<String>> {
    problems.iter().map(|p| (p.task_id.clone(), p.predefined_tests.clone())).collect()
}

#[derive(Serialize)]
struct Report<'a> {
    label: &'a str,
    verifier_kind: rankbench_core::VerifierKind,
    #[serde(flatten)]
    metrics: &'a rankbench_core::MetricsReport,
}

fn write_evaluation(dir: &mut RunDir, prefix: &str, out: &EvaluationOutput) -> anyhow::Result<()> {
    dir.jsonl(&format!("{prefix}estimates.jsonl"), &out.estimates)?;
    dir.jsonl(&format!("{prefix}failures.jsonl"), &out.failures)?;
    if !out.suites.is_empty() {
        dir.jsonl(&format!("{prefix}suites.jsonl"), &out.suites)?;
    }
    if !out.rewards.is_empty() {
        #[derive(Serialize)]
        struct Row<'a> {
            task_id: &'a str,
            #[serde(flatten)]
            assessment: &'a rankbench_core::verifier::RewardAssessment,
        }
        let rows: Vec<Row<'_>> = out.rewards.iter().map(|(t, a)| Row { task_id: t, assessment: a }).collect();
        dir.jsonl(&format!("{prefix}rewards.jsonl"), &rows)?;
    }
    Ok(())
}

fn prepare_verifier(cfg: &mut RunConfig, v: &VerifierArgs, seed: u64) {
    if v.with_solution {
        cfg.testgen.with_solution = true;
    }
    if v.pooled_mae {
        cfg.mae_mode = MaeMode::Pooled;
    }
    cfg.testgen.seed.get_or_insert(seed);
}

/// Inputs a verifier borrows from; kept alive by the caller.
struct VerifierInputs {
    client: Option<Box<dyn ChatClient>>,
    suites: BTreeMap<String, Vec<String>>,
}

impl VerifierInputs {
    fn load(cfg: &RunConfig, v: &VerifierArgs) -> anyhow::Result<Self> {
        match v.verifier {
            VerifierArg::Predefined => {
                let Some(path) = &v.problems else { bail!("--verifier predefined needs --problems") };
                Ok(VerifierInputs { client: None, suites: predefined_suites(&load_problems(path, v.schema)?) })
            }
            _ => Ok(VerifierInputs { client: Some(make_client(cfg, &v.client)?), suites: BTreeMap::new() }),
        }
    }

    fn verifier<'a>(&'a self, cfg: &RunConfig, kind: VerifierArg) -> Verifier<'a> {
        match kind {
            VerifierArg::Predefined => Verifier::FixedSuites { suites: &self.suites },
            VerifierArg::GeneratedTests => Verifier::GeneratedTests {
                client: self.client.as_deref().expect("client loaded"),
                settings: cfg.testgen.clone(),
            },
            VerifierArg::RewardModel => Verifier::RewardModel {
                client: self.client.as_deref().expect("client loaded"),
                settings: cfg.reward.clone(),
            },
        }
    }
}

fn default_label(kind: VerifierArg, client: Option<&dyn ChatClient>) -> String {
    let base = match kind {
        VerifierArg::Predefined => "predefined",
        VerifierArg::GeneratedTests => "generated_tests",
        VerifierArg::RewardModel => "reward_model",
    };
    match client {
        Some(c) if !c.name().is_empty() => format!("{base}:{}", c.name()),
        _ => base.to_string(),
    }
}

pub fn cmd_evaluate(cfg: &mut RunConfig, a: &EvaluateArgs, argv: &[String], seed: u64, started: String) -> anyhow::Result<String> {
    if let Some(n) = a.tests {
        cfg.testgen.count = n;
    }
    prepare_verifier(cfg, &a.verifier, seed);
    let ranked = load_ranked(&a.ranked)?;
    let inputs = VerifierInputs::load(cfg, &a.verifier)?;
    let verifier = inputs.verifier(cfg, a.verifier.verifier);
    let sandbox = Sandbox::new(cfg.exec.clone())?;
    let out = evaluate_verifier(&ranked, &verifier, &sandbox)?;

    let mut dir = RunDir::create(&a.out)?;
    write_evaluation(&mut dir, "", &out)?;
    let label = a.label.clone().unwrap_or_else(|| default_label(a.verifier.verifier, inputs.client.as_deref()));
    let (report, per_problem) = aggregate(&out.estimates, cfg.mae_mode)?;
    dir.jsonl("per_problem.jsonl", &per_problem)?;
    dir.json("report.json", &Report { label: &label, verifier_kind: verifier.kind(), metrics: &report })?;
    let table = render_table(&[(label, report)]);
    dir.text("report.txt", &table)?;
    if !out.failures.is_empty() {
        tracing::warn!(count = out.failures.len(), "problems with verifier failures; see failures.jsonl");
    }
    dir.finish("evaluate", argv, cfg, seed, started)?;
    Ok(table)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a rankbench_core::MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cmd_sweep(cfg: &mut RunConfig, a: &SweepArgs, argv: &[String], seed: u64, started: String) -> anyhow::Result<String> {
    if a.counts.is_empty() || a.counts.contains(&0) {
        bail!("--counts must list positive integers");
    }
    prepare_verifier(cfg, &a.verifier, seed);
    let ranked = load_ranked(&a.ranked)?;
    let inputs = VerifierInputs::load(cfg, &a.verifier)?;
    let verifier = inputs.verifier(cfg, a.verifier.verifier);
    let sandbox = Sandbox::new(cfg.exec.clone())?;
    let points = scaling_sweep(&ranked, &verifier, &sandbox, &a.counts, cfg.mae_mode)?;

    let mut dir = RunDir::create(&a.out)?;
    let mut csv = String::from("count,top1,spearman,bottom1,mae,n_problems,n_excluded\n");
    let mut rows = Vec::new();
    for (count, point) in &points {
        write_evaluation(&mut dir, &format!("count_{count}/"), &point.output)?;
        match &point.report {
            Ok(r) => {
                csv.push_str(&format!("{count},{},{},{},{},{},{}\n", r.top1, r.spearman, r.bottom1, r.mae, r.n_problems, r.n_excluded));
                rows.push(SweepRow { count: *count, report: Some(r), error: None });
            }
            Err(e) => {
                csv.push_str(&format!("{count},,,,,0,{}\n", point.output.estimates.len()));
                rows.push(SweepRow { count: *count, report: None, error: Some(e.to_string()) });
            }
        }
    }
    dir.json("sweep.json", &rows)?;
    dir.text("sweep.csv", &csv)?;
    dir.finish("sweep", argv, cfg, seed, started)?;
    Ok(csv)
}

pub fn cmd_saturate(cfg: &mut RunConfig, a: &SaturateArgs, argv: &[String], seed: u64, started: String) -> anyhow::Result<String> {
    if let Some(r) = a.reps {
        cfg.saturation.reps = r;
    }
    if let Some(k) = a.k_max {
        cfg.saturation.k_max = Some(k);
    }
    if let Some(i) = a.interval {
        cfg.saturation.interval = match i {
            IntervalArg::Percentile => IntervalMethod::Percentile,
            IntervalArg::MeanNormal => IntervalMethod::MeanNormal,
        };
    }
    let ranked = load_ranked(&a.ranked)?;
    let matrices: Vec<OutcomeMatrix> = match (&a.matrices, &a.problems) {
        (Some(path), _) => read_jsonl(path).with_context(|| format!("loading matrices {}", path.display()))?,
        (None, Some(path)) => {
            let suites = predefined_suites(&load_problems(path, a.schema)?);
            let sandbox = Sandbox::new(cfg.exec.clone())?;
            let mut out = Vec::new();
            for entry in &ranked {
                match suites.get(&entry.task_id) {
                    Some(tests) if !tests.is_empty() => out.push(build_outcome_matrix(entry, tests, &sandbox)?),
                    _ => tracing::warn!(task_id = %entry.task_id, "no predefined tests; skipping"),
                }
            }
            out
        }
        (None, None) => bail!("saturate needs --problems or --matrices"),
    };
    let k_max = cfg
        .saturation
        .k_max
        .unwrap_or_else(|| matrices.iter().map(OutcomeMatrix::test_count).max().unwrap_or(1));
    let params = SaturationParams { k_max, reps: cfg.saturation.reps, seed, interval: cfg.saturation.interval };
    let rows = saturation_analysis(&matrices, &params)?;

    let mut dir = RunDir::create(&a.out)?;
    if a.matrices.is_none() {
        dir.jsonl("matrices.jsonl", &matrices)?;
    }
    dir.json("saturation.json", &rows)?;
    let mut csv = String::from("k,rho_mean,rho_ci_low,rho_ci_high,rho_std,capped\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.k, r.rho_mean, r.rho_ci_low, r.rho_ci_high, r.rho_std, r.capped));
    }
    dir.text("saturation.csv", &csv)?;
    dir.finish("saturate", argv, cfg, seed, started)?;
    Ok(csv)
}

pub fn cmd_analyze(cfg: &RunConfig, a: &AnalyzeArgs, argv: &[String], seed: u64, started: String) -> anyhow::Result<String> {
    let ranked = load_ranked(&a.ranked)?;
    let mut histograms = vec![
        analysis::solutions_per_problem(&ranked),
        analysis::score_distribution(&ranked),
        analysis::score_range(&ranked),
    ];
    if let Some(path) = &a.estimates {
        let estimates: Vec<VerifierEstimate> = read_jsonl(path).with_context(|| format!("loading estimates {}", path.display()))?;
        histograms.push(analysis::testgen_error_distribution(&estimates));
    }
    let mut dir = RunDir::create(&a.out)?;
    dir.json("stats.json", &compute_stats(&ranked)?)?;
    for h in &histograms {
        dir.json(&format!("histograms/{}.json", h.name), h)?;
        dir.text(&format!("histograms/{}.csv", h.name), &h.to_csv())?;
    }
    dir.finish("analyze", argv, cfg, seed, started)?;
    Ok(format!("{} histograms written\n", histograms.len()))
}
