//! Acceptance runner: one PASS/FAIL/SKIP line per criterion, nonzero exit if
//! any criterion fails. Each check carries its own time limit.

// `ensure!(a < b)` must fail on NaN, which the negated form gives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankbench_cli::{run, Cli};
use rankbench_core::benchmark::{compute_stats, load_benchmark, load_ranked_benchmark};
use rankbench_core::metrics::saturation::{build_outcome_matrix, saturation_analysis, SaturationParams};
use rankbench_core::metrics::{bottom1, spearman, top1};
use rankbench_core::ranking::{filter_trivial_failures, minimum_score, score_solution, select_solutions, selection_targets};
use rankbench_core::sandbox::{ExecConfig, ExecutionOutcome, Status};
use rankbench_core::{Problem, Sandbox, Schema, ScoredSolution, SelectionParams, TargetRule};

const TIMEOUT_MS: u64 = 3000;
const SLACK_MS: u64 = 500;

enum Verdict {
    Pass(String),
    Skip(String),
}

type Check = fn() -> Result<Verdict, String>;

fn main() {
    let criteria: [(&str, Duration, Check); 8] = [
        ("selection quantiles", Duration::from_secs(1), selection_quantiles),
        ("selection math table", Duration::from_secs(1), selection_math_table),
        ("metrics oracle equivalence", Duration::from_secs(10), metrics_oracle_equivalence),
        ("end-to-end golden run", Duration::from_secs(60), golden_run),
        ("timeout and filter behavior", Duration::from_millis(TIMEOUT_MS + SLACK_MS + 2000), timeout_and_filter),
        ("saturation coherence", Duration::from_secs(30), saturation_coherence),
        ("determinism", Duration::from_secs(120), determinism),
        ("benchmark statistics (data-conditional)", Duration::from_secs(60), released_statistics),
    ];
    // a panicking check is reported as a failure, not as a second message
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let line = match result {
            Ok(Verdict::Pass(_)) if elapsed > limit => {
                failed += 1;
                format!("FAIL  {name}: took {elapsed:.2?}, limit {limit:.2?}")
            }
            Ok(Verdict::Pass(detail)) => format!("PASS  {name} ({elapsed:.2?}): {detail}"),
            Ok(Verdict::Skip(why)) => format!("SKIP  {name}: {why}"),
            Err(why) => {
                failed += 1;
                format!("FAIL  {name}: {why}")
            }
        };
        println!("acceptance: {line}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden").join(name)
}

fn pool_member(score: f64, order: usize) -> ScoredSolution {
    let outcome = ExecutionOutcome { status: Status::AssertFail, error_type: Some("AssertionError".into()), elapsed_ms: 1.0 };
    let mut s = ScoredSolution::from_outcomes(format!("# {order}"), vec![outcome], order);
    s.score = score;
    s
}

fn selection_quantiles() -> Result<Verdict, String> {
    let quantiles = [1.0, 0.75, 0.5, 0.25, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let params = SelectionParams { k: 5, ..Default::default() };
    for trial in 0..200 {
        // distractors avoid (0, 0.1), which would move the minimum score
        let mut scores: Vec<f64> = quantiles.to_vec();
        for _ in 0..rng.random_range(0..12) {
            let d = (rng.random_range(10..100) as f64) / 100.0;
            if !scores.contains(&d) {
                scores.push(d);
            }
        }
        scores.shuffle(&mut rng);
        let pool: Vec<ScoredSolution> = scores.iter().enumerate().map(|(i, &s)| pool_member(s, i)).collect();
        let got: Vec<f64> = select_solutions(pool, &params).map_err(|e| e.to_string())?.iter().map(|s| s.score).collect();
        ensure!(got == quantiles, "trial {trial}: pool {scores:?} selected {got:?}");
    }
    Ok(Verdict::Pass("200 pools select {1.0, 0.75, 0.5, 0.25, 0.0}".into()))
}

fn selection_math_table() -> Result<Verdict, String> {
    let cases: [(&[f64], f64); 3] = [(&[1.0, 0.6, 0.3, 0.05, 0.0], 0.05), (&[1.0, 0.5, 0.2], 0.2), (&[1.0, 0.0], 0.0)];
    for (scores, m) in cases {
        let got = minimum_score(scores).map_err(|e| e.to_string())?;
        ensure!(got == m, "minimum_score({scores:?}) = {got}, want {m}");
    }
    ensure!(selection_targets(5, 0.0, TargetRule::Reconciled) == vec![0.75, 0.5, 0.25], "k'=5 targets");
    ensure!(selection_targets(3, 0.0, TargetRule::Reconciled) == vec![0.5], "k'=3 targets");
    let pool = vec![pool_member(1.0, 0), pool_member(0.4, 1), pool_member(0.0, 2)];
    let got: Vec<f64> = select_solutions(pool, &SelectionParams { k: 5, ..Default::default() })
        .map_err(|e| e.to_string())?
        .iter()
        .map(|s| s.score)
        .collect();
    ensure!(got == vec![1.0, 0.4, 0.0], "k'=3 selection {got:?}");
    ensure!(select_solutions(vec![pool_member(1.0, 0)], &SelectionParams::default()).is_err(), "single-member pool accepted");
    Ok(Verdict::Pass("3 minimum-score rows, k'=5 and k'=3 targets, k'=3 selection".into()))
}

fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| v.iter().filter(|&&y| y < x).count() as f64 + (v.iter().filter(|&&y| y == x).count() as f64 + 1.0) / 2.0)
        .collect()
}

fn oracle_spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (counting_ranks(a), counting_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let sxy: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sxx: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let syy: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Every vector over {0..n-1} whose values form a contiguous block from 0:
/// one representative per weak ordering of n items.
fn weak_orderings(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let total = n.pow(n as u32);
    for code in 0..total {
        let v: Vec<usize> = (0..n).map(|i| code / n.pow(i as u32) % n).collect();
        let max = *v.iter().max().unwrap();
        if (0..=max).all(|x| v.contains(&x)) {
            out.push(v.into_iter().map(|x| x as f64).collect());
        }
    }
    out
}

/// For each item, the share of tie-breaking orders under which it is the
/// pick for the highest (`sign` = 1) or lowest (`sign` = -1) estimate.
fn pick_shares(estimated: &[f64], perms: &[Vec<usize>], sign: f64) -> Vec<f64> {
    let mut shares = vec![0.0; estimated.len()];
    for perm in perms {
        // the first item in the permutation with the extreme value wins the tie
        let best = perm.iter().copied().reduce(|a, b| if sign * estimated[b] > sign * estimated[a] { b } else { a }).unwrap();
        shares[best] += 1.0 / perms.len() as f64;
    }
    shares
}

fn metrics_oracle_equivalence() -> Result<Verdict, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| if rng.random_bool(0.3) { (rng.random_range(0..3) as f64) / 2.0 } else { rng.random::<f64>() }).collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let (a, b) = (draw(&mut rng, n), draw(&mut rng, n));
        let diff = (spearman(&a, &b).map_err(|e| e.to_string())? - oracle_spearman(&a, &b)).abs();
        worst = worst.max(diff);
        ensure!(diff < 1e-9, "spearman {a:?} vs {b:?} differs by {diff}");
    }

    let mut configs = 0usize;
    for n in 1..=5 {
        let perms = permutations(n);
        let orders = weak_orderings(n);
        for est in &orders {
            let top_shares = pick_shares(est, &perms, 1.0);
            let bottom_shares = pick_shares(est, &perms, -1.0);
            for exp in &orders {
                let best = exp.iter().cloned().fold(f64::MIN, f64::max);
                let worst_v = exp.iter().cloned().fold(f64::MAX, f64::min);
                let want_top: f64 = (0..n).filter(|&i| exp[i] == best).map(|i| top_shares[i]).sum();
                let want_bottom: f64 = (0..n).filter(|&i| exp[i] == worst_v).map(|i| bottom_shares[i]).sum();
                let got_top = top1(exp, est).map_err(|e| e.to_string())?;
                let got_bottom = bottom1(exp, est).map_err(|e| e.to_string())?;
                ensure!((got_top - want_top).abs() < 1e-9, "top1 exp={exp:?} est={est:?}: {got_top} vs {want_top}");
                ensure!((got_bottom - want_bottom).abs() < 1e-9, "bottom1 exp={exp:?} est={est:?}: {got_bottom} vs {want_bottom}");
                configs += 1;
            }
        }
    }
    Ok(Verdict::Pass(format!("1000 spearman vectors (max diff {worst:.1e}); top1/bottom1 on {configs} tie configurations")))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["rankbench".to_string()];
    argv.extend(args.iter().map(|a| a.to_string()));
    let parsed = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    run(&parsed, &argv).map(drop).map_err(|e| format!("{e:#}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn transform_golden(out: &Path) -> Result<(), String> {
    cli(&[
        "transform",
        "--input",
        p(&golden("problems.jsonl")),
        "--mock",
        p(&golden("mock_generate.json")),
        "--k",
        "4",
        "--ignore-timing",
        "--out",
        p(out),
    ])
}

fn golden_run() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_dir = dir.path().join("transform");
    transform_golden(&run_dir)?;
    let problems: Vec<Problem> = load_benchmark(&golden("problems.jsonl"), Schema::Generic).map_err(|e| e.to_string())?;
    let ranked = load_ranked_benchmark(&run_dir.join("ranked.jsonl")).map_err(|e| e.to_string())?;
    ensure!(ranked.len() == 5, "{} entries", ranked.len());

    // engineered solutions: canonical, then mock responses 0, 1 and 5
    let mock: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden("mock_generate.json")).unwrap()).unwrap();
    let code_of = |resp: &str| resp.split("```python\n").nth(1).and_then(|r| r.split("\n```").next()).unwrap().to_string();
    for (entry, problem) in ranked.iter().zip(&problems) {
        let responses = &mock["completions"][&entry.task_id];
        let want_code = vec![
            problem.canonical_solution.clone().unwrap(),
            code_of(responses[0].as_str().unwrap()),
            code_of(responses[1].as_str().unwrap()),
            code_of(responses[5].as_str().unwrap()),
        ];
        let got_code: Vec<String> = entry.solutions.iter().map(|s| s.code.clone()).collect();
        ensure!(got_code == want_code, "{}: unexpected solutions", entry.task_id);
        ensure!(entry.scores() == vec![1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0], "{}: scores {:?}", entry.task_id, entry.scores());
        ensure!(entry.solutions.iter().map(|s| s.rank).eq(1..=4), "{}: ranks", entry.task_id);
    }
    let deficits = std::fs::read_to_string(run_dir.join("deficits.jsonl")).unwrap();
    ensure!(deficits.is_empty(), "deficits: {deficits}");

    let eval = dir.path().join("evaluate");
    cli(&[
        "evaluate",
        "--ranked",
        p(&run_dir.join("ranked.jsonl")),
        "--verifier",
        "predefined",
        "--problems",
        p(&golden("problems.jsonl")),
        "--out",
        p(&eval),
    ])?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    let row = ["top1", "spearman", "bottom1", "mae"].map(|k| report[k].as_f64().unwrap());
    ensure!(row == [100.0, 1.0, 100.0, 0.0], "report row {row:?}");
    Ok(Verdict::Pass("5 entries with scores (1, 2/3, 1/3, 0); predefined verifier row (100, 1, 100, 0)".into()))
}

fn timeout_and_filter() -> Result<Verdict, String> {
    let sb = Sandbox::new(ExecConfig { timeout_ms: TIMEOUT_MS, max_workers: 2, ..ExecConfig::default() }).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let spin = sb.execute_test("def f():\n    while True:\n        pass\n", "assert f()").map_err(|e| e.to_string())?;
    let wall = start.elapsed().as_millis() as u64;
    ensure!(spin.status == Status::Timeout, "infinite loop classified {:?}", spin.status);
    ensure!(wall <= TIMEOUT_MS + SLACK_MS, "timeout took {wall} ms");

    let problem = Problem {
        task_id: "t".into(),
        question: "def f(x):".into(),
        canonical_solution: None,
        predefined_tests: vec!["assert f(1) == 1".into(), "assert f(2) == 2".into()],
        entry_point: Some("f".into()),
    };
    let mut syntax = score_solution("def f(x) return x", &problem, &sb).map_err(|e| e.to_string())?;
    syntax.order = 0;
    let mut wrong = score_solution("def f(x):\n    return -x", &problem, &sb).map_err(|e| e.to_string())?;
    wrong.order = 1;
    ensure!(syntax.score == 0.0 && wrong.score == 0.0, "scores {} {}", syntax.score, wrong.score);
    let kept = filter_trivial_failures(vec![syntax, wrong]);
    ensure!(kept.len() == 1 && kept[0].order == 1, "filter kept {:?}", kept.iter().map(|s| s.order).collect::<Vec<_>>());
    Ok(Verdict::Pass(format!("loop killed after {wall} ms; syntax-error solution removed, assert-fail solution kept")))
}

fn saturation_coherence() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    transform_golden(dir.path())?;
    let problems: Vec<Problem> = load_benchmark(&golden("problems.jsonl"), Schema::Generic).map_err(|e| e.to_string())?;
    let tests: BTreeMap<&str, &Vec<String>> = problems.iter().map(|p| (p.task_id.as_str(), &p.predefined_tests)).collect();
    let ranked = load_ranked_benchmark(&dir.path().join("ranked.jsonl")).map_err(|e| e.to_string())?;
    let sb = Sandbox::new(ExecConfig::default()).map_err(|e| e.to_string())?;
    let matrices = ranked
        .iter()
        .map(|e| build_outcome_matrix(e, tests[e.task_id.as_str()], &sb))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let rows = saturation_analysis(&matrices, &SaturationParams { k_max: 3, reps: 1000, seed: 0, ..Default::default() }).map_err(|e| e.to_string())?;
    for w in rows.windows(2) {
        ensure!(w[1].rho_mean >= w[0].rho_mean - 0.01, "rho_mean drops from k={} to k={}", w[0].k, w[1].k);
    }
    for r in &rows {
        ensure!(r.rho_ci_low <= r.rho_mean && r.rho_mean <= r.rho_ci_high, "k={} interval does not bracket the mean", r.k);
    }
    let last = rows.last().unwrap();
    ensure!(last.rho_mean == 1.0 && last.rho_std == 0.0, "full-suite row {last:?}");
    let means: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.rho_mean)).collect();
    Ok(Verdict::Pass(format!("rho_mean by k = [{}]", means.join(", "))))
}

fn determinism() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for run_dir in &runs {
        transform_golden(&run_dir.join("transform"))?;
        let ranked = run_dir.join("transform/ranked.jsonl");
        cli(&["--seed", "7", "evaluate", "--ranked", p(&ranked), "--mock", p(&golden("mock_testgen.json")), "--out", p(&run_dir.join("generated"))])?;
        cli(&["evaluate", "--ranked", p(&ranked), "--verifier", "reward-model", "--mock", p(&golden("mock_reward.json")), "--out", p(&run_dir.join("reward"))])?;
        cli(&["--seed", "7", "saturate", "--ranked", p(&ranked), "--problems", p(&golden("problems.jsonl")), "--reps", "100", "--out", p(&run_dir.join("saturate"))])?;
    }
    let files = [
        "transform/ranked.jsonl",
        "transform/deficits.jsonl",
        "transform/generations.jsonl",
        "transform/stats.json",
        "generated/suites.jsonl",
        "generated/estimates.jsonl",
        "generated/per_problem.jsonl",
        "generated/report.json",
        "generated/report.txt",
        "reward/estimates.jsonl",
        "reward/report.json",
        "saturate/saturation.json",
        "saturate/matrices.jsonl",
    ];
    for f in files {
        let a = std::fs::read(runs[0].join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(runs[1].join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(a == b, "{f} differs between runs");
        compared += 1;
    }
    Ok(Verdict::Pass(format!("{compared} output files byte-identical across two runs")))
}

fn released_statistics() -> Result<Verdict, String> {
    // (env var, problems, avg tests, solutions, avg score)
    let table = [("RANKBENCH_HE_R_PLUS", 164, 764.1, 820, 0.50), ("RANKBENCH_MBPP_R", 974, 3.0, 3249, 0.50)];
    let mut checked = Vec::new();
    for (var, problems, tests, solutions, score) in table {
        let Ok(path) = std::env::var(var) else { continue };
        let ranked = load_ranked_benchmark(Path::new(&path)).map_err(|e| format!("{var}: {e}"))?;
        let stats = compute_stats(&ranked).map_err(|e| e.to_string())?;
        ensure!(stats.problem_count == problems, "{var}: {} problems", stats.problem_count);
        ensure!(format!("{:.1}", stats.avg_tests) == format!("{tests:.1}"), "{var}: avg tests {:.2}", stats.avg_tests);
        ensure!(stats.solution_count == solutions, "{var}: {} solutions", stats.solution_count);
        ensure!(format!("{:.2}", stats.avg_solution_score) == format!("{score:.2}"), "{var}: avg score {:.3}", stats.avg_solution_score);
        checked.push(var);
    }
    if checked.is_empty() {
        return Ok(Verdict::Skip("set RANKBENCH_HE_R_PLUS and/or RANKBENCH_MBPP_R to ranked JSONL files".into()));
    }
    Ok(Verdict::Pass(format!("statistics match for {}", checked.join(", "))))
}
