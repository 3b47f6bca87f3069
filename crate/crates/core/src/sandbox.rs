//! Subprocess execution of (solution, test) pairs.
//!
//! Every pair runs in a fresh interpreter process driving the bundled runner
//! shim. The shim reads one JSON request on stdin and prints one JSON report as
//! the last line of stdout. Timeouts are enforced here by killing the process
//! group, since an in-interpreter timer cannot interrupt native loops.
//!
//! Isolation is process-level only: there is no namespace or seccomp jail, so
//! do not point this at code you would not run on the host yourself.

use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

/// Source of the runner shim spawned for every pair.
pub const RUNNER_SHIM: &str = include_str!("../shim/runner_shim.py");

/// `error_type` recorded when the shim's reply cannot be interpreted.
pub const HARNESS_PROTOCOL: &str = "harness_protocol";

/// `error_type` the shim reports for a failed assertion.
pub const ASSERTION_ERROR: &str = "AssertionError";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    AssertFail,
    Error,
    Timeout,
}

impl Status {
    /// Anything other than a pass or an assertion failure.
    pub fn is_non_assertion_failure(self) -> bool {
        matches!(self, Status::Error | Status::Timeout)
    }
}

/// Result of running one (solution, test) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: Status,
    #[serde(default)]
    pub error_type: Option<String>,
    /// In-process execution time reported by the shim, or the wall time at
    /// kill for timeouts.
    pub elapsed_ms: f64,
}

impl ExecutionOutcome {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    fn protocol_violation() -> Self {
        ExecutionOutcome {
            status: Status::Error,
            error_type: Some(HARNESS_PROTOCOL.to_string()),
            elapsed_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub timeout_ms: u64,
    pub max_workers: usize,
    /// Interpreter invocation, split on whitespace (e.g. `python3 -I`).
    pub runtime_command: String,
    /// Use an existing shim file instead of the bundled one.
    pub shim_path: Option<PathBuf>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            timeout_ms: 3000,
            max_workers: default_workers(),
            runtime_command: "python3".to_string(),
            shim_path: None,
        }
    }
}

fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl ExecConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.timeout_ms == 0 {
            return Err(ExecError::InvalidConfig("timeout_ms must be > 0".into()));
        }
        if self.max_workers == 0 {
            return Err(ExecError::InvalidConfig("max_workers must be >= 1".into()));
        }
        if self.runtime_command.split_whitespace().next().is_none() {
            return Err(ExecError::InvalidConfig("runtime_command is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("invalid execution config: {0}")]
    InvalidConfig(String),
    #[error("runtime `{0}` not found")]
    RuntimeMissing(String),
    #[error("failed to spawn runtime: {0}")]
    Spawn(#[source] io::Error),
    #[error("test suite is empty")]
    EmptySuite,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// One unit of work for [`Sandbox::run_batch`].
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub solution: &'a str,
    pub tests: &'a [String],
}

enum ShimFile {
    Bundled { _dir: tempfile::TempDir, path: PathBuf },
    External(PathBuf),
}

impl ShimFile {
    fn path(&self) -> &Path {
        match self {
            ShimFile::Bundled { path, .. } => path,
            ShimFile::External(path) => path,
        }
    }
}

/// Executes pairs with a bounded worker pool. Cheap to share across threads.
pub struct Sandbox {
    cfg: ExecConfig,
    program: String,
    args: Vec<String>,
    shim: ShimFile,
    pool: rayon::ThreadPool,
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox")
            .field("cfg", &self.cfg)
            .field("shim", &self.shim.path())
            .finish()
    }
}

impl Sandbox {
    pub fn new(cfg: ExecConfig) -> Result<Self, ExecError> {
        cfg.validate()?;
        let mut parts = cfg.runtime_command.split_whitespace().map(str::to_string);
        let program = parts.next().expect("validated non-empty");
        let args = parts.collect();

        let shim = match &cfg.shim_path {
            // absolute, since every run uses its own working directory
            Some(path) => ShimFile::External(std::fs::canonicalize(path)?),
            None => {
                let dir = tempfile::Builder::new().prefix("rankbench-shim").tempdir()?;
                let path = dir.path().join("runner_shim.py");
                std::fs::write(&path, RUNNER_SHIM)?;
                ShimFile::Bundled { _dir: dir, path }
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.max_workers)
            .thread_name(|i| format!("rankbench-exec-{i}"))
            .build()
            .map_err(|e| ExecError::InvalidConfig(e.to_string()))?;

        Ok(Sandbox {
            cfg,
            program,
            args,
            shim,
            pool,
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ExecConfig {
        &self.cfg
    }

    /// Highest number of simultaneously alive subprocesses seen so far.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn execute_test(&self, solution_code: &str, test: &str) -> Result<ExecutionOutcome, ExecError> {
        let request = serde_json::json!({ "solution_code": solution_code, "test": test });
        let payload = serde_json::to_vec(&request).expect("json of strings");

        let workdir = tempfile::Builder::new().prefix("rankbench-run").tempdir()?;
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .arg(self.shim.path())
            .current_dir(workdir.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ExecError::RuntimeMissing(self.program.clone()),
            _ => ExecError::Spawn(e),
        })?;
        let _guard = LiveGuard::enter(&self.live, &self.peak);

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // A broken pipe only means the child exited early; the report
            // (or its absence) tells the rest.
            let _ = stdin.write_all(&payload);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });

        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let waited = child.wait_timeout(timeout)?;
        let outcome = match waited {
            Some(status) => {
                kill_group(&mut child);
                let _ = writer.join();
                let out = reader.join().unwrap_or_default();
                if status.code() == Some(0) {
                    parse_report(&out)
                } else {
                    ExecutionOutcome::protocol_violation()
                }
            }
            None => {
                kill_group(&mut child);
                let _ = child.wait();
                let _ = writer.join();
                let _ = reader.join();
                let wall = started.elapsed().as_secs_f64() * 1000.0;
                ExecutionOutcome {
                    status: Status::Timeout,
                    error_type: None,
                    elapsed_ms: wall.max(self.cfg.timeout_ms as f64),
                }
            }
        };
        Ok(outcome)
    }

    /// One outcome per test, order-aligned, each test in its own process.
    pub fn execute_suite(&self, solution_code: &str, tests: &[String]) -> Result<Vec<ExecutionOutcome>, ExecError> {
        let mut out = self.run_batch(&[Job { solution: solution_code, tests }])?;
        Ok(out.pop().unwrap_or_default())
    }

    /// Runs every (solution, test) pair of every job on the worker pool.
    ///
    /// Results are grouped per job in input order regardless of completion
    /// order; at most `max_workers` subprocesses are alive at once.
    pub fn run_batch(&self, jobs: &[Job<'_>]) -> Result<Vec<Vec<ExecutionOutcome>>, ExecError> {
        if jobs.iter().any(|j| j.tests.is_empty()) {
            return Err(ExecError::EmptySuite);
        }
        let pairs: Vec<(&str, &str)> = jobs
            .iter()
            .flat_map(|j| j.tests.iter().map(move |t| (j.solution, t.as_str())))
            .collect();
        let flat: Vec<ExecutionOutcome> = self.pool.install(|| {
            pairs
                .par_iter()
                .with_max_len(1)
                .map(|(solution, test)| self.execute_test(solution, test))
                .collect::<Result<_, _>>()
        })?;

        let mut flat = flat.into_iter();
        Ok(jobs
            .iter()
            .map(|j| flat.by_ref().take(j.tests.len()).collect())
            .collect())
    }
}

struct LiveGuard<'a> {
    live: &'a AtomicUsize,
}

impl<'a> LiveGuard<'a> {
    fn enter(live: &'a AtomicUsize, peak: &AtomicUsize) -> Self {
        let now = live.fetch_add(1, Ordering::SeqCst) + 1;
        peak.fetch_max(now, Ordering::SeqCst);
        LiveGuard { live }
    }
}

impl Drop for LiveGuard<'_> {
    fn drop(&mut self) {
        self.live.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Kills the child's whole process group so stray grandchildren cannot keep
/// the stdout pipe open.
fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    unsafe {
        // process_group(0) made the child a group leader with pgid == pid.
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[derive(Deserialize)]
struct ShimReport {
    status: Status,
    #[serde(default)]
    error_type: Option<String>,
    elapsed_ms: f64,
}

fn parse_report(stdout: &[u8]) -> ExecutionOutcome {
    let text = String::from_utf8_lossy(stdout);
    let Some(line) = text.lines().rev().find(|l| !l.trim().is_empty()) else {
        return ExecutionOutcome::protocol_violation();
    };
    match serde_json::from_str::<ShimReport>(line) {
        Ok(r) if r.status != Status::Timeout && r.elapsed_ms >= 0.0 && r.elapsed_ms.is_finite() => {
            let error_type = match r.status {
                Status::Pass => None,
                Status::AssertFail => Some(ASSERTION_ERROR.to_string()),
                _ => r.error_type,
            };
            ExecutionOutcome { status: r.status, error_type, elapsed_ms: r.elapsed_ms }
        }
        _ => ExecutionOutcome::protocol_violation(),
    }
}
