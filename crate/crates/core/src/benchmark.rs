//! Source and ranked benchmark files (JSON Lines, UTF-8).
//!
//! Source benchmarks are read in one of three layouts:
//!
//! * `humaneval`: `task_id`, `prompt`, `canonical_solution`, `test` (a
//!   `check(candidate)` function), `entry_point`
//! * `mbpp`: `task_id` (string or integer), `text`, `code`, `test_list`,
//!   optional `test_setup_code` / `test_imports`
//! * `generic`: the [`Problem`] fields verbatim
//!
//! Ranked benchmarks have a single layout, [`RankedEntry`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid entry `{task_id}`: {message}")]
    Invalid { task_id: String, message: String },
    #[error("duplicate task_id `{0}`")]
    DuplicateTaskId(String),
    #[error("cannot compute statistics of an empty benchmark")]
    Empty,
    #[error("unknown schema `{0}` (expected humaneval, mbpp or generic)")]
    UnknownSchema(String),
}

type Result<T> = std::result::Result<T, BenchmarkError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub task_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
    #[serde(default)]
    pub predefined_tests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    HumanEval,
    Mbpp,
    Generic,
}

impl FromStr for Schema {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "humaneval" => Ok(Schema::HumanEval),
            "mbpp" => Ok(Schema::Mbpp),
            "generic" => Ok(Schema::Generic),
            other => Err(BenchmarkError::UnknownSchema(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSolution {
    pub code: String,
    pub score: f64,
    pub rank: usize,
    pub mean_exec_ms: f64,
}

/// One row of a ranked benchmark: uniquely scored solutions, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub task_id: String,
    pub question: String,
    pub solutions: Vec<RankedSolution>,
    pub test_count: usize,
}

impl RankedEntry {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| BenchmarkError::Invalid { task_id: self.task_id.clone(), message };
        if self.task_id.is_empty() {
            return Err(fail("empty task_id".into()));
        }
        if self.solutions.len() < 2 {
            return Err(fail(format!("{} solutions, need at least 2", self.solutions.len())));
        }
        if self.solutions[0].score != 1.0 {
            return Err(fail(format!("first score is {}, expected 1.0", self.solutions[0].score)));
        }
        for (i, s) in self.solutions.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.score) {
                return Err(fail(format!("score {} out of [0, 1]", s.score)));
            }
            if s.rank != i + 1 {
                return Err(fail(format!("solution {} has rank {}", i + 1, s.rank)));
            }
            if s.mean_exec_ms.is_nan() || s.mean_exec_ms < 0.0 {
                return Err(fail(format!("negative mean_exec_ms {}", s.mean_exec_ms)));
            }
        }
        for w in self.solutions.windows(2) {
            if w[0].score == w[1].score {
                return Err(fail(format!("duplicate score {}", w[0].score)));
            }
            if w[0].score < w[1].score {
                return Err(fail("solutions not sorted by descending score".into()));
            }
        }
        Ok(())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.score).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub problem_count: usize,
    pub avg_tests: f64,
    pub solution_count: usize,
    pub avg_solution_score: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| BenchmarkError::Io { path: path.display().to_string(), source })
}

/// Non-blank lines with their 1-based line numbers, each parsed as JSON.
fn json_lines(path: &Path) -> Result<Vec<(usize, Value)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| BenchmarkError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| BenchmarkError::Parse { line: line_no, message: e.to_string() })?;
        if !value.is_object() {
            return Err(BenchmarkError::Parse { line: line_no, message: "expected a JSON object".into() });
        }
        out.push((line_no, value));
    }
    Ok(out)
}

pub fn load_benchmark(path: &Path, schema: Schema) -> Result<Vec<Problem>> {
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for (line, value) in json_lines(path)? {
        let problem = match schema {
            Schema::Generic => serde_json::from_value::<Problem>(value)
                .map_err(|e| BenchmarkError::Parse { line, message: e.to_string() })?,
            Schema::HumanEval => humaneval_problem(&value).map_err(|message| BenchmarkError::Parse { line, message })?,
            Schema::Mbpp => mbpp_problem(&value).map_err(|message| BenchmarkError::Parse { line, message })?,
        };
        if problem.task_id.is_empty() {
            return Err(BenchmarkError::Parse { line, message: "empty task_id".into() });
        }
        if problem.question.trim().is_empty() {
            return Err(BenchmarkError::Parse { line, message: "empty question".into() });
        }
        if !seen.insert(problem.task_id.clone()) {
            return Err(BenchmarkError::DuplicateTaskId(problem.task_id));
        }
        problems.push(problem);
    }
    Ok(problems)
}

fn str_field<'a>(value: &'a Value, key: &str) -> std::result::Result<&'a str, String> {
    value
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string field `{key}`"))
}

fn task_id_field(value: &Value) -> std::result::Result<String, String> {
    match value.get("task_id") {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err("missing field `task_id`".into()),
    }
}

fn humaneval_problem(value: &Value) -> std::result::Result<Problem, String> {
    let task_id = task_id_field(value)?;
    let prompt = str_field(value, "prompt")?;
    let test = str_field(value, "test")?;
    let entry_point = value.get("entry_point").and_then(Value::as_str).map(str::to_string);
    let canonical_solution = value
        .get("canonical_solution")
        .and_then(Value::as_str)
        .map(|body| format!("{prompt}{body}"));
    let predefined_tests = split_check_function(test, entry_point.as_deref());
    Ok(Problem { task_id, question: prompt.to_string(), canonical_solution, predefined_tests, entry_point })
}

fn mbpp_problem(value: &Value) -> std::result::Result<Problem, String> {
    let task_id = task_id_field(value)?;
    let text = value
        .get("text")
        .or_else(|| value.get("prompt"))
        .and_then(Value::as_str)
        .ok_or("missing string field `text`")?;
    let tests: Vec<String> = value
        .get("test_list")
        .and_then(Value::as_array)
        .ok_or("missing array field `test_list`")?
        .iter()
        .map(|t| t.as_str().map(str::to_string).ok_or("non-string entry in `test_list`"))
        .collect::<std::result::Result<_, _>>()?;

    let mut setup = String::new();
    if let Some(imports) = value.get("test_imports").and_then(Value::as_array) {
        for import in imports.iter().filter_map(Value::as_str) {
            setup.push_str(import);
            setup.push('\n');
        }
    }
    if let Some(code) = value.get("test_setup_code").and_then(Value::as_str) {
        if !code.trim().is_empty() {
            setup.push_str(code.trim_end());
            setup.push('\n');
        }
    }
    let predefined_tests = tests.iter().map(|t| format!("{setup}{t}")).collect();

    // The first test doubles as a signature example in the question, which is
    // how MBPP prompts are usually posed.
    let question = match tests.first() {
        Some(first) => format!("{text}\n{first}"),
        None => text.to_string(),
    };
    Ok(Problem {
        task_id,
        question,
        canonical_solution: value.get("code").and_then(Value::as_str).map(str::to_string),
        predefined_tests,
        entry_point: None,
    })
}

/// Splits a HumanEval-style test module into one test per top-level statement
/// of `check` that contains an `assert`.
///
/// Module-level code (imports, helpers) and non-assert statements of `check`
/// that precede a test are replayed as setup in front of it, and `candidate`
/// is bound to the entry point.
pub fn split_check_function(test_src: &str, entry_point: Option<&str>) -> Vec<String> {
    let lines: Vec<&str> = test_src.lines().collect();
    let Some(def_idx) = lines.iter().position(|l| l.trim_start().starts_with("def check(")) else {
        return Vec::new();
    };

    let module_setup: String = top_level_statements(&lines[..def_idx], 0)
        .into_iter()
        .filter(|stmt| !stmt.trim_start().starts_with("METADATA"))
        .map(|stmt| format!("{stmt}\n"))
        .collect();

    let def_indent = indent_of(lines[def_idx]);
    let body_end = lines[def_idx + 1..]
        .iter()
        .position(|l| !l.trim().is_empty() && indent_of(l) <= def_indent)
        .map(|p| def_idx + 1 + p)
        .unwrap_or(lines.len());
    let body = &lines[def_idx + 1..body_end];
    let Some(body_indent) = body.iter().find(|l| !l.trim().is_empty()).map(|l| indent_of(l)) else {
        return Vec::new();
    };

    let binding = entry_point.map(|e| format!("candidate = {e}\n")).unwrap_or_default();
    let mut local_setup = String::new();
    let mut tests = Vec::new();
    for stmt in top_level_statements(body, body_indent) {
        let dedented = dedent(&stmt, body_indent);
        if contains_assert(&dedented) {
            tests.push(format!("{module_setup}{binding}{local_setup}{dedented}"));
        } else {
            local_setup.push_str(&dedented);
            local_setup.push('\n');
        }
    }
    tests
}

fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start().len()
}

fn dedent(stmt: &str, by: usize) -> String {
    stmt.lines()
        .map(|l| if indent_of(l) >= by { &l[by..] } else { l.trim_start() })
        .collect::<Vec<_>>()
        .join("\n")
}

fn contains_assert(stmt: &str) -> bool {
    stmt.lines().any(|l| {
        let t = l.trim_start();
        t == "assert" || t.starts_with("assert ") || t.starts_with("assert(")
    })
}

/// Groups lines into statements that start at `indent`; deeper-indented lines
/// and lines inside open brackets continue the current statement.
fn top_level_statements(lines: &[&str], indent: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut depth: i64 = 0;
    let mut in_triple: Option<&str> = None;
    let mut backslash = false;
    for line in lines {
        let starts_new = depth == 0
            && in_triple.is_none()
            && !backslash
            && !line.trim().is_empty()
            && indent_of(line) <= indent
            && !line.trim_start().starts_with('#');
        let continues = !starts_new && !out.is_empty();
        if starts_new {
            out.push(line.to_string());
        } else if continues && !line.trim().is_empty() {
            let last = out.last_mut().expect("non-empty");
            last.push('\n');
            last.push_str(line);
        } else if continues {
            // blank lines inside a statement only matter in strings
            if in_triple.is_some() {
                let last = out.last_mut().expect("non-empty");
                last.push('\n');
            }
        }
        scan_brackets(line, &mut depth, &mut in_triple);
        backslash = in_triple.is_none() && line.trim_end().ends_with('\\');
    }
    // Trailing else/elif/except/finally belong to the preceding compound statement.
    let mut merged: Vec<String> = Vec::new();
    for stmt in out {
        let head = stmt.trim_start();
        let is_clause = ["else:", "elif ", "except", "finally:"].iter().any(|k| head.starts_with(k));
        match merged.last_mut() {
            Some(prev) if is_clause => {
                prev.push('\n');
                prev.push_str(&stmt);
            }
            _ => merged.push(stmt),
        }
    }
    merged
}

fn scan_brackets(line: &str, depth: &mut i64, in_triple: &mut Option<&'static str>) {
    let bytes = line.as_bytes();
    let mut i = 0;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        if let Some(delim) = *in_triple {
            if line[i..].starts_with(delim) {
                *in_triple = None;
                i += 3;
            } else {
                i += 1;
            }
            continue;
        }
        let c = bytes[i];
        if let Some(q) = quote {
            if c == b'\\' {
                i += 2;
                continue;
            }
            if c == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        match c {
            b'#' => break,
            b'"' | b'\'' => {
                if line[i..].starts_with("\"\"\"") {
                    *in_triple = Some("\"\"\"");
                    i += 3;
                    continue;
                }
                if line[i..].starts_with("'''") {
                    *in_triple = Some("'''");
                    i += 3;
                    continue;
                }
                quote = Some(c);
            }
            b'(' | b'[' | b'{' => *depth += 1,
            b')' | b']' | b'}' => *depth -= 1,
            _ => {}
        }
        i += 1;
    }
}

pub fn write_ranked_benchmark(entries: &[RankedEntry], path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for entry in entries {
        entry.validate()?;
        if !seen.insert(entry.task_id.as_str()) {
            return Err(BenchmarkError::DuplicateTaskId(entry.task_id.clone()));
        }
    }
    write_jsonl(entries, path)
}

pub fn load_ranked_benchmark(path: &Path) -> Result<Vec<RankedEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (line, value) in json_lines(path)? {
        let entry: RankedEntry =
            serde_json::from_value(value).map_err(|e| BenchmarkError::Parse { line, message: e.to_string() })?;
        entry.validate()?;
        if !seen.insert(entry.task_id.clone()) {
            return Err(BenchmarkError::DuplicateTaskId(entry.task_id));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes any serializable rows as JSON Lines.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let io_err = |source| BenchmarkError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads JSON Lines rows of any deserializable type.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    json_lines(path)?
        .into_iter()
        .map(|(line, v)| serde_json::from_value(v).map_err(|e| BenchmarkError::Parse { line, message: e.to_string() }))
        .collect()
}

pub fn compute_stats(entries: &[RankedEntry]) -> Result<BenchmarkStats> {
    if entries.is_empty() {
        return Err(BenchmarkError::Empty);
    }
    let problem_count = entries.len();
    let solution_count: usize = entries.iter().map(|e| e.solutions.len()).sum();
    let total_tests: usize = entries.iter().map(|e| e.test_count).sum();
    let total_score: f64 = entries.iter().flat_map(|e| e.solutions.iter()).map(|s| s.score).sum();
    Ok(BenchmarkStats {
        problem_count,
        avg_tests: total_tests as f64 / problem_count as f64,
        solution_count,
        avg_solution_score: if solution_count == 0 { 0.0 } else { total_score / solution_count as f64 },
    })
}
