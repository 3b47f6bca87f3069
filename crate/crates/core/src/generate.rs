//! Candidate solution generation.
//!
//! One request is issued per (round, prompt, seed) cell. Responses are mapped
//! through [`extract_code`]; empty extractions and failed calls are dropped
//! but kept in the log so a run can be audited and replayed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::Problem;
use crate::client::{with_retry, ChatClient, ChatRequest, Message, RequestTag, RetryPolicy};
use crate::prompts::{render_prompt, PromptError, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub prompts: Vec<PromptTemplate>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Fence label treated as the solution language by [`extract_code`].
    pub language: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 1.0,
            top_p: 0.95,
            seeds: vec![1, 2, 3],
            rounds: 3,
            prompts: vec![PromptTemplate::correct_solution(), PromptTemplate::partially_incorrect_solution()],
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            language: "python".into(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GenerationError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: &str| Err(GenerationError::InvalidConfig(m.to_string()));
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.prompts.is_empty() {
            return bad("at least one prompt is required");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        for p in &self.prompts {
            if !p.has_placeholder("question") {
                return Err(PromptError::MissingPlaceholder { template: p.name.clone(), placeholder: "question".into() }.into());
            }
        }
        Ok(())
    }

    /// Requests issued per call of [`generate_solutions`].
    pub fn requests_per_call(&self) -> usize {
        self.rounds * self.prompts.len() * self.seeds.len()
    }
}

/// Returns the body of the first fenced block labeled `language`, else of the
/// first unlabeled fenced block, else nothing.
///
/// Fences may open at any position (`` ```python `` followed by a newline) and
/// close at the next `` ``` ``. Unclosed blocks are ignored.
pub fn extract_code(response: &str, language: &str) -> Option<String> {
    let mut first_unlabeled: Option<&str> = None;
    let mut rest = response;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(eol) = after.find('\n') else { break };
        let label = after[..eol].trim();
        if label.contains("```") {
            // "``` ```" on one line: an empty block, skip past it
            rest = &after[after.find("```").map(|i| i + 3).unwrap_or(after.len())..];
            continue;
        }
        let body_start = &after[eol + 1..];
        let Some(close) = body_start.find("```") else { break };
        let body = &body_start[..close];
        rest = &body_start[close + 3..];

        if label_matches(label, language) {
            return non_empty(body);
        }
        if label.is_empty() && first_unlabeled.is_none() {
            first_unlabeled = Some(body);
        }
    }
    first_unlabeled.and_then(non_empty)
}

fn label_matches(label: &str, language: &str) -> bool {
    let label = label.to_ascii_lowercase();
    let language = language.to_ascii_lowercase();
    label == language || (language == "python" && (label == "py" || label == "python3"))
}

fn non_empty(body: &str) -> Option<String> {
    let body = body.trim_end();
    let body = body.trim_start_matches(['\n', '\r']);
    (!body.trim().is_empty()).then(|| body.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub round: usize,
    pub prompt: String,
    pub seed: u64,
    /// Position in generation order across the whole run.
    pub order: usize,
}

/// Everything needed to audit or replay one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub task_id: String,
    pub index: usize,
    pub round: usize,
    pub prompt: String,
    pub seed: u64,
    pub request_seed: u64,
    pub temperature: f64,
    pub top_p: f64,
    pub attempts: u32,
    pub response: Option<String>,
    pub error: Option<String>,
    pub extracted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutput {
    pub candidates: Vec<Candidate>,
    pub log: Vec<GenerationRecord>,
}

/// Seed sent to the model for `seed` in global round `round`, so repeated
/// rounds do not replay the same samples.
pub fn request_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_add(1000u64.wrapping_mul(round as u64))
}

/// Issues `rounds × prompts × seeds` requests starting at global round
/// `first_round`. Output order follows (round, prompt, seed) regardless of
/// completion order.
pub fn generate_solutions(
    problem: &Problem,
    client: &dyn ChatClient,
    cfg: &GenerationConfig,
    first_round: usize,
) -> Result<GenerationOutput, GenerationError> {
    cfg.validate()?;
    let rendered: Vec<String> = cfg
        .prompts
        .iter()
        .map(|p| render_prompt(p, &problem.question, None))
        .collect::<Result<_, _>>()?;

    let per_round = cfg.prompts.len() * cfg.seeds.len();
    let cells: Vec<(usize, usize, usize)> = (0..cfg.rounds)
        .flat_map(|r| (0..cfg.prompts.len()).flat_map(move |p| (0..cfg.seeds.len()).map(move |s| (first_round + r, p, s))))
        .collect();

    let run_cell = |&(round, p, s_idx): &(usize, usize, usize)| {
        let seed = cfg.seeds[s_idx];
        let index = round * per_round + p * cfg.seeds.len() + s_idx;
        let req = ChatRequest {
            messages: vec![Message::user(rendered[p].clone())],
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            seed: Some(request_seed(seed, round)),
            tag: RequestTag { task_id: problem.task_id.clone(), index },
        };
        let (result, attempts) = with_retry(cfg.retry, || client.complete(&req));
        let (response, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let code = response.as_deref().and_then(|r| extract_code(r, &cfg.language));
        let record = GenerationRecord {
            task_id: problem.task_id.clone(),
            index,
            round,
            prompt: cfg.prompts[p].name.clone(),
            seed,
            request_seed: request_seed(seed, round),
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            attempts,
            response,
            error,
            extracted: code.is_some(),
        };
        (record, code)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| GenerationError::InvalidConfig(e.to_string()))?;
    let results: Vec<(GenerationRecord, Option<String>)> =
        pool.install(|| cells.par_iter().with_max_len(1).map(run_cell).collect());

    let mut out = GenerationOutput::default();
    for (record, code) in results {
        match code {
            Some(code) => out.candidates.push(Candidate {
                code,
                round: record.round,
                prompt: record.prompt.clone(),
                seed: record.seed,
                order: record.index,
            }),
            None => tracing::debug!(
                task_id = %record.task_id,
                index = record.index,
                error = record.error.as_deref().unwrap_or("no code block"),
                "dropping sample"
            ),
        }
        out.log.push(record);
    }
    let dropped = out.log.len() - out.candidates.len();
    if dropped > 0 {
        tracing::warn!(task_id = %problem.task_id, dropped, requested = out.log.len(), "samples without usable code");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ScriptedClient;

    #[test]
    fn labeled_block_is_extracted() {
        let r = "Here you go:\n```python\ndef f(x):\n    return x + 1\n```\nDone.";
        assert_eq!(extract_code(r, "python").as_deref(), Some("def f(x):\n    return x + 1"));
    }

    #[test]
    fn prose_only_yields_nothing() {
        assert_eq!(extract_code("I cannot help with that.", "python"), None);
        assert_eq!(extract_code("unclosed ```python\ndef f(): pass", "python"), None);
    }

    #[test]
    fn first_block_wins_in_every_arrangement() {
        let a = "```python\nA = 1\n```";
        let b = "```python\nB = 2\n```";
        let u = "```\nU = 3\n```";
        let other = "```text\nT = 4\n```";
        let cases = [
            (format!("{a}\n{b}"), "A = 1"),
            (format!("{b}\ntext\n{a}"), "B = 2"),
            (format!("{u}\n{a}"), "A = 1"),
            (format!("{a}\n{u}"), "A = 1"),
            (format!("{u}\n```\nV = 5\n```"), "U = 3"),
            (format!("{other}\n{u}"), "U = 3"),
            (format!("{other}\n{b}\n{u}"), "B = 2"),
        ];
        for (text, want) in cases {
            assert_eq!(extract_code(&text, "python").as_deref(), Some(want), "{text}");
        }
        assert_eq!(extract_code(other, "python"), None);
    }

    #[test]
    fn inline_closing_fence() {
        assert_eq!(extract_code("```py\nx = 1```", "python").as_deref(), Some("x = 1"));
    }

    fn problem() -> Problem {
        Problem {
            task_id: "t".into(),
            question: "def f(x):".into(),
            canonical_solution: None,
            predefined_tests: vec!["assert f(1) == 2".into()],
            entry_point: Some("f".into()),
        }
    }

    #[test]
    fn two_prompts_one_seed_one_round() {
        let mut client = ScriptedClient::default();
        client.completions.insert(
            "t".into(),
            vec!["```python\ndef f(x): return x+1\n```".into(), "no code here".into()],
        );
        let cfg = GenerationConfig { seeds: vec![7], rounds: 1, ..Default::default() };
        let out = generate_solutions(&problem(), &client, &cfg, 0).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.candidates.len(), 1);
        assert_eq!(out.candidates[0].prompt, "correct");
        assert!(!out.log[1].extracted);

        let both = ScriptedClient {
            completions: [("t".to_string(), vec!["```python\na=1\n```".to_string(); 2])].into(),
            ..Default::default()
        };
        assert_eq!(generate_solutions(&problem(), &both, &cfg, 0).unwrap().candidates.len(), 2);
    }

    #[test]
    fn grid_size_bounds_candidates() {
        let client = ScriptedClient {
            completions: [("*".to_string(), (0..12).map(|i| format!("```python\nx = {i}\n```")).collect())].into(),
            ..Default::default()
        };
        let cfg = GenerationConfig { seeds: vec![1, 2, 3], rounds: 2, ..Default::default() };
        let out = generate_solutions(&problem(), &client, &cfg, 0).unwrap();
        assert_eq!(out.log.len(), 12);
        assert!(out.candidates.len() <= 12);
        let order: Vec<usize> = out.candidates.iter().map(|c| c.order).collect();
        assert_eq!(order, (0..12).collect::<Vec<_>>());
        // later rounds are offset by `first_round`
        let later = generate_solutions(&problem(), &client, &GenerationConfig { rounds: 1, ..cfg.clone() }, 1).unwrap();
        assert_eq!(later.log[0].index, 6);
        assert_ne!(later.log[0].request_seed, out.log[0].request_seed);
    }

    #[test]
    fn reproducible_with_deterministic_client() {
        let client = ScriptedClient {
            completions: [("*".to_string(), (0..6).map(|i| format!("```python\nx = {i}\n```")).collect())].into(),
            ..Default::default()
        };
        let cfg = GenerationConfig { rounds: 1, ..Default::default() };
        let a = generate_solutions(&problem(), &client, &cfg, 0).unwrap();
        let b = generate_solutions(&problem(), &client, &cfg, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config() {
        let cfg = GenerationConfig { rounds: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = GenerationConfig { temperature: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = GenerationConfig { prompts: vec![PromptTemplate::new("x", "no placeholder")], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(GenerationError::Prompt(_))));
    }
}
