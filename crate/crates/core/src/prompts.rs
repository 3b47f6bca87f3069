//! Prompt templates with `{question}`, `{solution}` and `{count}` placeholders.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("template `{template}` has no `{{{placeholder}}}` placeholder")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("template `{template}` needs a value for `{{{placeholder}}}`")]
    MissingValue { template: String, placeholder: String },
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
}

/// Placeholders the renderer knows how to substitute.
pub const PLACEHOLDERS: [&str; 3] = ["question", "solution", "count"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        PromptTemplate { name: name.into(), body: body.into() }
    }

    /// Loads a plain-text template; the file stem becomes its name.
    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(PromptTemplate { name, body })
    }

    pub fn has_placeholder(&self, name: &str) -> bool {
        self.body.contains(&format!("{{{name}}}"))
    }

    /// Substitutes each known placeholder in one pass over the body.
    ///
    /// Every provided value must have a placeholder, and every known
    /// placeholder in the body must have a value. Inserted text is never
    /// rescanned, and unknown `{...}` sequences are left as they are.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        for (key, _) in values {
            if !self.has_placeholder(key) {
                return Err(PromptError::MissingPlaceholder { template: self.name.clone(), placeholder: key.to_string() });
            }
        }
        for key in PLACEHOLDERS {
            if self.has_placeholder(key) && !values.iter().any(|(k, _)| *k == key) {
                return Err(PromptError::MissingValue { template: self.name.clone(), placeholder: key.to_string() });
            }
        }

        let mut out = String::with_capacity(self.body.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
        let mut rest = self.body.as_str();
        'scan: while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            for (key, value) in values {
                let token_len = key.len() + 2;
                if tail.len() >= token_len && tail.as_bytes()[token_len - 1] == b'}' && &tail[1..token_len - 1] == *key {
                    out.push_str(value);
                    rest = &tail[token_len..];
                    continue 'scan;
                }
            }
            out.push('{');
            rest = &tail[1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn correct_solution() -> Self {
        PromptTemplate::new("correct", CORRECT_SOLUTION)
    }

    pub fn partially_incorrect_solution() -> Self {
        PromptTemplate::new("partially_incorrect", PARTIALLY_INCORRECT_SOLUTION)
    }

    pub fn testgen_without_solution() -> Self {
        PromptTemplate::new("testgen", TESTGEN_WITHOUT_SOLUTION.as_str())
    }

    pub fn testgen_with_solution() -> Self {
        PromptTemplate::new("testgen_with_solution", TESTGEN_WITH_SOLUTION.as_str())
    }

    pub fn reward_user() -> Self {
        PromptTemplate::new("reward_user", REWARD_USER)
    }

    pub fn reward_assistant() -> Self {
        PromptTemplate::new("reward_assistant", REWARD_ASSISTANT)
    }
}

/// Renders a solution-generation template.
pub fn render_prompt(template: &PromptTemplate, question: &str, solution: Option<&str>) -> Result<String, PromptError> {
    match solution {
        Some(s) => template.render(&[("question", question), ("solution", s)]),
        None => template.render(&[("question", question)]),
    }
}

pub const CORRECT_SOLUTION: &str = "\
Using only Python code, write a solution to the given coding problem.

Here are other guidelines for completing this task:

1. Enclose the code in a python code block ```python.
2. Do not include any unit tests in your answer, only generate the function.
3. The code must still compile, the only errors in the code should be logical.
4. Include any necessary imports with your code, only import libraries included in the standard library.

Question:
{question}

Answer:
";

pub const PARTIALLY_INCORRECT_SOLUTION: &str = "\
Using only Python code, write a somewhat incorrect solution to the given coding problem.

Do not provide any hints as to what is the mistake. Here are other guidelines for completing this task:

1. Enclose the code in a python code block ```python.
2. Do not include any unit tests in your answer, only generate the function.
3. The code must still compile, the only errors in the code should be logical.
4. Include any necessary imports with your code, only import libraries included in the standard library.
5. Do not add any hints as to the error you made.

Here are some suggestions:
- Do not handle negative numbers
- Do not handle duplicate values
- Introduce rounding errors
- Ignore the last element in a list
- Only handle specific values
- Only works for certain ranges of values or lengths

Question:
{question}

Answer:
";

const FEW_SHOT_QUESTION: &str = r#"from typing import Optional
def first_repeated_char(s: str) -> Optional[str]:
    """
    Find the first repeated character in a given string.
    >>> first_repeated_char("abbac")
    'a'
    """"#;

const FEW_SHOT_TESTS: &str = r#"<assertion>assert first_repeated_char("!@#$%^&*!") == "!"</assertion>
<assertion>assert first_repeated_char("abcdedcba") == "d"</assertion>
<assertion>assert first_repeated_char("") == "None"</assertion>
<assertion>assert first_repeated_char("aaaa") == "a"</assertion>
<assertion>assert first_repeated_char("a") == "None"</assertion>"#;

const TESTGEN_GUIDELINES: &str = r#"Here are guidelines for writing the assertion test cases:

1. You must wrap each assertion test case with tags <assertion> and </assertion>.
2. Do not start the assert with any indents or spaces.
3. You must not import any unit testing libraries for the assertions such as "unittest" or "pytest".
4. Each assertion must be complete and immediately executable. Assume the code solution is provided, do not repeat it.
5. Avoid unnecessary string literals, incorrect escaping, wrapping in "```python" or other redundancies.
6. Remember, it is your responsibility to carefully read the question and generate test cases that will evaluate the correctness of the solution."#;

pub static TESTGEN_WITHOUT_SOLUTION: std::sync::LazyLock<String> = std::sync::LazyLock::new(|| {
    format!(
        "You are an expert at writing assertion test cases and below is a question with function signature and test cases. \
You must generate {{count}} assert test cases that will be used to evaluate the code solution's correctness. \
You must adhere to the provided function signature and test case format. \
Here are some examples that you should use as a reference:

Question:
{FEW_SHOT_QUESTION}

Test Cases:
{FEW_SHOT_TESTS}

{TESTGEN_GUIDELINES}

Here is the question you must provide assertion test cases for:

Question: {{question}}

Test Cases:
"
    )
});

const FEW_SHOT_SOLUTION_BODY: &str = r#"
    for index, c in enumerate(s):
        if s[:index + 1].count(c) > 1:
            return c
    return None"#;

pub static TESTGEN_WITH_SOLUTION: std::sync::LazyLock<String> = std::sync::LazyLock::new(|| {
    format!(
        "You are an expert at writing assertion test cases and below is a question with function signature and completed code solution. \
You must generate {{count}} assert statements that will be used to evaluate the code solution's correctness which may or may not be correct. \
Here are some examples that you should use as a reference:

Question:
{FEW_SHOT_QUESTION}

Solution:
{FEW_SHOT_QUESTION}{FEW_SHOT_SOLUTION_BODY}

Test Cases:
{FEW_SHOT_TESTS}

{TESTGEN_GUIDELINES}

Here is the question and code solution you must provide assertion test cases for:

Question: {{question}}

Solution: {{solution}}

Test Cases:
"
    )
});

pub const REWARD_USER: &str = "\
You are given a coding problem for which you need to generate/complete a solution that is as accurate as possible.

Please complete the function with the Python programming language.

This is the problem you must solve: {question}";

pub const REWARD_ASSISTANT: &str = "Here is the solution to the given problem: {solution}";
