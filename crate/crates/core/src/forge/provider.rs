//! The language-model interface and the prompts sent through it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{JoinPath, SchemaCatalog};
use crate::model::TemplateSpec;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider request failed: {0}")]
    Request(String),
    #[error("provider response unusable: {0}")]
    Response(String),
    #[error("provider not configured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// One provider round trip, for the call log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub operation: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub cached: bool,
}

pub fn usage_of(calls: &[ProviderCall]) -> TokenUsage {
    calls.iter().fold(TokenUsage::default(), |mut u, c| {
        u.calls += 1;
        u.prompt_tokens += c.prompt_tokens;
        u.completion_tokens += c.completion_tokens;
        u
    })
}

/// Rough token count: whitespace-separated words plus punctuation runs.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace()
        .map(|w| 1 + w.chars().filter(|c| c.is_ascii_punctuation()).count() as u64 / 2)
        .sum()
}

pub struct DraftRequest<'a> {
    pub prompt: &'a str,
    pub spec: &'a TemplateSpec,
    pub path: &'a JoinPath,
    pub catalog: &'a SchemaCatalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub sql_text: String,
    pub costs: Vec<f64>,
}

pub struct RefineRequest<'a> {
    pub parent_sql: &'a str,
    pub costs: &'a [f64],
    pub interval: (f64, f64),
    pub summary: &'a str,
    /// Earlier accepted refinements for the same interval, newest last.
    pub history: &'a [HistoryEntry],
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub satisfied: bool,
    #[serde(default)]
    pub violations: Vec<String>,
}

pub trait LlmProvider {
    fn generate(&mut self, request: &DraftRequest<'_>) -> Result<String, ProviderError>;

    fn validate_semantics(&mut self, template: &str, spec: &TemplateSpec) -> Result<SemanticVerdict, ProviderError>;

    fn fix_semantics(&mut self, template: &str, spec: &TemplateSpec, violations: &[String])
        -> Result<String, ProviderError>;

    fn fix_execution(&mut self, template: &str, errors: &[String]) -> Result<String, ProviderError>;

    fn refine_template(&mut self, request: &RefineRequest<'_>) -> Result<String, ProviderError>;

    fn calls(&self) -> &[ProviderCall];

    fn usage(&self) -> TokenUsage {
        usage_of(self.calls())
    }
}

pub(crate) const OUTPUT_RULES: &str = "\
Write predicate values as placeholders {p_1}, {p_2}, ... instead of literals.
Before the SQL, add one comment line per placeholder naming the column it filters, e.g. `-- p_1: table_name.column_name`.
Return a single SQL statement and nothing else: no prose, no explanation.";

fn spec_lines(spec: &TemplateSpec) -> String {
    let mut out = String::new();
    for line in spec.constraint_lines() {
        let _ = writeln!(out, "- {line}");
    }
    out
}

pub fn semantic_check_prompt(template: &str, spec: &TemplateSpec) -> String {
    format!(
        "Does this SQL template satisfy every constraint below?\n\nConstraints:\n{}\nTemplate:\n{}\n\n\
         Answer with JSON: {{\"satisfied\": true|false, \"violations\": [\"...\"]}}",
        spec_lines(spec),
        template
    )
}

pub fn fix_semantics_prompt(template: &str, spec: &TemplateSpec, violations: &[String]) -> String {
    format!(
        "Rewrite this SQL template so it satisfies the constraints.\n\nConstraints:\n{}\nViolations:\n{}\n\nTemplate:\n{}\n\n{}",
        spec_lines(spec),
        violations.iter().map(|v| format!("- {v}\n")).collect::<String>(),
        template,
        OUTPUT_RULES
    )
}

pub fn fix_execution_prompt(template: &str, errors: &[String]) -> String {
    format!(
        "This SQL template fails to plan on the database.\n\nErrors:\n{}\nTemplate:\n{}\n\nFix the errors without changing what the query computes.\n{}",
        errors.iter().map(|e| format!("- {e}\n")).collect::<String>(),
        template,
        OUTPUT_RULES
    )
}

pub fn refine_prompt(request: &RefineRequest<'_>) -> String {
    let mut out = String::new();
    let costs = request.costs;
    let (lo, hi) = request.interval;
    let _ = writeln!(out, "The SQL template below produces queries whose estimated costs miss a target range.");
    let _ = writeln!(out, "Modify it so that some instantiations cost between {lo} and {hi}.");
    if !costs.is_empty() {
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let _ = writeln!(out, "Observed costs over {} samples: min {min}, mean {mean:.2}, max {max}.", costs.len());
        let buckets = 10usize;
        let width = (max - min).max(f64::EPSILON) / buckets as f64;
        let mut hist = vec![0usize; buckets];
        for c in costs {
            hist[(((c - min) / width) as usize).min(buckets - 1)] += 1;
        }
        let _ = writeln!(out, "Cost histogram from {min} in steps of {width:.2}: {hist:?}");
    }
    let _ = writeln!(out, "\nSchema:\n{}", request.summary);
    let _ = writeln!(out, "Template:\n{}\n", request.parent_sql);
    if !request.history.is_empty() {
        let _ = writeln!(out, "Earlier attempts for this range and the costs they produced:");
        for h in request.history {
            let n = h.costs.len().max(1) as f64;
            let mean = h.costs.iter().sum::<f64>() / n;
            let _ = writeln!(out, "{}\n-- mean cost {mean:.2} over {} samples\n", h.sql_text, h.costs.len());
        }
    }
    out.push_str(OUTPUT_RULES);
    out
}
