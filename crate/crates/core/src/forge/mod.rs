//! Drafting templates with a language model and repairing them until they
//! meet their spec and plan cleanly.

mod live;
mod mock;
pub mod parse;
mod provider;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{enumerate_join_paths, sample_join_path, summarize_for_prompt, CatalogError, JoinPath, SchemaCatalog};
use crate::model::{instantiate, SqlTemplate, TemplateSpec};
use crate::profiler::{CostOracle, OracleError};

pub use live::{parse_verdict, LiveConfig, LiveProvider};
pub use mock::{FaultPlan, MockConfig, MockProvider, RefineMode};
pub use parse::{parse_template, structure_stats, StructureStats};
pub use provider::{
    count_tokens, usage_of, DraftRequest, HistoryEntry, LlmProvider, ProviderCall, ProviderError, RefineRequest,
    SemanticVerdict, TokenUsage,
};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

pub fn build_prompt(spec: &TemplateSpec, summary: &str, path: &JoinPath) -> String {
    let mut out = String::from("Write one SQL query template for benchmarking a PostgreSQL database.\n\n");
    out.push_str("Schema:\n");
    out.push_str(summary);
    if path.edges.is_empty() {
        let _ = writeln!(out, "\nQuery only the table {} (no joins).", path.tables[0]);
    } else {
        let _ = writeln!(out, "\nJoin the tables exactly along this path: {}.", path.tables.join(" -> "));
    }
    out.push_str("\nRequirements:\n");
    for line in spec.constraint_lines() {
        let _ = writeln!(out, "- {line}");
    }
    out.push('\n');
    out.push_str(provider::OUTPUT_RULES);
    out.push('\n');
    out
}

/// One pass of the check-and-rewrite loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteStep {
    pub iteration: usize,
    pub satisfied: bool,
    pub violations: Vec<String>,
    pub semantic_fix: bool,
    /// The text whose executability was probed.
    pub probed_sql: String,
    pub executable: bool,
    pub errors: Vec<String>,
    pub execution_fix: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewriteTrace {
    pub steps: Vec<RewriteStep>,
}

#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub sql_text: String,
    /// The latest text parsed as a template, when it parses.
    pub template: Option<SqlTemplate>,
    pub trace: RewriteTrace,
    pub verified: bool,
}

/// Problems found by instantiating the template at its domain midpoints and
/// asking the oracle to plan it.
fn probe(
    text: &str,
    id: &str,
    catalog: &SchemaCatalog,
    path: Option<&JoinPath>,
    oracle: &mut dyn CostOracle,
) -> Result<(Option<SqlTemplate>, Vec<String>), ForgeError> {
    let template = match parse_template(text, id, catalog, path) {
        Ok(t) => t,
        Err(e) => return Ok((None, vec![e])),
    };
    let query = match instantiate(&template, &template.midpoint_bindings()) {
        Ok(q) => q,
        Err(e) => return Ok((Some(template), vec![e.to_string()])),
    };
    let errors = oracle.validate(&template, &query)?;
    Ok((Some(template), errors))
}

fn merge(mut a: Vec<String>, b: Vec<String>) -> Vec<String> {
    for v in b {
        if !a.contains(&v) {
            a.push(v);
        }
    }
    a
}

/// Alternates spec-compliance checks and executability checks, asking the
/// provider to repair whichever fails, for at most `k` iterations. A
/// template is verified only when both checks pass on the same text.
#[allow(clippy::too_many_arguments)]
pub fn check_and_rewrite(
    draft: &str,
    id: &str,
    spec: &TemplateSpec,
    catalog: &SchemaCatalog,
    path: Option<&JoinPath>,
    oracle: &mut dyn CostOracle,
    provider: &mut dyn LlmProvider,
    k: usize,
) -> Result<RewriteOutcome, ForgeError> {
    let mut text = draft.to_string();
    let mut trace = RewriteTrace::default();
    let mut latest = None;
    for iteration in 1..=k.max(1) {
        let verdict = provider.validate_semantics(&text, spec)?;
        let local = parse::check_numeric(&structure_stats(&text, catalog), &spec.numeric);
        let satisfied = verdict.satisfied && local.is_empty();
        let violations = merge(verdict.violations, local);
        let semantic_fix = !satisfied;
        if semantic_fix {
            text = provider.fix_semantics(&text, spec, &violations)?;
        }
        let (template, errors) = probe(&text, id, catalog, path, oracle)?;
        latest = template;
        let executable = errors.is_empty();
        let probed_sql = text.clone();
        let execution_fix = !executable;
        if execution_fix {
            text = provider.fix_execution(&text, &errors)?;
        }
        trace.steps.push(RewriteStep {
            iteration,
            satisfied,
            violations,
            semantic_fix,
            probed_sql,
            executable,
            errors,
            execution_fix,
        });
        if satisfied && executable {
            let template = latest.expect("executable text parses");
            return Ok(RewriteOutcome { sql_text: text, template: Some(template), trace, verified: true });
        }
    }
    if latest.as_ref().map(|t| t.sql_text != text).unwrap_or(true) {
        latest = parse_template(&text, id, catalog, path).ok();
    }
    Ok(RewriteOutcome { sql_text: text, template: latest, trace, verified: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeOptions {
    /// Rewrite iterations per draft.
    pub k: usize,
    /// Drafts (each on a freshly sampled join path) per spec.
    pub attempts_per_spec: usize,
}

impl Default for ForgeOptions {
    fn default() -> Self {
        Self { k: 5, attempts_per_spec: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SpecStatus {
    Verified { template_id: String },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecOutcome {
    pub spec_id: String,
    #[serde(flatten)]
    pub status: SpecStatus,
    /// One trace per draft, in order.
    pub traces: Vec<RewriteTrace>,
}

/// Per-attempt cumulative counts across specs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteSeries {
    pub spec_correct: Vec<usize>,
    pub syntax_correct: Vec<usize>,
    pub verified: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationReport {
    pub templates: Vec<SqlTemplate>,
    pub outcomes: Vec<SpecOutcome>,
}

impl GenerationReport {
    /// Counts, for each attempt number `a`, the specs whose template met
    /// the spec (or planned cleanly, or both) at some attempt up to `a`.
    /// Attempts run on across redrafts of the same spec.
    pub fn series(&self) -> RewriteSeries {
        let flat: Vec<Vec<&RewriteStep>> =
            self.outcomes.iter().map(|o| o.traces.iter().flat_map(|t| &t.steps).collect()).collect();
        let len = flat.iter().map(Vec::len).max().unwrap_or(0);
        let mut series = RewriteSeries::default();
        for a in 1..=len {
            let upto = |steps: &Vec<&RewriteStep>, f: &dyn Fn(&RewriteStep) -> bool| steps.iter().take(a).any(|s| f(s));
            series.spec_correct.push(flat.iter().filter(|s| upto(s, &|x| x.satisfied)).count());
            series.syntax_correct.push(flat.iter().filter(|s| upto(s, &|x| x.executable)).count());
            series.verified.push(flat.iter().filter(|s| upto(s, &|x| x.satisfied && x.executable)).count());
        }
        series
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.outcomes.iter().filter_map(|o| match &o.status {
            SpecStatus::Failed { reason } => Some((o.spec_id.as_str(), reason.as_str())),
            SpecStatus::Verified { .. } => None,
        })
    }
}

fn joins_for(spec: &TemplateSpec, catalog: &SchemaCatalog) -> usize {
    spec.numeric
        .num_joins
        .map(|j| j as usize)
        .or_else(|| spec.numeric.num_tables_accessed.map(|t| t.saturating_sub(1) as usize))
        .unwrap_or(usize::from(!catalog.join_edges.is_empty()))
}

pub fn template_id(index: usize) -> String {
    format!("t_{:03}", index + 1)
}

/// Drafts and repairs one template per spec. Per-spec failures are recorded
/// in the report; only an unreachable oracle aborts the batch.
pub fn generate_templates<R: Rng + ?Sized>(
    specs: &[TemplateSpec],
    catalog: &SchemaCatalog,
    oracle: &mut dyn CostOracle,
    provider: &mut dyn LlmProvider,
    options: ForgeOptions,
    rng: &mut R,
) -> Result<GenerationReport, ForgeError> {
    let mut report = GenerationReport::default();
    let mut paths: HashMap<usize, Vec<JoinPath>> = HashMap::new();
    for (index, spec) in specs.iter().enumerate() {
        let id = template_id(index);
        let joins = joins_for(spec, catalog);
        let candidates = paths.entry(joins).or_insert_with(|| enumerate_join_paths(catalog, joins));
        let mut traces = Vec::new();
        let mut status = SpecStatus::Failed { reason: "no verified template".into() };
        for _ in 0..options.attempts_per_spec.max(1) {
            let path = match sample_join_path(candidates, joins, rng) {
                Ok(p) => p.clone(),
                Err(e) => {
                    status = SpecStatus::Failed { reason: e.to_string() };
                    break;
                }
            };
            let summary = summarize_for_prompt(catalog, &path);
            let prompt = build_prompt(spec, &summary, &path);
            let request = DraftRequest { prompt: &prompt, spec, path: &path, catalog };
            let attempt = provider
                .generate(&request)
                .map_err(ForgeError::from)
                .and_then(|draft| check_and_rewrite(&draft, &id, spec, catalog, Some(&path), oracle, provider, options.k));
            match attempt {
                Ok(outcome) => {
                    traces.push(outcome.trace);
                    if outcome.verified {
                        let template = outcome.template.expect("verified template parses").with_spec(&spec.id);
                        report.templates.push(template);
                        status = SpecStatus::Verified { template_id: id.clone() };
                        break;
                    }
                }
                Err(ForgeError::Oracle(e @ OracleError::Unavailable(_))) => return Err(e.into()),
                Err(e) => {
                    status = SpecStatus::Failed { reason: e.to_string() };
                    log::warn!("spec {}: {e}", spec.id);
                }
            }
        }
        report.outcomes.push(SpecOutcome { spec_id: spec.id.clone(), status, traces });
    }
    Ok(report)
}

/// A template file: header comments, then the SQL.
pub fn template_file_text(template: &SqlTemplate, verified: bool) -> String {
    let mut out = format!("-- template: {}\n", template.id);
    if let Some(spec) = &template.spec_id {
        let _ = writeln!(out, "-- spec: {spec}");
    }
    if let Some(parent) = &template.lineage {
        let _ = writeln!(out, "-- parent: {parent}");
    }
    let _ = writeln!(out, "-- status: {}", if verified { "verified" } else { "unverified" });
    out.push_str(&template.sql_text);
    out.push('\n');
    out
}

/// `count` specs in the style of production workload summaries: mixed join
/// counts, aggregation counts and grouping/nesting instructions.
pub fn sample_specs(count: usize, max_joins: u32) -> Vec<TemplateSpec> {
    const NL: [&str; 4] = [
        "",
        "Group the result by a low-cardinality column.",
        "Filter through a nested subquery on the first table.",
        "Group by a category column and restrict rows with a nested subquery.",
    ];
    (0..count)
        .map(|i| TemplateSpec {
            id: format!("s{:02}", i + 1),
            numeric: crate::model::NumericConstraints {
                num_tables_accessed: None,
                num_joins: Some((i as u32) % (max_joins + 1)),
                num_aggregations: Some(((i / 2) % 3) as u32),
            },
            nl_instructions: match NL[(i / 3) % NL.len()] {
                "" => vec![],
                s => vec![s.to_string()],
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{imdb, users_orders};
    use crate::model::NumericConstraints;
    use crate::profiler::{Surface, SyntheticOracle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(joins: u32) -> TemplateSpec {
        TemplateSpec {
            id: "s1".into(),
            numeric: NumericConstraints { num_joins: Some(joins), num_aggregations: Some(1), num_tables_accessed: None },
            nl_instructions: vec![],
        }
    }

    #[test]
    fn prompt_contents() {
        let cat = users_orders();
        let path = &enumerate_join_paths(&cat, 1)[0];
        let s = spec(1);
        let p = build_prompt(&s, &summarize_for_prompt(&cat, path), path);
        assert!(p.contains("users") && p.contains("orders") && p.contains("num_joins = 1"));
        assert!(p.contains("{p_1}"));
        assert_eq!(p, build_prompt(&s, &summarize_for_prompt(&cat, path), path));

        let cat = imdb();
        let path = enumerate_join_paths(&cat, 1).into_iter().find(|p| p.tables.contains(&"title".to_string())).unwrap();
        let p = build_prompt(&s, &summarize_for_prompt(&cat, &path), &path);
        for t in &cat.tables {
            let mentioned = p
                .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
                .any(|w| w == t.name);
            assert_eq!(mentioned, path.tables.contains(&t.name), "{}", t.name);
        }
    }

    #[test]
    fn valid_draft_passes_first_iteration() {
        let cat = users_orders();
        let mut oracle = SyntheticOracle::new(Surface::Constant { value: 1.0 });
        let mut provider = MockProvider::new(MockConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = generate_templates(&[spec(1)], &cat, &mut oracle, &mut provider, ForgeOptions::default(), &mut rng)
            .unwrap();
        assert_eq!(r.templates.len(), 1);
        let steps = &r.outcomes[0].traces[0].steps;
        assert_eq!(steps.len(), 1);
        assert!(!steps[0].semantic_fix && !steps[0].execution_fix);
    }

    #[test]
    fn syntax_fault_fixed_on_second_iteration() {
        let cat = users_orders();
        let mut oracle = SyntheticOracle::new(Surface::Constant { value: 1.0 });
        let mut provider = MockProvider::new(MockConfig {
            faults: FaultPlan { semantic: vec![], syntax: vec![1] },
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = generate_templates(&[spec(1)], &cat, &mut oracle, &mut provider, ForgeOptions::default(), &mut rng)
            .unwrap();
        let steps = &r.outcomes[0].traces[0].steps;
        assert_eq!(steps.len(), 2);
        assert!(!steps[0].executable && steps[1].executable);
        assert_eq!(r.templates.len(), 1);
    }

    #[test]
    fn unfixable_spec_is_unverified_after_k() {
        let cat = users_orders();
        let mut oracle = SyntheticOracle::new(Surface::Constant { value: 1.0 });
        let mut provider = MockProvider::new(MockConfig {
            faults: FaultPlan { semantic: vec![100], syntax: vec![] },
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = ForgeOptions { k: 4, attempts_per_spec: 1 };
        let r = generate_templates(&[spec(1)], &cat, &mut oracle, &mut provider, opts, &mut rng).unwrap();
        assert!(r.templates.is_empty());
        assert_eq!(r.outcomes[0].traces[0].steps.len(), 4);
        assert!(matches!(r.outcomes[0].status, SpecStatus::Failed { .. }));
    }

    #[test]
    fn impossible_join_count_fails_only_that_spec() {
        let cat = users_orders();
        let mut oracle = SyntheticOracle::new(Surface::Constant { value: 1.0 });
        let mut provider = MockProvider::new(MockConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bad = spec(5);
        bad.id = "bad".into();
        let r = generate_templates(&[bad, spec(1)], &cat, &mut oracle, &mut provider, ForgeOptions::default(), &mut rng)
            .unwrap();
        assert_eq!(r.templates.len(), 1);
        let failures: Vec<_> = r.failures().collect();
        assert_eq!(failures.len(), 1);
        assert!(failures[0].1.contains("no join path with 5 joins"));
        assert!(generate_templates(&[], &cat, &mut oracle, &mut provider, ForgeOptions::default(), &mut rng)
            .unwrap()
            .templates
            .is_empty());
    }
}
