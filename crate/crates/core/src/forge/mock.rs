//! An offline provider: drafts templates from a small SQL grammar over the
//! catalog and injects scripted faults so the repair loop can be exercised.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::{check_nl, check_numeric, nl_features, structure_stats};
use super::provider::{
    count_tokens, fix_execution_prompt, fix_semantics_prompt, refine_prompt, semantic_check_prompt, DraftRequest,
    LlmProvider, ProviderCall, ProviderError, RefineRequest, SemanticVerdict,
};
use crate::catalog::{ColumnMeta, DataType, JoinPath, SchemaCatalog};
use crate::model::TemplateSpec;
use crate::profiler::Surface;

/// What the mock does when asked to refine a template.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Attach a cost surface that spans the target interval.
    #[default]
    Targeted,
    /// Attach a constant surface at the parent's highest observed cost.
    Useless,
    /// Return the parent unchanged.
    Passthrough,
    /// Fail the request.
    Fail,
}

/// Number of bad drafts per spec, in the order specs are first seen. A
/// semantic fault needs that many `fix_semantics` calls to clear, and
/// likewise for syntax faults and `fix_execution`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub semantic: Vec<u32>,
    #[serde(default)]
    pub syntax: Vec<u32>,
}

impl FaultPlan {
    /// 24 specs: 2 correct from the start and 8 executable from the start;
    /// every fault clears within three fixes.
    pub fn calibrated_24() -> Self {
        let mut semantic = vec![0, 0];
        semantic.extend([1; 8]);
        semantic.extend([2; 8]);
        semantic.extend([3; 6]);
        let mut syntax = vec![0; 8];
        syntax.extend([1; 8]);
        syntax.extend([2; 5]);
        syntax.extend([3; 3]);
        // Spread syntax faults so they do not line up with semantic ones.
        syntax.rotate_left(5);
        Self { semantic, syntax }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub refine: RefineMode,
    /// Modes for successive refinement requests; `refine` applies after the
    /// script runs out.
    #[serde(default)]
    pub refine_script: Vec<RefineMode>,
    #[serde(default)]
    pub faults: FaultPlan,
}

struct DraftState {
    clean: String,
    semantic_left: u32,
    syntax_left: u32,
    enforceable: bool,
}

pub struct MockProvider {
    config: MockConfig,
    rng: ChaCha8Rng,
    catalog: Option<SchemaCatalog>,
    specs_seen: Vec<String>,
    drafts: BTreeMap<String, DraftState>,
    origin: HashMap<String, String>,
    refinements: usize,
    calls: Vec<ProviderCall>,
}

impl MockProvider {
    pub fn new(config: MockConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            config,
            rng,
            catalog: None,
            specs_seen: vec![],
            drafts: BTreeMap::new(),
            origin: HashMap::new(),
            refinements: 0,
            calls: vec![],
        }
    }

    pub fn with_catalog(mut self, catalog: SchemaCatalog) -> Self {
        self.catalog = Some(catalog);
        self
    }

    fn record(&mut self, operation: &str, prompt: &str, response: &str) {
        self.calls.push(ProviderCall {
            operation: operation.into(),
            prompt_tokens: count_tokens(prompt),
            completion_tokens: count_tokens(response),
            cached: false,
        });
    }

    fn render(&mut self, spec_id: &str) -> String {
        let state = &self.drafts[spec_id];
        let mut sql = state.clean.clone();
        if state.semantic_left > 0 && state.enforceable {
            sql = add_stray_aggregate(&sql, state.semantic_left);
        }
        if state.syntax_left > 0 {
            sql = break_keyword(&sql);
        }
        self.origin.insert(sql.clone(), spec_id.to_string());
        sql
    }

    fn next_refine_mode(&mut self) -> RefineMode {
        let mode = self.config.refine_script.get(self.refinements).copied().unwrap_or(self.config.refine);
        self.refinements += 1;
        mode
    }
}

/// Adds an extra aggregate column, so an exact aggregation count is missed.
fn add_stray_aggregate(sql: &str, variant: u32) -> String {
    let (notes, body) = split_notes(sql);
    let table = first_table(&body).unwrap_or_else(|| "1".into());
    let body = body.replacen(
        "SELECT ",
        &format!("SELECT (SELECT COUNT(*) FROM {table}) AS extra_count_{variant}, "),
        1,
    );
    join_notes(&notes, &body)
}

fn break_keyword(sql: &str) -> String {
    let (notes, body) = split_notes(sql);
    join_notes(&notes, &body.replacen("SELECT", "SELEC", 1))
}

fn split_notes(sql: &str) -> (Vec<String>, String) {
    let mut notes = Vec::new();
    let mut body = Vec::new();
    for line in sql.lines() {
        if body.is_empty() && line.trim_start().starts_with("--") {
            notes.push(line.to_string());
        } else {
            body.push(line);
        }
    }
    (notes, body.join("\n"))
}

fn join_notes(notes: &[String], body: &str) -> String {
    if notes.is_empty() {
        body.to_string()
    } else {
        format!("{}\n{}", notes.join("\n"), body)
    }
}

fn first_table(body: &str) -> Option<String> {
    let mut words = body.split_whitespace();
    while let Some(w) = words.next() {
        if w.eq_ignore_ascii_case("FROM") {
            return words.next().map(|t| t.trim_end_matches(')').to_string());
        }
    }
    None
}

fn filterable(c: &ColumnMeta) -> bool {
    c.domain().is_ok()
}

fn numeric(c: &ColumnMeta) -> bool {
    matches!(c.data_type, DataType::Integer | DataType::Real) && c.is_rangeable()
}

/// A clean template for `spec` over `path`.
fn draft_sql<R: Rng + ?Sized>(spec: &TemplateSpec, path: &JoinPath, catalog: &SchemaCatalog, rng: &mut R) -> String {
    let alias: Vec<String> = (1..=path.tables.len()).map(|i| format!("t{i}")).collect();
    let alias_of = |table: &str| {
        let i = path.tables.iter().position(|t| t == table).expect("edge endpoint on path");
        alias[i].clone()
    };
    let columns: Vec<(String, &ColumnMeta)> = path
        .tables
        .iter()
        .zip(&alias)
        .filter_map(|(t, a)| catalog.table(t).map(|m| (a, m)))
        .flat_map(|(a, m)| m.columns.iter().map(move |c| (a.clone(), c)))
        .collect();
    let features = nl_features(&spec.nl_instructions.join("\n"));
    let aggs = spec.numeric.num_aggregations.unwrap_or(u32::from(features.aggregate));

    let mut select = Vec::new();
    let mut group_col = None;
    if features.group_by {
        let low_card: Vec<&(String, &ColumnMeta)> = columns
            .iter()
            .filter(|(_, c)| c.distinct_count > 1 && c.distinct_count <= 1000)
            .collect();
        let pick = low_card.choose(rng).copied().or(columns.first());
        if let Some((a, c)) = pick {
            let col = format!("{a}.{}", c.name);
            select.push(col.clone());
            group_col = Some(col);
        }
    }
    let measures: Vec<String> =
        columns.iter().filter(|(_, c)| numeric(c)).map(|(a, c)| format!("{a}.{}", c.name)).collect();
    const FUNCS: [&str; 4] = ["SUM", "AVG", "MIN", "MAX"];
    for i in 0..aggs {
        if i == 0 || measures.is_empty() {
            select.push(if i == 0 { "COUNT(*)".to_string() } else { format!("COUNT(*) AS n{i}") });
        } else {
            let m = measures.choose(rng).expect("non-empty");
            select.push(format!("{}({m})", FUNCS[(i as usize - 1) % FUNCS.len()]));
        }
    }
    if select.is_empty() {
        for (a, c) in columns.iter().take(3) {
            select.push(format!("{a}.{}", c.name));
        }
    }

    let mut from = format!("{} AS {}", path.tables[0], alias[0]);
    for (i, edge) in path.edges.iter().enumerate() {
        let next = &path.tables[i + 1];
        let cond = edge
            .from_columns
            .iter()
            .zip(&edge.to_columns)
            .map(|(f, t)| format!("{}.{f} = {}.{t}", alias_of(&edge.from_table), alias_of(&edge.to_table)))
            .collect::<Vec<_>>()
            .join(" AND ");
        from.push_str(&format!("\nJOIN {next} AS {} ON {cond}", alias[i + 1]));
    }

    let mut candidates: Vec<&(String, &ColumnMeta)> = columns
        .iter()
        .filter(|(_, c)| filterable(c) && c.distinct_count >= 2)
        .collect();
    // Wide numeric ranges first: they give the search room to move cost.
    candidates.sort_by_key(|(_, c)| std::cmp::Reverse((numeric(c) || c.data_type == DataType::Date, c.distinct_count.min(1_000_000))));
    candidates.truncate(4);
    let wanted = if candidates.is_empty() { 0 } else { rng.random_range(1..=2usize).min(candidates.len()) };
    let mut chosen: Vec<&(String, &ColumnMeta)> = candidates.choose_multiple(rng, wanted).copied().collect();
    chosen.sort_by(|a, b| (&a.0, &a.1.name).cmp(&(&b.0, &b.1.name)));

    let mut notes = Vec::new();
    let mut predicates = Vec::new();
    let table_of = |a: &str| path.tables[alias.iter().position(|x| x == a).expect("alias")].clone();
    for (i, (a, c)) in chosen.iter().enumerate() {
        let p = format!("p_{}", i + 1);
        notes.push(format!("-- {p}: {}.{}", table_of(a), c.name));
        let op = if c.is_rangeable() { if rng.random_bool(0.5) { "<=" } else { ">=" } } else { "=" };
        predicates.push(format!("{a}.{} {op} {{{p}}}", c.name));
    }
    if features.subquery {
        let table = &path.tables[0];
        let meta = catalog.table(table);
        let key = meta
            .and_then(|m| m.primary_key.first().cloned())
            .or_else(|| meta.and_then(|m| m.columns.first().map(|c| c.name.clone())));
        let inner = meta.and_then(|m| m.columns.iter().rfind(|c| numeric(c) && c.distinct_count >= 2));
        if let (Some(key), Some(inner)) = (key, inner) {
            let p = format!("p_{}", chosen.len() + 1);
            notes.push(format!("-- {p}: {table}.{}", inner.name));
            predicates.push(format!(
                "{}.{key} IN (SELECT {key} FROM {table} WHERE {} >= {{{p}}})",
                alias[0], inner.name
            ));
        }
    }

    let mut sql = String::new();
    for n in &notes {
        sql.push_str(n);
        sql.push('\n');
    }
    sql.push_str(&format!("SELECT {}\nFROM {from}", select.join(", ")));
    if !predicates.is_empty() {
        sql.push_str(&format!("\nWHERE {}", predicates.join("\n  AND ")));
    }
    if let Some(g) = group_col {
        sql.push_str(&format!("\nGROUP BY {g}"));
    }
    sql
}

fn strip_surface_hint(sql: &str) -> String {
    sql.lines()
        .filter(|l| !l.trim_start().starts_with("-- surface:"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl LlmProvider for MockProvider {
    fn generate(&mut self, request: &DraftRequest<'_>) -> Result<String, ProviderError> {
        if self.catalog.is_none() {
            self.catalog = Some(request.catalog.clone());
        }
        let spec_id = request.spec.id.clone();
        if !self.specs_seen.contains(&spec_id) {
            let i = self.specs_seen.len();
            self.specs_seen.push(spec_id.clone());
            let semantic = self.config.faults.semantic.get(i).copied().unwrap_or(0);
            let syntax = self.config.faults.syntax.get(i).copied().unwrap_or(0);
            let enforceable = request.spec.numeric.num_aggregations.is_some();
            if semantic > 0 && !enforceable {
                log::warn!("spec {spec_id}: semantic faults need an aggregation count to violate; ignoring them");
            }
            self.drafts.insert(
                spec_id.clone(),
                DraftState { clean: String::new(), semantic_left: semantic, syntax_left: syntax, enforceable },
            );
        }
        let clean = draft_sql(request.spec, request.path, request.catalog, &mut self.rng);
        self.drafts.get_mut(&spec_id).expect("registered").clean = clean;
        let out = self.render(&spec_id);
        self.record("generate", request.prompt, &out);
        Ok(out)
    }

    fn validate_semantics(&mut self, template: &str, spec: &TemplateSpec) -> Result<SemanticVerdict, ProviderError> {
        let catalog = self
            .catalog
            .as_ref()
            .ok_or_else(|| ProviderError::Config("mock provider has no catalog".into()))?;
        let stats = structure_stats(template, catalog);
        let mut violations = check_numeric(&stats, &spec.numeric);
        violations.extend(check_nl(&stats, nl_features(&spec.nl_instructions.join("\n"))));
        let verdict = SemanticVerdict { satisfied: violations.is_empty(), violations };
        let response = serde_json::to_string(&verdict).expect("verdict serializes");
        self.record("validate_semantics", &semantic_check_prompt(template, spec), &response);
        Ok(verdict)
    }

    fn fix_semantics(
        &mut self,
        template: &str,
        spec: &TemplateSpec,
        violations: &[String],
    ) -> Result<String, ProviderError> {
        let prompt = fix_semantics_prompt(template, spec, violations);
        let out = match self.drafts.get_mut(&spec.id) {
            Some(state) => {
                state.semantic_left = state.semantic_left.saturating_sub(1);
                self.render(&spec.id)
            }
            None => template.to_string(),
        };
        self.record("fix_semantics", &prompt, &out);
        Ok(out)
    }

    fn fix_execution(&mut self, template: &str, errors: &[String]) -> Result<String, ProviderError> {
        let prompt = fix_execution_prompt(template, errors);
        let out = match self.origin.get(template).cloned() {
            Some(spec_id) => {
                let state = self.drafts.get_mut(&spec_id).expect("registered");
                state.syntax_left = state.syntax_left.saturating_sub(1);
                self.render(&spec_id)
            }
            None => template.to_string(),
        };
        self.record("fix_execution", &prompt, &out);
        Ok(out)
    }

    fn refine_template(&mut self, request: &RefineRequest<'_>) -> Result<String, ProviderError> {
        let prompt = refine_prompt(request);
        let base = strip_surface_hint(request.parent_sql);
        let (lo, hi) = request.interval;
        let out = match self.next_refine_mode() {
            RefineMode::Targeted => {
                let margin = (hi - lo) * 0.25;
                let surface = Surface::Linear { lo: (lo - margin).max(0.0), hi: hi + margin };
                format!("{}\n{base}", surface.hint_line())
            }
            RefineMode::Useless => {
                let worst = request.costs.iter().copied().fold(f64::NAN, f64::max);
                let value = if worst.is_nan() { hi * 10.0 } else { worst };
                format!("{}\n{base}", Surface::Constant { value }.hint_line())
            }
            RefineMode::Passthrough => request.parent_sql.to_string(),
            RefineMode::Fail => {
                self.record("refine_template", &prompt, "");
                return Err(ProviderError::Request("scripted refinement failure".into()));
            }
        };
        self.record("refine_template", &prompt, &out);
        Ok(out)
    }

    fn calls(&self) -> &[ProviderCall] {
        &self.calls
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{enumerate_join_paths, tpch};
    use crate::forge::parse::parse_template;
    use crate::model::NumericConstraints;
    use crate::forge::usage_of;

    fn spec(joins: u32, aggs: u32, nl: &str) -> TemplateSpec {
        TemplateSpec {
            id: format!("s{joins}{aggs}"),
            numeric: NumericConstraints { num_joins: Some(joins), num_aggregations: Some(aggs), num_tables_accessed: None },
            nl_instructions: vec![nl.into()],
        }
    }

    fn planning_errors(sql: &str, cat: &SchemaCatalog) -> Vec<String> {
        let t = parse_template(sql, "t", cat, None).unwrap();
        let q = crate::model::instantiate(&t, &t.midpoint_bindings()).unwrap();
        crate::profiler::lint_sql(&q.sql_text)
    }

    #[test]
    fn drafts_satisfy_their_spec() {
        let cat = tpch();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for joins in 0..4u32 {
            let paths = enumerate_join_paths(&cat, joins as usize);
            for (i, path) in paths.iter().enumerate().take(5) {
                for (aggs, nl) in [(0, ""), (2, "group by a category"), (1, "use a nested subquery"), (3, "grouped, nested")] {
                    let s = spec(joins, aggs, nl);
                    let sql = draft_sql(&s, path, &cat, &mut rng);
                    let t = parse_template(&sql, &format!("t{i}"), &cat, Some(path)).unwrap();
                    let stats = structure_stats(&t.sql_text, &cat);
                    assert!(check_numeric(&stats, &s.numeric).is_empty(), "{sql}");
                    assert!(check_nl(&stats, nl_features(nl)).is_empty(), "{sql}");
                    assert!(planning_errors(&sql, &cat).is_empty(), "{sql}");
                }
            }
        }
    }

    #[test]
    fn faults_clear_after_scripted_fixes() {
        let cat = tpch();
        let path = enumerate_join_paths(&cat, 1).remove(0);
        let s = spec(1, 1, "");
        let mut m = MockProvider::new(MockConfig {
            faults: FaultPlan { semantic: vec![2], syntax: vec![1] },
            ..Default::default()
        });
        let sql = m.generate(&DraftRequest { prompt: "p", spec: &s, path: &path, catalog: &cat }).unwrap();
        assert!(!m.validate_semantics(&sql, &s).unwrap().satisfied);
        assert!(!planning_errors(&sql, &cat).is_empty());
        let sql = m.fix_semantics(&sql, &s, &[]).unwrap();
        assert!(!m.validate_semantics(&sql, &s).unwrap().satisfied);
        let sql = m.fix_execution(&sql, &[]).unwrap();
        assert!(planning_errors(&sql, &cat).is_empty());
        let sql = m.fix_semantics(&sql, &s, &[]).unwrap();
        assert!(m.validate_semantics(&sql, &s).unwrap().satisfied);
        assert_eq!(m.usage().calls, 7);
        assert_eq!(m.usage(), usage_of(m.calls()));
    }

    #[test]
    fn calibrated_plan_shape() {
        let p = FaultPlan::calibrated_24();
        assert_eq!(p.semantic.len(), 24);
        assert_eq!(p.syntax.len(), 24);
        assert_eq!(p.semantic.iter().filter(|&&n| n == 0).count(), 2);
        assert_eq!(p.syntax.iter().filter(|&&n| n == 0).count(), 8);
        assert!(p.semantic.iter().chain(&p.syntax).all(|&n| n <= 3));
    }
}
