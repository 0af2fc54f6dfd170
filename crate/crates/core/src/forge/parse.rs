//! Turning provider output into templates and measuring SQL structure.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use crate::catalog::{JoinPath, SchemaCatalog};
use crate::model::{markers, ColumnRef, NumericConstraints, Placeholder, SqlTemplate};

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// The body of the first fenced code block, or the whole text.
pub fn strip_fences(text: &str) -> String {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let fence = re(&FENCE, r"(?s)```[A-Za-z]*\s*\n(.*?)```");
    match fence.captures(text) {
        Some(c) => c[1].trim().to_string(),
        None => text.trim().to_string(),
    }
}

/// `-- p_1: table.column` lines.
pub fn annotations(text: &str) -> BTreeMap<String, ColumnRef> {
    static ANNOTATION: OnceLock<Regex> = OnceLock::new();
    let annotation = re(
        &ANNOTATION,
        r"(?m)^\s*--\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)\s*$",
    );
    annotation
        .captures_iter(text)
        .map(|c| (c[1].to_string(), ColumnRef::new(&c[2], &c[3])))
        .collect()
}

/// Removes comment lines and blanks out string literals.
fn code_only(sql: &str) -> String {
    let no_comments: String = sql
        .lines()
        .map(|l| match l.find("--") {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = String::with_capacity(no_comments.len());
    let mut in_quote = false;
    for c in no_comments.chars() {
        if c == '\'' {
            in_quote = !in_quote;
            out.push('\'');
        } else if in_quote {
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

/// Alias (lowercased) to table name, from `FROM`/`JOIN` clauses.
fn aliases(code: &str) -> BTreeMap<String, String> {
    static FROM: OnceLock<Regex> = OnceLock::new();
    let from = re(
        &FROM,
        r"(?i)\b(?:FROM|JOIN)\s+([A-Za-z_][A-Za-z0-9_]*)(?:\s+(?:AS\s+)?([A-Za-z_][A-Za-z0-9_]*))?",
    );
    const KEYWORDS: &[&str] = &[
        "where", "join", "inner", "left", "right", "full", "cross", "on", "group", "order", "limit", "having", "union",
        "natural", "using",
    ];
    let mut map = BTreeMap::new();
    for c in from.captures_iter(code) {
        let table = c[1].to_string();
        map.insert(table.to_ascii_lowercase(), table.clone());
        if let Some(alias) = c.get(2) {
            let a = alias.as_str().to_ascii_lowercase();
            if !KEYWORDS.contains(&a.as_str()) {
                map.insert(a, table);
            }
        }
    }
    map
}

/// Finds the column a marker is compared against, e.g. `o.amount >= {p_1}`.
fn infer_column(code: &str, name: &str, alias_map: &BTreeMap<String, String>) -> Option<ColumnRef> {
    let pattern = format!(
        r"(?i)([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)\s*(?:=|<>|!=|<=|>=|<|>|LIKE|BETWEEN)\s*\{{{}\}}",
        regex::escape(name)
    );
    let c = Regex::new(&pattern).ok()?.captures(code)?;
    let table = alias_map.get(&c[1].to_ascii_lowercase()).cloned().unwrap_or_else(|| c[1].to_string());
    Some(ColumnRef::new(table, &c[2]))
}

/// Builds a template from provider output, resolving each placeholder's
/// column from annotations or from the comparison it appears in.
pub fn parse_template(
    text: &str,
    id: &str,
    catalog: &SchemaCatalog,
    path: Option<&JoinPath>,
) -> Result<SqlTemplate, String> {
    let sql = strip_fences(text);
    let notes = annotations(&sql);
    let code = code_only(&sql);
    let alias_map = aliases(&code);
    let mut placeholders = Vec::new();
    for name in markers(&code) {
        let column = notes
            .get(&name)
            .cloned()
            .or_else(|| infer_column(&code, &name, &alias_map))
            .ok_or_else(|| format!("cannot tell which column placeholder {{{name}}} filters"))?;
        let meta = catalog.column(&column).ok_or_else(|| format!("placeholder {{{name}}} refers to unknown column {column}"))?;
        if let Some(path) = path {
            if !path.tables.contains(&column.table) {
                log::debug!("placeholder {name} filters {column}, outside the join path");
            }
        }
        let domain = meta.domain().map_err(|e| format!("placeholder {{{name}}}: {e}"))?;
        placeholders.push(Placeholder { name, column, domain });
    }
    SqlTemplate::new(id, sql, placeholders).map_err(|e| e.to_string())
}

/// Structural counts used to check numeric constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StructureStats {
    pub joins: u32,
    pub aggregations: u32,
    pub group_by: bool,
    pub subqueries: u32,
    pub placeholders: u32,
    pub tables: BTreeSet<String>,
}

pub fn structure_stats(sql: &str, catalog: &SchemaCatalog) -> StructureStats {
    static JOIN: OnceLock<Regex> = OnceLock::new();
    static AGG: OnceLock<Regex> = OnceLock::new();
    static GROUP: OnceLock<Regex> = OnceLock::new();
    static SUB: OnceLock<Regex> = OnceLock::new();
    let code = code_only(sql);
    let known: BTreeSet<String> = catalog.tables.iter().map(|t| t.name.to_ascii_lowercase()).collect();
    StructureStats {
        joins: re(&JOIN, r"(?i)\bJOIN\b").find_iter(&code).count() as u32,
        aggregations: re(&AGG, r"(?i)\b(?:COUNT|SUM|AVG|MIN|MAX)\s*\(").find_iter(&code).count() as u32,
        group_by: re(&GROUP, r"(?i)\bGROUP\s+BY\b").is_match(&code),
        subqueries: re(&SUB, r"(?i)\(\s*SELECT\b").find_iter(&code).count() as u32,
        placeholders: markers(&code).len() as u32,
        tables: aliases(&code).into_values().filter(|t| known.contains(&t.to_ascii_lowercase())).collect(),
    }
}

/// Violations of the numeric constraints, as human-readable lines.
pub fn check_numeric(stats: &StructureStats, constraints: &NumericConstraints) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |label: &str, want: Option<u32>, got: u32| {
        if let Some(want) = want {
            if want != got {
                out.push(format!("expected {want} {label}, found {got}"));
            }
        }
    };
    check("joins", constraints.num_joins, stats.joins);
    check("aggregations", constraints.num_aggregations, stats.aggregations);
    check("tables accessed", constraints.num_tables_accessed, stats.tables.len() as u32);
    out
}

/// Features requested by natural-language instructions that can be seen in
/// the SQL text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NlFeatures {
    pub group_by: bool,
    pub subquery: bool,
    pub aggregate: bool,
}

pub fn nl_features(instructions: &str) -> NlFeatures {
    let lower = instructions.to_ascii_lowercase();
    NlFeatures {
        group_by: lower.contains("group by") || lower.contains("grouping") || lower.contains("grouped"),
        subquery: lower.contains("subquer") || lower.contains("nested"),
        aggregate: lower.contains("aggregat"),
    }
}

pub fn check_nl(stats: &StructureStats, features: NlFeatures) -> Vec<String> {
    let mut out = Vec::new();
    if features.group_by && !stats.group_by {
        out.push("instructions ask for a GROUP BY clause".into());
    }
    if features.subquery && stats.subqueries == 0 {
        out.push("instructions ask for a nested subquery".into());
    }
    if features.aggregate && stats.aggregations == 0 {
        out.push("instructions ask for an aggregate".into());
    }
    out
}
