use thiserror::Error;

use crate::catalog::is_read_only_statement;
use crate::model::{markers, CostMetric, CostValue, SqlQuery, SqlTemplate};

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    /// The oracle cannot be reached at all; callers treat this as fatal.
    #[error("cost oracle unavailable: {0}")]
    Unavailable(String),
    /// This query could not be costed.
    #[error("query failed: {0}")]
    QueryFailed(String),
}

/// Returns the cost of a query without modifying the database.
pub trait CostOracle {
    fn metric(&self) -> CostMetric;

    /// Problems that keep `query` from being planned. Empty means the query
    /// is executable.
    fn validate(&mut self, template: &SqlTemplate, query: &SqlQuery) -> Result<Vec<String>, OracleError>;

    fn evaluate(&mut self, template: &SqlTemplate, query: &SqlQuery) -> Result<CostValue, OracleError>;

    /// Every statement sent to the backend, in order.
    fn call_log(&self) -> &[String];

    /// Number of successful `evaluate` calls.
    fn evaluations(&self) -> u64;
}

/// Cheap structural checks shared by the oracles: a single read-only
/// SELECT with balanced parentheses and quotes and no leftover markers.
pub fn lint_sql(sql: &str) -> Vec<String> {
    let mut errors = Vec::new();
    let body: String = sql
        .lines()
        .filter(|l| !l.trim_start().starts_with("--"))
        .collect::<Vec<_>>()
        .join("\n");
    let first = body.split_whitespace().next().unwrap_or("").to_ascii_uppercase();
    if first != "SELECT" && first != "WITH" {
        errors.push(format!("syntax error at or near \"{}\"", body.split_whitespace().next().unwrap_or("")));
    }
    let mut depth = 0i64;
    let mut in_quote = false;
    for c in body.chars() {
        match c {
            '\'' => in_quote = !in_quote,
            '(' if !in_quote => depth += 1,
            ')' if !in_quote => {
                depth -= 1;
                if depth < 0 {
                    break;
                }
            }
            _ => {}
        }
    }
    if in_quote {
        errors.push("unterminated quoted string".into());
    }
    if depth != 0 {
        errors.push("unbalanced parentheses".into());
    }
    if !body.to_ascii_uppercase().contains("FROM") {
        errors.push("statement has no FROM clause".into());
    }
    let left = markers(&body);
    if !left.is_empty() {
        errors.push(format!("uninstantiated placeholders: {}", left.into_iter().collect::<Vec<_>>().join(", ")));
    }
    if errors.is_empty() && !is_read_only_statement(sql) {
        errors.push("statement is not read-only".into());
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lint() {
        assert!(lint_sql("SELECT a FROM t WHERE (a > 1)").is_empty());
        assert!(lint_sql("-- note\nSELECT a FROM t").is_empty());
        assert_eq!(lint_sql("SELEC a FROM t").len(), 1);
        assert!(!lint_sql("SELECT a FROM t WHERE (a > 1").is_empty());
        assert!(!lint_sql("SELECT a FROM t WHERE b = 'x").is_empty());
        assert!(!lint_sql("SELECT a FROM t WHERE b = {p_1}").is_empty());
        assert!(!lint_sql("SELECT 1 FROM t; DELETE FROM t").is_empty());
        assert!(lint_sql("SELECT a FROM t WHERE b = '(('").is_empty());
    }
}
