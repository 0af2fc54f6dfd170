//! Optimizer estimates from `EXPLAIN (FORMAT JSON)`.

use std::collections::HashMap;

use super::oracle::{CostOracle, OracleError};
use crate::catalog::{is_read_only_statement, ConnectionError, SqlConnection};
use crate::model::{CostMetric, CostValue, SqlQuery, SqlTemplate};

/// Extracts the root node's total cost or row estimate from the JSON plan.
pub fn parse_explain_json(text: &str, metric: CostMetric) -> Result<f64, String> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("bad plan JSON: {e}"))?;
    let plan = doc
        .get(0)
        .and_then(|d| d.get("Plan"))
        .ok_or_else(|| "plan JSON has no root Plan".to_string())?;
    let key = match metric {
        CostMetric::PlanCost => "Total Cost",
        CostMetric::Cardinality => "Plan Rows",
    };
    plan.get(key)
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| format!("plan has no numeric \"{key}\""))
}

pub struct PostgresOracle {
    conn: Box<dyn SqlConnection>,
    metric: CostMetric,
    cache: HashMap<String, f64>,
    log: Vec<String>,
    evaluations: u64,
}

impl PostgresOracle {
    pub fn new(conn: Box<dyn SqlConnection>, metric: CostMetric) -> Self {
        Self { conn, metric, cache: HashMap::new(), log: vec![], evaluations: 0 }
    }

    fn explain(&mut self, sql: &str) -> Result<f64, OracleError> {
        if let Some(v) = self.cache.get(sql) {
            return Ok(*v);
        }
        if !is_read_only_statement(sql) {
            return Err(OracleError::QueryFailed("refusing to plan a statement that is not read-only".into()));
        }
        let statement = format!("EXPLAIN (FORMAT JSON) {}", sql.trim().trim_end_matches(';'));
        self.log.push(statement.clone());
        let rows = self.conn.query(&statement).map_err(|e| match e {
            ConnectionError::Connect(m) => OracleError::Unavailable(m),
            ConnectionError::Permission(m) | ConnectionError::Query(m) => OracleError::QueryFailed(m),
        })?;
        let text = rows
            .first()
            .and_then(|r| r.first())
            .and_then(|c| c.as_deref())
            .ok_or_else(|| OracleError::QueryFailed("EXPLAIN returned no rows".into()))?;
        let value = parse_explain_json(text, self.metric).map_err(OracleError::QueryFailed)?;
        self.cache.insert(sql.to_string(), value);
        Ok(value)
    }
}

impl CostOracle for PostgresOracle {
    fn metric(&self) -> CostMetric {
        self.metric
    }

    fn validate(&mut self, _template: &SqlTemplate, query: &SqlQuery) -> Result<Vec<String>, OracleError> {
        match self.explain(&query.sql_text) {
            Ok(_) => Ok(vec![]),
            Err(OracleError::QueryFailed(m)) => Ok(vec![m]),
            Err(e) => Err(e),
        }
    }

    fn evaluate(&mut self, _template: &SqlTemplate, query: &SqlQuery) -> Result<CostValue, OracleError> {
        let value = self.explain(&query.sql_text)?;
        self.evaluations += 1;
        Ok(CostValue { metric: self.metric, value })
    }

    fn call_log(&self) -> &[String] {
        &self.log
    }

    fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Rows;

    const PLAN: &str = r#"[{"Plan": {"Node Type": "Hash Join", "Startup Cost": 1.5, "Total Cost": 1234.56,
        "Plan Rows": 789, "Plan Width": 8, "Plans": [{"Node Type": "Seq Scan", "Total Cost": 99.0, "Plan Rows": 5}]}}]"#;

    struct Canned {
        fail_with: Option<ConnectionError>,
    }

    impl SqlConnection for Canned {
        fn query(&mut self, sql: &str) -> Result<Rows, ConnectionError> {
            assert!(sql.starts_with("EXPLAIN (FORMAT JSON) "));
            match self.fail_with.take() {
                Some(e) => Err(e),
                None => Ok(vec![vec![Some(PLAN.to_string())]]),
            }
        }
    }

    fn query(sql: &str) -> (SqlTemplate, SqlQuery) {
        let t = SqlTemplate::new("t", sql, vec![]).unwrap();
        let q = crate::model::instantiate(&t, &Default::default()).unwrap();
        (t, q)
    }

    #[test]
    fn parses_root_node() {
        assert_eq!(parse_explain_json(PLAN, CostMetric::PlanCost).unwrap(), 1234.56);
        assert_eq!(parse_explain_json(PLAN, CostMetric::Cardinality).unwrap(), 789.0);
        assert!(parse_explain_json("[]", CostMetric::PlanCost).is_err());
        assert!(parse_explain_json("not json", CostMetric::PlanCost).is_err());
    }

    #[test]
    fn caches_and_logs() {
        let mut o = PostgresOracle::new(Box::new(Canned { fail_with: None }), CostMetric::PlanCost);
        let (t, q) = query("SELECT * FROM t");
        assert_eq!(o.evaluate(&t, &q).unwrap().value, 1234.56);
        assert_eq!(o.evaluate(&t, &q).unwrap().value, 1234.56);
        assert_eq!(o.call_log().len(), 1);
        assert_eq!(o.evaluations(), 2);
        let (t, q) = query("DELETE FROM t");
        assert!(matches!(o.evaluate(&t, &q), Err(OracleError::QueryFailed(_))));
        assert_eq!(o.call_log().len(), 1);
    }

    #[test]
    fn connection_loss_is_unavailable() {
        let mut o = PostgresOracle::new(
            Box::new(Canned { fail_with: Some(ConnectionError::Connect("gone".into())) }),
            CostMetric::PlanCost,
        );
        let (t, q) = query("SELECT * FROM t");
        assert!(matches!(o.evaluate(&t, &q), Err(OracleError::Unavailable(_))));
        let mut o = PostgresOracle::new(
            Box::new(Canned { fail_with: Some(ConnectionError::Query("syntax error".into())) }),
            CostMetric::PlanCost,
        );
        assert_eq!(o.validate(&t, &q).unwrap(), vec!["syntax error".to_string()]);
    }
}
