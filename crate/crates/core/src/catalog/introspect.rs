//! Reading catalog metadata over a SQL connection.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CatalogError, ColumnMeta, DataType, IndexMeta, JoinEdge, SchemaCatalog, TableMeta};
use crate::model::{Value, CATEGORICAL_CAP};

#[derive(Debug, Error)]
pub enum ConnectionError {
    #[error("{0}")]
    Connect(String),
    #[error("{0}")]
    Permission(String),
    #[error("{0}")]
    Query(String),
}

impl From<ConnectionError> for CatalogError {
    fn from(e: ConnectionError) -> Self {
        match e {
            ConnectionError::Connect(m) => CatalogError::ConnectionFailed(m),
            ConnectionError::Permission(m) => CatalogError::PermissionDenied(m),
            ConnectionError::Query(m) => CatalogError::Query(m),
        }
    }
}

/// Rows of text cells; `None` is SQL NULL.
pub type Rows = Vec<Vec<Option<String>>>;

pub trait SqlConnection {
    fn query(&mut self, sql: &str) -> Result<Rows, ConnectionError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionConfig {
    /// A `postgres://` URL, or `fixture://<name>` for a built-in catalog.
    pub url: String,
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_timeout")]
    pub connect_timeout_secs: u64,
}

fn default_schema() -> String {
    "public".into()
}

fn default_timeout() -> u64 {
    10
}

impl ConnectionConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), schema: default_schema(), connect_timeout_secs: default_timeout() }
    }

    pub fn fixture_name(&self) -> Option<&str> {
        self.url.strip_prefix("fixture://")
    }

    /// Opens the connection the URL names.
    pub fn open(&self) -> Result<Box<dyn SqlConnection>, ConnectionError> {
        if let Some(name) = self.fixture_name() {
            let catalog = super::builtin(name)
                .ok_or_else(|| ConnectionError::Connect(format!("unknown fixture database {name}")))?;
            return Ok(Box::new(FixtureConnection::new(catalog)));
        }
        Ok(Box::new(PgConnection::connect(self)?))
    }
}

/// True for statements that cannot modify data: a single SELECT, WITH,
/// EXPLAIN (without ANALYZE) or SHOW.
pub fn is_read_only_statement(sql: &str) -> bool {
    let body: String = sql
        .lines()
        .filter(|l| !l.trim_start().starts_with("--"))
        .collect::<Vec<_>>()
        .join("\n");
    let body = body.trim().trim_end_matches(';').trim();
    if body.contains(';') {
        return false;
    }
    let upper = body.to_ascii_uppercase();
    let first = upper.split_whitespace().next().unwrap_or("");
    if !matches!(first, "SELECT" | "WITH" | "EXPLAIN" | "SHOW") {
        return false;
    }
    if first == "EXPLAIN" && upper.contains("ANALYZE") {
        return false;
    }
    const MUTATING: &[&str] =
        &["INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "CREATE", "TRUNCATE", "GRANT", "REVOKE", "COPY", "VACUUM"];
    !upper
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .any(|word| MUTATING.contains(&word))
}

/// Parses PostgreSQL's text form of a one-dimensional array, e.g.
/// `{1,2,"a b"}`.
pub fn parse_pg_array(text: &str) -> Vec<String> {
    let inner = text.trim();
    let inner = inner.strip_prefix('{').and_then(|s| s.strip_suffix('}')).unwrap_or(inner);
    let mut out = Vec::new();
    let mut chars = inner.chars().peekable();
    while chars.peek().is_some() {
        let mut item = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            while let Some(c) = chars.next() {
                match c {
                    '\\' => {
                        if let Some(n) = chars.next() {
                            item.push(n);
                        }
                    }
                    '"' => break,
                    c => item.push(c),
                }
            }
            // Skip to the separator.
            for c in chars.by_ref() {
                if c == ',' {
                    break;
                }
            }
            out.push(item);
        } else {
            for c in chars.by_ref() {
                if c == ',' {
                    break;
                }
                item.push(c);
            }
            if item != "NULL" {
                out.push(item);
            }
        }
    }
    out
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn tables_sql(schema: &str) -> String {
    format!(
        "SELECT c.relname, GREATEST(c.reltuples, 0)::bigint, pg_total_relation_size(c.oid) \
         FROM pg_class c JOIN pg_namespace n ON n.oid = c.relnamespace \
         WHERE n.nspname = {} AND c.relkind IN ('r', 'p') ORDER BY c.relname",
        quote_literal(schema)
    )
}

fn columns_sql(schema: &str) -> String {
    format!(
        "SELECT c.table_name, c.column_name, c.data_type FROM information_schema.columns c \
         WHERE c.table_schema = {} ORDER BY c.table_name, c.ordinal_position",
        quote_literal(schema)
    )
}

fn stats_sql(schema: &str) -> String {
    format!(
        "SELECT s.tablename, s.attname, s.n_distinct::text, s.histogram_bounds::text, s.most_common_vals::text \
         FROM pg_stats s WHERE s.schemaname = {} ORDER BY s.tablename, s.attname",
        quote_literal(schema)
    )
}

fn primary_keys_sql(schema: &str) -> String {
    format!(
        "SELECT cl.relname, a.attname FROM pg_constraint con \
         JOIN pg_class cl ON cl.oid = con.conrelid \
         JOIN pg_namespace n ON n.oid = cl.relnamespace \
         CROSS JOIN LATERAL unnest(con.conkey) WITH ORDINALITY AS k(attnum, ord) \
         JOIN pg_attribute a ON a.attrelid = con.conrelid AND a.attnum = k.attnum \
         WHERE con.contype = 'p' AND n.nspname = {} ORDER BY cl.relname, k.ord",
        quote_literal(schema)
    )
}

fn foreign_keys_sql(schema: &str) -> String {
    format!(
        "SELECT con.conname, cl.relname, a.attname, rcl.relname, ra.attname FROM pg_constraint con \
         JOIN pg_class cl ON cl.oid = con.conrelid \
         JOIN pg_class rcl ON rcl.oid = con.confrelid \
         JOIN pg_namespace n ON n.oid = cl.relnamespace \
         CROSS JOIN LATERAL unnest(con.conkey, con.confkey) WITH ORDINALITY AS k(attnum, rattnum, ord) \
         JOIN pg_attribute a ON a.attrelid = con.conrelid AND a.attnum = k.attnum \
         JOIN pg_attribute ra ON ra.attrelid = con.confrelid AND ra.attnum = k.rattnum \
         WHERE con.contype = 'f' AND n.nspname = {} ORDER BY cl.relname, con.conname, k.ord",
        quote_literal(schema)
    )
}

fn indexes_sql(schema: &str) -> String {
    format!(
        "SELECT t.relname, i.relname, a.attname FROM pg_index ix \
         JOIN pg_class t ON t.oid = ix.indrelid \
         JOIN pg_class i ON i.oid = ix.indexrelid \
         JOIN pg_namespace n ON n.oid = t.relnamespace \
         CROSS JOIN LATERAL unnest(ix.indkey::int2[]) WITH ORDINALITY AS k(attnum, ord) \
         JOIN pg_attribute a ON a.attrelid = t.oid AND a.attnum = k.attnum \
         WHERE n.nspname = {} ORDER BY t.relname, i.relname, k.ord",
        quote_literal(schema)
    )
}

fn cell(row: &[Option<String>], i: usize) -> Result<&str, CatalogError> {
    row.get(i)
        .and_then(|c| c.as_deref())
        .ok_or_else(|| CatalogError::Query(format!("missing value in column {i} of a catalog row")))
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, CatalogError> {
    s.trim().parse().map_err(|_| CatalogError::Query(format!("not a number: {s}")))
}

fn typed_bounds(data_type: DataType, values: &[String]) -> (Option<Value>, Option<Value>) {
    let parsed: Vec<Value> = match data_type {
        DataType::Integer => values.iter().filter_map(|v| v.parse::<i64>().ok().map(Value::Int)).collect(),
        DataType::Real => values.iter().filter_map(|v| v.parse::<f64>().ok().map(Value::Real)).collect(),
        DataType::Date => {
            values.iter().filter_map(|v| NaiveDate::parse_from_str(v, "%Y-%m-%d").ok().map(Value::Date)).collect()
        }
        _ => return (None, None),
    };
    let key = |v: &Value| match v {
        Value::Int(i) => *i as f64,
        Value::Real(r) => *r,
        Value::Date(d) => d.num_days_from_ce() as f64,
        Value::Text(_) => 0.0,
    };
    let min = parsed.iter().min_by(|a, b| key(a).total_cmp(&key(b))).cloned();
    let max = parsed.iter().max_by(|a, b| key(a).total_cmp(&key(b))).cloned();
    (min, max)
}

/// Reads tables, columns, statistics, keys and indexes of `schema` through
/// read-only catalog queries.
pub fn introspect(conn: &mut dyn SqlConnection, schema: &str) -> Result<SchemaCatalog, CatalogError> {
    let mut tables: BTreeMap<String, TableMeta> = BTreeMap::new();
    for row in conn.query(&tables_sql(schema))? {
        let name = cell(&row, 0)?.to_string();
        tables.insert(
            name.clone(),
            TableMeta {
                name,
                row_count: parse_num(cell(&row, 1)?)?,
                size_bytes: parse_num(cell(&row, 2)?)?,
                columns: vec![],
                primary_key: vec![],
            },
        );
    }
    for row in conn.query(&columns_sql(schema))? {
        if let Some(t) = tables.get_mut(cell(&row, 0)?) {
            t.columns.push(ColumnMeta {
                name: cell(&row, 1)?.to_string(),
                data_type: DataType::from_sql_type(cell(&row, 2)?),
                distinct_count: 0,
                min: None,
                max: None,
                common_values: vec![],
            });
        }
    }
    for row in conn.query(&stats_sql(schema))? {
        let Some(t) = tables.get_mut(cell(&row, 0)?) else { continue };
        let rows = t.row_count;
        let Some(c) = t.columns.iter_mut().find(|c| Some(c.name.as_str()) == row[1].as_deref()) else {
            continue;
        };
        if let Some(nd) = row.get(2).and_then(|v| v.as_deref()) {
            let nd: f64 = parse_num(nd)?;
            // Negative values are a fraction of the row count.
            let count = if nd < 0.0 { (-nd * rows as f64).round() } else { nd };
            c.distinct_count = if rows > 0 { (count as u64).min(rows) } else { count as u64 };
        }
        let mut values = Vec::new();
        if let Some(h) = row.get(3).and_then(|v| v.as_deref()) {
            values.extend(parse_pg_array(h));
        }
        if let Some(m) = row.get(4).and_then(|v| v.as_deref()) {
            values.extend(parse_pg_array(m));
        }
        let (min, max) = typed_bounds(c.data_type, &values);
        c.min = min;
        c.max = max;
        if c.data_type == DataType::Text {
            let mut seen = std::collections::BTreeSet::new();
            c.common_values = values.into_iter().filter(|v| seen.insert(v.clone())).take(CATEGORICAL_CAP).collect();
        }
    }
    for row in conn.query(&primary_keys_sql(schema))? {
        if let Some(t) = tables.get_mut(cell(&row, 0)?) {
            t.primary_key.push(cell(&row, 1)?.to_string());
        }
    }
    let mut edges: Vec<(String, JoinEdge)> = Vec::new();
    for row in conn.query(&foreign_keys_sql(schema))? {
        let (name, from, from_col, to, to_col) =
            (cell(&row, 0)?, cell(&row, 1)?, cell(&row, 2)?, cell(&row, 3)?, cell(&row, 4)?);
        match edges.iter_mut().find(|(n, e)| n == name && e.from_table == from) {
            Some((_, e)) => {
                e.from_columns.push(from_col.into());
                e.to_columns.push(to_col.into());
            }
            None => edges.push((
                name.to_string(),
                JoinEdge {
                    from_table: from.into(),
                    from_columns: vec![from_col.into()],
                    to_table: to.into(),
                    to_columns: vec![to_col.into()],
                },
            )),
        }
    }
    let mut indexes: Vec<IndexMeta> = Vec::new();
    for row in conn.query(&indexes_sql(schema))? {
        let (table, name, column) = (cell(&row, 0)?, cell(&row, 1)?, cell(&row, 2)?);
        match indexes.iter_mut().find(|ix| ix.table == table && ix.name == name) {
            Some(ix) => ix.columns.push(column.into()),
            None => indexes.push(IndexMeta { table: table.into(), name: name.into(), columns: vec![column.into()] }),
        }
    }
    let catalog = SchemaCatalog {
        tables: tables.into_values().collect(),
        join_edges: edges.into_iter().map(|(_, e)| e).collect(),
        indexes,
    };
    catalog.validate()?;
    Ok(catalog)
}

/// A live PostgreSQL session. The session is put into read-only mode on
/// connect.
pub struct PgConnection {
    client: postgres::Client,
}

impl PgConnection {
    pub fn connect(config: &ConnectionConfig) -> Result<Self, ConnectionError> {
        let mut pg = postgres::Config::from_str(&config.url).map_err(|e| ConnectionError::Connect(e.to_string()))?;
        pg.connect_timeout(Duration::from_secs(config.connect_timeout_secs.max(1)));
        let mut client = pg.connect(postgres::NoTls).map_err(|e| ConnectionError::Connect(e.to_string()))?;
        client
            .batch_execute("SET default_transaction_read_only = on")
            .map_err(|e| ConnectionError::Connect(e.to_string()))?;
        Ok(Self { client })
    }
}

fn map_pg_error(e: postgres::Error) -> ConnectionError {
    if e.code() == Some(&postgres::error::SqlState::INSUFFICIENT_PRIVILEGE) {
        ConnectionError::Permission(e.to_string())
    } else if e.is_closed() {
        ConnectionError::Connect(e.to_string())
    } else {
        ConnectionError::Query(e.as_db_error().map(|d| d.message().to_string()).unwrap_or_else(|| e.to_string()))
    }
}

impl SqlConnection for PgConnection {
    fn query(&mut self, sql: &str) -> Result<Rows, ConnectionError> {
        let messages = self.client.simple_query(sql).map_err(map_pg_error)?;
        Ok(messages
            .into_iter()
            .filter_map(|m| match m {
                postgres::SimpleQueryMessage::Row(row) => {
                    Some((0..row.len()).map(|i| row.get(i).map(str::to_string)).collect())
                }
                _ => None,
            })
            .collect())
    }
}

/// Answers the introspection queries from an in-memory catalog, logging
/// every statement it receives.
pub struct FixtureConnection {
    catalog: SchemaCatalog,
    pub statements: Vec<String>,
}

impl FixtureConnection {
    pub fn new(catalog: SchemaCatalog) -> Self {
        Self { catalog, statements: Vec::new() }
    }

    fn stats_rows(&self) -> Rows {
        let quote = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut rows = Vec::new();
        for t in &self.catalog.tables {
            for c in &t.columns {
                let hist = match (&c.min, &c.max) {
                    (Some(lo), Some(hi)) => {
                        let plain = |v: &Value| match v {
                            Value::Date(d) => d.format("%Y-%m-%d").to_string(),
                            other => other.to_sql_literal(),
                        };
                        Some(format!("{{{},{}}}", plain(lo), plain(hi)))
                    }
                    _ => None,
                };
                let mcv = (!c.common_values.is_empty()).then(|| {
                    format!("{{{}}}", c.common_values.iter().map(|v| quote(v)).collect::<Vec<_>>().join(","))
                });
                rows.push(vec![
                    Some(t.name.clone()),
                    Some(c.name.clone()),
                    Some(c.distinct_count.to_string()),
                    hist,
                    mcv,
                ]);
            }
        }
        rows
    }
}

impl SqlConnection for FixtureConnection {
    fn query(&mut self, sql: &str) -> Result<Rows, ConnectionError> {
        self.statements.push(sql.to_string());
        let cat = &self.catalog;
        let s = |v: &str| Some(v.to_string());
        let rows: Rows = if sql.contains("pg_total_relation_size") {
            cat.tables
                .iter()
                .map(|t| vec![s(&t.name), Some(t.row_count.to_string()), Some(t.size_bytes.to_string())])
                .collect()
        } else if sql.contains("information_schema.columns") {
            cat.tables
                .iter()
                .flat_map(|t| {
                    t.columns.iter().map(move |c| {
                        let ty = match c.data_type {
                            DataType::Integer => "integer",
                            DataType::Real => "numeric",
                            DataType::Text => "character varying",
                            DataType::Date => "date",
                            DataType::Other => "bytea",
                        };
                        vec![s(&t.name), s(&c.name), s(ty)]
                    })
                })
                .collect()
        } else if sql.contains("pg_stats") {
            self.stats_rows()
        } else if sql.contains("contype = 'p'") {
            cat.tables
                .iter()
                .flat_map(|t| t.primary_key.iter().map(move |k| vec![s(&t.name), s(k)]))
                .collect()
        } else if sql.contains("contype = 'f'") {
            cat.join_edges
                .iter()
                .enumerate()
                .flat_map(|(i, e)| {
                    let name = format!("{}_fk{i}", e.from_table);
                    e.from_columns.iter().zip(&e.to_columns).map(move |(a, b)| {
                        vec![s(&name), s(&e.from_table), s(a), s(&e.to_table), s(b)]
                    })
                })
                .collect()
        } else if sql.contains("pg_index") {
            cat.indexes
                .iter()
                .flat_map(|ix| ix.columns.iter().map(move |c| vec![s(&ix.table), s(&ix.name), s(c)]))
                .collect()
        } else {
            return Err(ConnectionError::Query(format!("fixture database cannot answer: {sql}")));
        };
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrays() {
        assert_eq!(parse_pg_array("{1,2,3}"), vec!["1", "2", "3"]);
        assert_eq!(parse_pg_array(r#"{"a b","c\"d",e}"#), vec!["a b", "c\"d", "e"]);
        assert_eq!(parse_pg_array("{}"), Vec::<String>::new());
        assert_eq!(parse_pg_array("{NULL,x}"), vec!["x"]);
    }

    #[test]
    fn read_only_classifier() {
        assert!(is_read_only_statement("SELECT 1"));
        assert!(is_read_only_statement("-- c\nWITH x AS (SELECT 1) SELECT * FROM x;"));
        assert!(is_read_only_statement("EXPLAIN (FORMAT JSON) SELECT * FROM t"));
        assert!(!is_read_only_statement("EXPLAIN ANALYZE SELECT 1"));
        assert!(!is_read_only_statement("DELETE FROM t"));
        assert!(!is_read_only_statement("SELECT 1; DROP TABLE t"));
        assert!(!is_read_only_statement("WITH d AS (DELETE FROM t RETURNING *) SELECT * FROM d"));
        // Identifiers containing keywords are fine.
        assert!(is_read_only_statement("SELECT updated_at FROM t"));
    }

    #[test]
    fn fixture_round_trip() {
        for (name, make) in super::super::BUILTIN_CATALOGS {
            let original = make();
            let mut conn = FixtureConnection::new(original.clone());
            let got = introspect(&mut conn, "public").unwrap();
            let mut want = original.clone();
            want.tables.sort_by(|a, b| a.name.cmp(&b.name));
            assert_eq!(got.tables, want.tables, "{name}");
            assert_eq!(got.join_edges, want.join_edges, "{name}");
            assert_eq!(got.indexes, want.indexes, "{name}");
            assert!(conn.statements.iter().all(|s| is_read_only_statement(s)));
        }
    }
}
