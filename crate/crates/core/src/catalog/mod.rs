//! Schema metadata, the foreign-key join graph, join-path enumeration and
//! prompt-sized schema summaries.

mod fixtures;
mod introspect;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ColumnRef, Value, ValueDomain};

pub use fixtures::{builtin, imdb, tpch, users_orders, BUILTIN_CATALOGS};
pub use introspect::{
    introspect, is_read_only_statement, parse_pg_array, ConnectionConfig, ConnectionError, FixtureConnection,
    PgConnection, Rows, SqlConnection,
};

/// Upper bound on enumerated join paths per join count.
pub const MAX_JOIN_PATHS: usize = 50_000;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("catalog query failed: {0}")]
    Query(String),
    #[error("no join path with {0} joins")]
    NoPathForJoinCount(usize),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Integer,
    Real,
    Text,
    Date,
    Other,
}

impl DataType {
    /// Maps an `information_schema.columns.data_type` string.
    pub fn from_sql_type(name: &str) -> Self {
        let name = name.to_ascii_lowercase();
        match name.as_str() {
            "integer" | "bigint" | "smallint" | "int" | "int2" | "int4" | "int8" => DataType::Integer,
            "numeric" | "decimal" | "real" | "double precision" | "float4" | "float8" => DataType::Real,
            "text" | "character varying" | "character" | "varchar" | "char" | "bpchar" | "name" => DataType::Text,
            "date" => DataType::Date,
            _ => DataType::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DataType::Integer => "integer",
            DataType::Real => "real",
            DataType::Text => "text",
            DataType::Date => "date",
            DataType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub data_type: DataType,
    pub distinct_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<Value>,
    /// Frequent values from optimizer statistics, used for categorical
    /// domains.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub common_values: Vec<String>,
}

impl ColumnMeta {
    /// The value domain a placeholder bound to this column searches.
    pub fn domain(&self) -> Result<ValueDomain, String> {
        let err = |e: crate::model::ModelError| e.to_string();
        match (&self.min, &self.max) {
            (Some(Value::Int(lo)), Some(Value::Int(hi))) if self.data_type == DataType::Integer => {
                ValueDomain::int_range(*lo, *hi).map_err(err)
            }
            (Some(lo), Some(hi)) if self.data_type == DataType::Real || self.data_type == DataType::Integer => {
                let as_f64 = |v: &Value| match v {
                    Value::Int(i) => Some(*i as f64),
                    Value::Real(r) => Some(*r),
                    _ => None,
                };
                match (as_f64(lo), as_f64(hi)) {
                    (Some(lo), Some(hi)) => ValueDomain::real_range(lo, hi, self.distinct_count.max(1)).map_err(err),
                    _ => Err(format!("column {} has non-numeric bounds", self.name)),
                }
            }
            (Some(Value::Date(lo)), Some(Value::Date(hi))) => ValueDomain::date_range(*lo, *hi).map_err(err),
            _ if !self.common_values.is_empty() => {
                ValueDomain::categorical(self.common_values.iter().map(|s| Value::Text(s.clone())).collect())
                    .map_err(err)
            }
            _ => Err(format!("column {} has no usable statistics", self.name)),
        }
    }

    pub fn is_rangeable(&self) -> bool {
        matches!(self.data_type, DataType::Integer | DataType::Real | DataType::Date)
            && self.min.is_some()
            && self.max.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub row_count: u64,
    pub size_bytes: u64,
    pub columns: Vec<ColumnMeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub primary_key: Vec<String>,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// A foreign-key constraint: `from_table(from_columns)` references
/// `to_table(to_columns)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinEdge {
    pub from_table: String,
    pub from_columns: Vec<String>,
    pub to_table: String,
    pub to_columns: Vec<String>,
}

impl JoinEdge {
    pub fn new(from: ColumnRef, to: ColumnRef) -> Self {
        Self {
            from_table: from.table,
            from_columns: vec![from.column],
            to_table: to.table,
            to_columns: vec![to.column],
        }
    }

    pub fn touches(&self, table: &str) -> bool {
        self.from_table == table || self.to_table == table
    }

    /// The table at the other end, if `table` is an endpoint.
    pub fn other(&self, table: &str) -> Option<&str> {
        if self.from_table == table {
            Some(&self.to_table)
        } else if self.to_table == table {
            Some(&self.from_table)
        } else {
            None
        }
    }

    /// Column pairs `(from, to)` of the join condition.
    pub fn column_pairs(&self) -> impl Iterator<Item = (ColumnRef, ColumnRef)> + '_ {
        self.from_columns.iter().zip(&self.to_columns).map(|(a, b)| {
            (ColumnRef::new(&self.from_table, a), ColumnRef::new(&self.to_table, b))
        })
    }

    pub fn condition_text(&self) -> String {
        self.column_pairs()
            .map(|(a, b)| format!("{a} = {b}"))
            .collect::<Vec<_>>()
            .join(" AND ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexMeta {
    pub table: String,
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<TableMeta>,
    pub join_edges: Vec<JoinEdge>,
    #[serde(default)]
    pub indexes: Vec<IndexMeta>,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn column(&self, column: &ColumnRef) -> Option<&ColumnMeta> {
        self.table(&column.table)?.column(&column.column)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(CatalogError::Invalid(format!("duplicate table {}", t.name)));
            }
            for c in &t.columns {
                if c.distinct_count > t.row_count && t.row_count > 0 {
                    return Err(CatalogError::Invalid(format!(
                        "{}.{} has more distinct values than rows",
                        t.name, c.name
                    )));
                }
            }
        }
        for e in &self.join_edges {
            if e.from_columns.is_empty() || e.from_columns.len() != e.to_columns.len() {
                return Err(CatalogError::Invalid(format!("malformed join edge {e:?}")));
            }
            for (a, b) in e.column_pairs() {
                if self.column(&a).is_none() || self.column(&b).is_none() {
                    return Err(CatalogError::Invalid(format!("join edge {a} = {b} references a missing column")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes") + "\n"
    }
}

/// A chain of joins: `tables[i]` and `tables[i + 1]` are connected by
/// `edges[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPath {
    pub tables: Vec<String>,
    pub edges: Vec<JoinEdge>,
}

impl JoinPath {
    pub fn single(table: impl Into<String>) -> Self {
        Self { tables: vec![table.into()], edges: vec![] }
    }

    pub fn joins(&self) -> usize {
        self.edges.len()
    }

    pub fn tables_touched(&self) -> BTreeSet<&str> {
        self.tables.iter().map(String::as_str).collect()
    }

    pub fn describe(&self) -> String {
        if self.edges.is_empty() {
            return self.tables[0].clone();
        }
        self.edges.iter().map(JoinEdge::condition_text).collect::<Vec<_>>().join(" -> ")
    }
}

/// All simple chains of exactly `joins` edges, one orientation per chain.
/// With `joins == 0` every table is its own path.
///
/// Enumeration beyond [`MAX_JOIN_PATHS`] keeps a uniform reservoir sample.
pub fn enumerate_join_paths(catalog: &SchemaCatalog, joins: usize) -> Vec<JoinPath> {
    let mut tables: Vec<&str> = catalog.tables.iter().map(|t| t.name.as_str()).collect();
    tables.sort_unstable();
    if joins == 0 {
        return tables.into_iter().map(JoinPath::single).collect();
    }
    let mut out = Vec::new();
    let mut seen = 0usize;
    let mut reservoir_rng = ChaCha8Rng::seed_from_u64(joins as u64);
    let mut stack_tables = Vec::with_capacity(joins + 1);
    let mut stack_edges = Vec::with_capacity(joins);
    for start in &tables {
        stack_tables.push(*start);
        extend_paths(
            catalog,
            joins,
            &mut stack_tables,
            &mut stack_edges,
            &mut |path| {
                seen += 1;
                if out.len() < MAX_JOIN_PATHS {
                    out.push(path);
                } else {
                    let slot = reservoir_rng.random_range(0..seen);
                    if slot < MAX_JOIN_PATHS {
                        out[slot] = path;
                    }
                }
            },
        );
        stack_tables.pop();
    }
    if seen > MAX_JOIN_PATHS {
        log::warn!("{seen} join paths with {joins} joins; kept a sample of {MAX_JOIN_PATHS}");
    }
    out
}

fn extend_paths<'a>(
    catalog: &'a SchemaCatalog,
    joins: usize,
    tables: &mut Vec<&'a str>,
    edges: &mut Vec<&'a JoinEdge>,
    emit: &mut dyn FnMut(JoinPath),
) {
    if edges.len() == joins {
        // Keep the orientation whose first table sorts before its last.
        if tables[0] < tables[tables.len() - 1] {
            emit(JoinPath {
                tables: tables.iter().map(|t| t.to_string()).collect(),
                edges: edges.iter().map(|e| (*e).clone()).collect(),
            });
        }
        return;
    }
    let tail = tables[tables.len() - 1];
    for edge in &catalog.join_edges {
        let Some(next) = edge.other(tail) else { continue };
        if tables.contains(&next) {
            continue;
        }
        tables.push(next);
        edges.push(edge);
        extend_paths(catalog, joins, tables, edges, emit);
        edges.pop();
        tables.pop();
    }
}

/// Picks one path uniformly at random.
pub fn sample_join_path<'a, R: Rng + ?Sized>(
    paths: &'a [JoinPath],
    joins: usize,
    rng: &mut R,
) -> Result<&'a JoinPath, CatalogError> {
    paths.choose(rng).ok_or(CatalogError::NoPathForJoinCount(joins))
}

fn write_table(out: &mut String, catalog: &SchemaCatalog, table: &TableMeta) {
    let _ = write!(out, "- {} ({} rows, {} bytes)", table.name, table.row_count, table.size_bytes);
    if !table.primary_key.is_empty() {
        let _ = write!(out, ", primary key ({})", table.primary_key.join(", "));
    }
    out.push('\n');
    for c in &table.columns {
        let _ = write!(out, "    {} {}, {} distinct", c.name, c.data_type.as_str(), c.distinct_count);
        if let (Some(lo), Some(hi)) = (&c.min, &c.max) {
            let _ = write!(out, ", range [{lo}, {hi}]");
        }
        out.push('\n');
    }
    for ix in catalog.indexes.iter().filter(|ix| ix.table == table.name) {
        let _ = writeln!(out, "    index {} ({})", ix.name, ix.columns.join(", "));
    }
}

/// Schema summary restricted to the tables and joins of `path`.
pub fn summarize_for_prompt(catalog: &SchemaCatalog, path: &JoinPath) -> String {
    let mut out = String::from("Tables:\n");
    for name in &path.tables {
        if let Some(t) = catalog.table(name) {
            write_table(&mut out, catalog, t);
        }
    }
    if !path.edges.is_empty() {
        out.push_str("Join path:\n");
        for e in &path.edges {
            let _ = writeln!(out, "- {}", e.condition_text());
        }
    }
    out
}

/// Summary of the whole catalog.
pub fn summarize_catalog(catalog: &SchemaCatalog) -> String {
    let mut out = String::from("Tables:\n");
    for t in &catalog.tables {
        write_table(&mut out, catalog, t);
    }
    if !catalog.join_edges.is_empty() {
        out.push_str("Foreign keys:\n");
        for e in &catalog.join_edges {
            let _ = writeln!(out, "- {}", e.condition_text());
        }
    }
    out
}
