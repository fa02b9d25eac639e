//! Data-access layer.
//!
//! The local adapter reads a SQLite-format database file through a
//! connection opened read-only at the engine level, which is the second
//! read-only layer behind [`crate::sql_guard`]. The remote adapter keeps the
//! same interface for a cloud warehouse but every operation reports
//! not-implemented.
//!
//! A handle is confined to one thread at a time. Callers that want parallel
//! queries open independent handles on the same file.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::sql_guard::{tokenize, SqlToken, TokenKind};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot open database {path}: {message}")]
    Open { path: String, message: String },
    #[error("table {table:?} not found; call list_tables to see the available tables")]
    NotFound { table: String },
    #[error("{0}")]
    Query(String),
    #[error("read-only violation: {0}")]
    ReadOnly(String),
    #[error("{0} is not implemented for the remote backend")]
    NotImplemented(&'static str),
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    Remote,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Local => "local",
            BackendKind::Remote => "remote",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "local" | "sqlite" => Ok(BackendKind::Local),
            "remote" | "bigquery" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend {other:?}; expected local or remote")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Database file path (local) or endpoint (remote).
    pub location: String,
    pub default_max_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Affinity {
    Integer,
    Real,
    Text,
}

impl Affinity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Affinity::Integer => "integer",
            Affinity::Real => "real",
            Affinity::Text => "text",
        }
    }

    /// Declared column type used when creating tables.
    pub fn sql_type(&self) -> &'static str {
        match self {
            Affinity::Integer => "INTEGER",
            Affinity::Real => "REAL",
            Affinity::Text => "TEXT",
        }
    }

    /// Maps a declared type from any SQLite-format file onto the three
    /// affinities, following the engine's substring rules except that
    /// date/time types count as text.
    pub fn from_declared(decl: &str) -> Affinity {
        let d = decl.to_ascii_uppercase();
        if d.contains("INT") {
            Affinity::Integer
        } else if d.contains("CHAR") || d.contains("CLOB") || d.contains("TEXT") {
            Affinity::Text
        } else if d.contains("REAL") || d.contains("FLOA") || d.contains("DOUB") {
            Affinity::Real
        } else if d.contains("DATE") || d.contains("TIME") || d.contains("BLOB") || d.is_empty() {
            Affinity::Text
        } else if d.contains("NUM") || d.contains("DEC") || d.contains("BOOL") {
            Affinity::Real
        } else {
            Affinity::Text
        }
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSpec {
    pub name: String,
    pub affinity: Affinity,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableSchema {
    pub table_name: String,
    pub columns: Vec<ColumnSpec>,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }
}

fn format_real(r: f64) -> String {
    if r.is_finite() && r.fract() == 0.0 && r.abs() < 1e15 {
        format!("{r:.1}")
    } else {
        r.to_string()
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_unit(),
            Value::Integer(i) => s.serialize_i64(*i),
            Value::Real(r) => s.serialize_f64(*r),
            Value::Text(t) => s.serialize_str(t),
        }
    }
}

impl From<ValueRef<'_>> for Value {
    fn from(v: ValueRef<'_>) -> Self {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::Real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::Text(format!("<blob {} bytes>", b.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub truncated: bool,
    /// Byte-identical copy of the SQL that ran.
    pub executed_sql: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostEstimate {
    pub estimated_rows_scanned: u64,
}

pub trait Backend: Send {
    fn kind(&self) -> BackendKind;

    fn location(&self) -> &str;

    /// User tables, sorted, engine-internal tables excluded.
    fn list_tables(&self) -> Result<Vec<String>>;

    fn describe_table(&self, table: &str) -> Result<TableSchema>;

    /// Runs already-validated SQL and returns at most `max_rows` rows.
    fn execute_select(&self, sql: &str, max_rows: usize) -> Result<ResultSet>;

    /// Upper-bound rows scanned: the sum of row counts of every table
    /// reference in FROM/JOIN clauses.
    fn estimate_cost(&self, sql: &str) -> Result<CostEstimate>;
}

pub fn open(config: &BackendConfig) -> Result<Box<dyn Backend>> {
    match config.kind {
        BackendKind::Local => Ok(Box::new(LocalBackend::open(&config.location)?)),
        BackendKind::Remote => Ok(Box::new(RemoteBackend { endpoint: config.location.clone() })),
    }
}

pub struct LocalBackend {
    conn: Connection,
    path: String,
}

impl LocalBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path_ref = path.as_ref();
        let shown = path_ref.display().to_string();
        let open_err = |message: String| BackendError::Open { path: shown.clone(), message };
        let meta = std::fs::metadata(path_ref).map_err(|e| open_err(e.to_string()))?;
        if !meta.is_file() {
            return Err(open_err("not a regular file".into()));
        }
        let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX;
        let conn = Connection::open_with_flags(path_ref, flags).map_err(|e| open_err(e.to_string()))?;
        conn.set_limit(rusqlite::limits::Limit::SQLITE_LIMIT_ATTACHED, 0);
        conn.execute_batch("PRAGMA query_only = ON").map_err(|e| open_err(e.to_string()))?;
        conn.query_row("SELECT COUNT(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))
            .map_err(|e| open_err(e.to_string()))?;
        Ok(Self { conn, path: shown })
    }

    pub fn path(&self) -> PathBuf {
        PathBuf::from(&self.path)
    }

    fn resolve_table(&self, table: &str) -> Result<String> {
        let found: Option<String> = self
            .conn
            .query_row(
                "SELECT name FROM sqlite_master WHERE type IN ('table','view') \
                 AND name = ?1 COLLATE NOCASE ORDER BY name LIMIT 1",
                [table],
                |r| r.get(0),
            )
            .ok();
        found.ok_or_else(|| BackendError::NotFound { table: table.to_string() })
    }

    fn row_count(&self, table: &str) -> Result<u64> {
        let sql = format!("SELECT COUNT(*) FROM {}", quote_ident(table));
        self.conn.query_row(&sql, [], |r| r.get::<_, i64>(0)).map(|n| n as u64).map_err(map_engine_error)
    }
}

pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn map_engine_error(e: rusqlite::Error) -> BackendError {
    if let rusqlite::Error::SqliteFailure(code, _) = &e {
        if code.code == rusqlite::ErrorCode::ReadOnly {
            return BackendError::ReadOnly(e.to_string());
        }
    }
    BackendError::Query(e.to_string())
}

impl Backend for LocalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn location(&self) -> &str {
        &self.path
    }

    fn list_tables(&self) -> Result<Vec<String>> {
        let mut stmt = self
            .conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\'")
            .map_err(map_engine_error)?;
        let mut names = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .map_err(map_engine_error)?
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(map_engine_error)?;
        names.sort();
        Ok(names)
    }

    fn describe_table(&self, table: &str) -> Result<TableSchema> {
        let name = self.resolve_table(table)?;
        let sql = format!("PRAGMA table_info({})", quote_ident(&name));
        let mut stmt = self.conn.prepare(&sql).map_err(map_engine_error)?;
        let columns = stmt
            .query_map([], |r| {
                let col: String = r.get(1)?;
                let decl: String = r.get::<_, Option<String>>(2)?.unwrap_or_default();
                let notnull: i64 = r.get(3)?;
                Ok(ColumnSpec { name: col, affinity: Affinity::from_declared(&decl), nullable: notnull == 0 })
            })
            .map_err(map_engine_error)?
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(map_engine_error)?;
        let row_count = self.row_count(&name)?;
        Ok(TableSchema { table_name: name, columns, row_count })
    }

    fn execute_select(&self, sql: &str, max_rows: usize) -> Result<ResultSet> {
        let max_rows = max_rows.max(1);
        let mut batch = rusqlite::Batch::new(&self.conn, sql);
        let Some(mut stmt) = batch.next().map_err(map_engine_error)? else {
            return Err(BackendError::Query("no statement to execute".into()));
        };
        // the engine would silently ignore anything after the first statement
        if !matches!(batch.next(), Ok(None)) {
            return Err(BackendError::Query("only one statement may be executed per call".into()));
        }
        if !stmt.readonly() {
            return Err(BackendError::ReadOnly("statement would modify the database".into()));
        }
        if stmt.column_count() == 0 {
            return Err(BackendError::Query("statement returns no result set".into()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
        let width = columns.len();
        let mut rows = Vec::new();
        let mut truncated = false;
        let mut cursor = stmt.query([]).map_err(map_engine_error)?;
        // fetch one sentinel row past the cap to detect truncation exactly
        while let Some(row) = cursor.next().map_err(map_engine_error)? {
            if rows.len() == max_rows {
                truncated = true;
                break;
            }
            let mut values = Vec::with_capacity(width);
            for i in 0..width {
                values.push(Value::from(row.get_ref(i).map_err(map_engine_error)?));
            }
            rows.push(values);
        }
        Ok(ResultSet { columns, rows, truncated, executed_sql: sql.to_string() })
    }

    fn estimate_cost(&self, sql: &str) -> Result<CostEstimate> {
        let mut total = 0u64;
        for table in referenced_tables(sql) {
            let name = self.resolve_table(&table)?;
            total += self.row_count(&name)?;
        }
        Ok(CostEstimate { estimated_rows_scanned: total })
    }
}

pub struct RemoteBackend {
    endpoint: String,
}

impl Backend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn location(&self) -> &str {
        &self.endpoint
    }

    fn list_tables(&self) -> Result<Vec<String>> {
        Err(BackendError::NotImplemented("list_tables"))
    }

    fn describe_table(&self, _table: &str) -> Result<TableSchema> {
        Err(BackendError::NotImplemented("describe_table"))
    }

    fn execute_select(&self, _sql: &str, _max_rows: usize) -> Result<ResultSet> {
        Err(BackendError::NotImplemented("execute_select"))
    }

    fn estimate_cost(&self, _sql: &str) -> Result<CostEstimate> {
        Err(BackendError::NotImplemented("estimate_cost"))
    }
}

fn unquote(tok: &SqlToken) -> String {
    let t = tok.text.as_str();
    let inner = match t.chars().next() {
        Some('"') | Some('`') | Some('[') if t.len() >= 2 => &t[1..t.len() - 1],
        _ => t,
    };
    inner.replace("\"\"", "\"").replace("``", "`")
}

/// Table names referenced after FROM/JOIN, one entry per reference, with
/// CTE names, subqueries and table-valued functions excluded.
pub fn referenced_tables(sql: &str) -> Vec<String> {
    let toks: Vec<SqlToken> = tokenize(sql).into_iter().filter(|t| !t.is_trivia()).collect();
    let ctes = cte_names(&toks);
    let mut out = Vec::new();
    scan_refs(&toks, &ctes, &mut out);
    out
}

fn scan_refs(toks: &[SqlToken], ctes: &HashSet<String>, out: &mut Vec<String>) {
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        let list_allowed = t.is_keyword("FROM");
        if !(list_allowed || t.is_keyword("JOIN")) {
            i += 1;
            continue;
        }
        i += 1;
        while let Some(tok) = toks.get(i) {
            if tok.is_punct("(") {
                // derived table or parenthesised join: scan inside
                let end = skip_group(toks, i);
                scan_refs(&toks[i + 1..end.saturating_sub(1).max(i + 1)], ctes, out);
                i = end;
            } else if matches!(tok.kind, TokenKind::Identifier | TokenKind::Keyword) && !is_clause_keyword(tok) {
                let mut name = unquote(tok);
                i += 1;
                while toks.get(i).is_some_and(|t| t.is_punct("."))
                    && toks.get(i + 1).is_some_and(|t| t.kind == TokenKind::Identifier)
                {
                    name = unquote(&toks[i + 1]);
                    i += 2;
                }
                if toks.get(i).is_some_and(|t| t.is_punct("(")) {
                    i = skip_group(toks, i);
                } else if !ctes.contains(&name.to_ascii_lowercase()) {
                    out.push(name);
                }
            } else {
                break;
            }
            if toks.get(i).is_some_and(|t| t.is_keyword("AS")) {
                i += 1;
            }
            if toks.get(i).is_some_and(|t| t.kind == TokenKind::Identifier) {
                i += 1;
            }
            if list_allowed && toks.get(i).is_some_and(|t| t.is_punct(",")) {
                i += 1;
                continue;
            }
            break;
        }
    }
}

fn is_clause_keyword(tok: &SqlToken) -> bool {
    tok.kind == TokenKind::Keyword
        && [
            "SELECT",
            "WHERE",
            "GROUP",
            "ORDER",
            "LIMIT",
            "ON",
            "USING",
            "JOIN",
            "LEFT",
            "INNER",
            "CROSS",
            "NATURAL",
            "UNION",
            "EXCEPT",
            "INTERSECT",
            "HAVING",
            "WINDOW",
            "VALUES",
        ]
        .iter()
        .any(|k| tok.is_keyword(k))
}

/// Index just past the parenthesized group opening at `open`.
fn skip_group(toks: &[SqlToken], open: usize) -> usize {
    let mut depth = 0i64;
    let mut i = open;
    while i < toks.len() {
        if toks[i].is_punct("(") {
            depth += 1;
        } else if toks[i].is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return i + 1;
            }
        }
        i += 1;
    }
    toks.len()
}

fn cte_names(toks: &[SqlToken]) -> HashSet<String> {
    let mut names = HashSet::new();
    let mut i = 0;
    while i < toks.len() {
        if !toks[i].is_keyword("WITH") {
            i += 1;
            continue;
        }
        i += 1;
        if toks.get(i).is_some_and(|t| t.is_keyword("RECURSIVE")) {
            i += 1;
        }
        while let Some(name) = toks.get(i) {
            if name.kind != TokenKind::Identifier && name.kind != TokenKind::Keyword {
                break;
            }
            names.insert(unquote(name).to_ascii_lowercase());
            i += 1;
            if toks.get(i).is_some_and(|t| t.is_punct("(")) {
                i = skip_group(toks, i);
            }
            if !toks.get(i).is_some_and(|t| t.is_keyword("AS")) {
                break;
            }
            i += 1;
            while toks.get(i).is_some_and(|t| t.is_keyword("NOT") || t.is_keyword("MATERIALIZED")) {
                i += 1;
            }
            if toks.get(i).is_some_and(|t| t.is_punct("(")) {
                i = skip_group(toks, i);
            }
            if toks.get(i).is_some_and(|t| t.is_punct(",")) {
                i += 1;
                continue;
            }
            break;
        }
    }
    names
}
