//! CSV export → local database build.
//!
//! Discovery walks a PhysioNet-style export (`hosp/`, `icu/` or flat),
//! column types are inferred from a sample prefix, null tokens are
//! normalized, and every table is loaded inside its own transaction. The
//! load pass re-checks every value against the sampled type; a late value
//! that does not fit widens the column and the table is reloaded, so the
//! stored schema always agrees with a full scan of the file.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rusqlite::{params_from_iter, Connection};
use serde::Serialize;
use thiserror::Error;

use crate::backend::{quote_ident, Affinity, ColumnSpec, LocalBackend};

pub const DEFAULT_NULL_TOKENS: &[&str] = &["", "NULL", "null", "None", "___", "N/A", "NA", "?"];
pub const DEFAULT_SAMPLE_ROWS: usize = 1000;

#[derive(Debug, Error)]
pub enum EtlError {
    #[error("cannot read directory {path}: {source}")]
    Discovery { path: String, source: io::Error },
    #[error("{first} and {second} both map to table {table:?}")]
    DuplicateTable { table: String, first: String, second: String },
    #[error("failed to load {path}: {message}")]
    Load { path: String, message: String },
    #[error("{path}: column {column:?} row {row}: value {value:?} does not fit {affinity}")]
    SchemaViolation {
        path: String,
        column: String,
        column_index: usize,
        row: u64,
        value: Option<String>,
        affinity: Affinity,
    },
    #[error("output {0} already exists (use --overwrite)")]
    OutputExists(String),
    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),
    #[error("built database failed to reopen read-only: {0}")]
    Reopen(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EtlError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSource {
    pub path: PathBuf,
    /// `hosp`, `icu` or empty for files at the root.
    pub module_prefix: String,
    pub table_name: String,
    pub compressed: bool,
}

#[derive(Debug, Clone)]
pub struct EtlOptions {
    pub sample_rows: usize,
    pub null_tokens: Vec<String>,
    pub overwrite: bool,
}

impl Default for EtlOptions {
    fn default() -> Self {
        Self {
            sample_rows: DEFAULT_SAMPLE_ROWS,
            null_tokens: DEFAULT_NULL_TOKENS.iter().map(|s| s.to_string()).collect(),
            overwrite: false,
        }
    }
}

impl EtlOptions {
    pub fn normalize<'a>(&self, cell: &'a str) -> Option<&'a str> {
        normalize_null_with(cell, &self.null_tokens)
    }
}

/// Trims the cell and maps members of the default null-token set to `None`.
pub fn normalize_null(cell: &str) -> Option<&str> {
    let trimmed = cell.trim();
    if DEFAULT_NULL_TOKENS.contains(&trimmed) {
        None
    } else {
        Some(trimmed)
    }
}

pub fn normalize_null_with<'a, S: AsRef<str>>(cell: &'a str, tokens: &[S]) -> Option<&'a str> {
    let trimmed = cell.trim();
    if tokens.iter().any(|t| t.as_ref() == trimmed) {
        None
    } else {
        Some(trimmed)
    }
}

/// Converts a file stem or header cell into `[a-z_][a-z0-9_]*`.
pub fn sanitize_name(raw: &str) -> String {
    let mut out: String = raw
        .trim()
        .trim_start_matches('\u{feff}')
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}

fn csv_stem(file_name: &str) -> Option<(&str, bool)> {
    let lower = file_name.to_ascii_lowercase();
    if lower.ends_with(".csv.gz") {
        Some((&file_name[..file_name.len() - 7], true))
    } else if lower.ends_with(".csv") {
        Some((&file_name[..file_name.len() - 4], false))
    } else {
        None
    }
}

const MODULE_DIRS: &[&str] = &["hosp", "icu"];

/// Finds every `*.csv` / `*.csv.gz` at the root and in `hosp/` and `icu/`.
/// Result is sorted by table name.
pub fn discover_files(root: &Path) -> Result<Vec<CsvSource>> {
    let mut sources = Vec::new();
    scan_dir(root, "", &mut sources)?;
    for module in MODULE_DIRS {
        let sub = root.join(module);
        if sub.is_dir() {
            scan_dir(&sub, module, &mut sources)?;
        }
    }
    sources.sort_by(|a, b| a.table_name.cmp(&b.table_name).then(a.path.cmp(&b.path)));
    for pair in sources.windows(2) {
        if pair[0].table_name == pair[1].table_name {
            return Err(EtlError::DuplicateTable {
                table: pair[0].table_name.clone(),
                first: pair[0].path.display().to_string(),
                second: pair[1].path.display().to_string(),
            });
        }
    }
    Ok(sources)
}

fn scan_dir(dir: &Path, prefix: &str, out: &mut Vec<CsvSource>) -> Result<()> {
    let discovery = |source| EtlError::Discovery { path: dir.display().to_string(), source };
    for entry in std::fs::read_dir(dir).map_err(discovery)? {
        let entry = entry.map_err(discovery)?;
        if !entry.file_type().map_err(discovery)?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((stem, compressed)) = csv_stem(&name) else {
            continue;
        };
        let stem = sanitize_name(stem);
        let table_name = if prefix.is_empty() { stem } else { format!("{prefix}_{stem}") };
        out.push(CsvSource { path: entry.path(), module_prefix: prefix.to_string(), table_name, compressed });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InferredType {
    pub affinity: Affinity,
    pub saw_null: bool,
}

pub fn parses_as_integer(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && s.parse::<i64>().is_ok()
}

/// Decimal or scientific notation only; `inf`, `nan` and hex are text.
pub fn parses_as_real(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    let mantissa_ok = (!int_part.is_empty() || !frac_part.is_empty())
        && int_part.bytes().all(|b| b.is_ascii_digit())
        && frac_part.bytes().all(|b| b.is_ascii_digit());
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && e.bytes().all(|b| b.is_ascii_digit())
    });
    mantissa_ok && exponent_ok && s.parse::<f64>().is_ok_and(f64::is_finite)
}

/// Streaming form of [`infer_column_type`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TypeInference {
    // None until the first present value
    affinity: Option<Affinity>,
    saw_null: bool,
}

impl TypeInference {
    pub fn observe(&mut self, cell: Option<&str>) {
        let Some(v) = cell else {
            self.saw_null = true;
            return;
        };
        let fits = |a: Affinity| match a {
            Affinity::Integer => parses_as_integer(v),
            Affinity::Real => parses_as_real(v),
            Affinity::Text => true,
        };
        let start = self.affinity.unwrap_or(Affinity::Integer);
        let ladder = [Affinity::Integer, Affinity::Real, Affinity::Text];
        let from = ladder.iter().position(|a| *a == start).unwrap_or(0);
        self.affinity = ladder[from..].iter().copied().find(|a| fits(*a));
    }

    pub fn finish(&self) -> InferredType {
        InferredType { affinity: self.affinity.unwrap_or(Affinity::Text), saw_null: self.saw_null }
    }

    fn from_spec(spec: &ColumnSpec) -> Self {
        Self { affinity: Some(spec.affinity), saw_null: spec.nullable }
    }
}

/// Least-general affinity consistent with every present sample
/// (integer ⊂ real ⊂ text). An all-null column is text.
pub fn infer_column_type(samples: &[Option<&str>]) -> InferredType {
    let mut inf = TypeInference::default();
    for s in samples {
        inf.observe(*s);
    }
    inf.finish()
}

fn open_reader(source: &CsvSource) -> Result<csv::Reader<Box<dyn Read>>> {
    let file = File::open(&source.path)
        .map_err(|e| EtlError::Load { path: source.path.display().to_string(), message: e.to_string() })?;
    let inner: Box<dyn Read> = if source.compressed {
        Box::new(MultiGzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(inner))
}

fn load_error(source: &CsvSource, e: impl std::fmt::Display) -> EtlError {
    EtlError::Load { path: source.path.display().to_string(), message: e.to_string() }
}

/// Lowercased, sanitized, de-duplicated header names.
pub fn read_header(source: &CsvSource) -> Result<Vec<String>> {
    let mut reader = open_reader(source)?;
    let header = reader.headers().map_err(|e| load_error(source, e))?.clone();
    let mut seen = HashSet::new();
    let mut names = Vec::with_capacity(header.len());
    for (i, raw) in header.iter().enumerate() {
        let base = if raw.trim().trim_start_matches('\u{feff}').is_empty() {
            format!("column_{}", i + 1)
        } else {
            sanitize_name(raw)
        };
        let mut name = base.clone();
        let mut n = 2;
        while !seen.insert(name.clone()) {
            name = format!("{base}_{n}");
            n += 1;
        }
        names.push(name);
    }
    Ok(names)
}

/// Infers a schema from the first `options.sample_rows` well-formed rows.
pub fn infer_schema(source: &CsvSource, options: &EtlOptions) -> Result<Vec<ColumnSpec>> {
    let names = read_header(source)?;
    let mut inference = vec![TypeInference::default(); names.len()];
    let mut reader = open_reader(source)?;
    let mut record = csv::StringRecord::new();
    let mut sampled = 0;
    while sampled < options.sample_rows && reader.read_record(&mut record).map_err(|e| load_error(source, e))? {
        if record.len() != names.len() {
            continue;
        }
        for (inf, cell) in inference.iter_mut().zip(record.iter()) {
            inf.observe(options.normalize(cell));
        }
        sampled += 1;
    }
    Ok(names
        .into_iter()
        .zip(inference)
        .map(|(name, inf)| {
            let t = inf.finish();
            ColumnSpec { name, affinity: t.affinity, nullable: t.saw_null }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LoadStats {
    pub inserted: u64,
    pub rejected: u64,
}

fn create_table_sql(table: &str, schema: &[ColumnSpec]) -> String {
    let cols: Vec<String> = schema
        .iter()
        .map(|c| {
            let mut def = format!("{} {}", quote_ident(&c.name), c.affinity.sql_type());
            if !c.nullable {
                def.push_str(" NOT NULL");
            }
            def
        })
        .collect();
    format!("CREATE TABLE {} ({})", quote_ident(table), cols.join(", "))
}

/// Creates `source.table_name` with `schema` and inserts every data row.
/// Rows whose field count differs from the header are skipped and counted.
/// A value that does not fit its column's affinity (or a null in a
/// non-nullable column) stops the load with [`EtlError::SchemaViolation`].
pub fn load_table(
    conn: &Connection,
    source: &CsvSource,
    schema: &[ColumnSpec],
    options: &EtlOptions,
) -> Result<LoadStats> {
    conn.execute_batch(&create_table_sql(&source.table_name, schema))?;
    let placeholders = vec!["?"; schema.len()].join(", ");
    let insert = format!("INSERT INTO {} VALUES ({placeholders})", quote_ident(&source.table_name));
    let mut stmt = conn.prepare(&insert)?;
    let mut reader = open_reader(source)?;
    let mut record = csv::StringRecord::new();
    let mut stats = LoadStats::default();
    let mut values: Vec<rusqlite::types::Value> = Vec::with_capacity(schema.len());
    let mut row_no = 0u64;
    while reader.read_record(&mut record).map_err(|e| load_error(source, e))? {
        row_no += 1;
        if record.len() != schema.len() {
            stats.rejected += 1;
            continue;
        }
        values.clear();
        for (idx, (spec, cell)) in schema.iter().zip(record.iter()).enumerate() {
            let cell = options.normalize(cell);
            let coerced = coerce(cell, spec);
            match coerced {
                Some(v) => values.push(v),
                None => {
                    return Err(EtlError::SchemaViolation {
                        path: source.path.display().to_string(),
                        column: spec.name.clone(),
                        column_index: idx,
                        row: row_no,
                        value: cell.map(str::to_string),
                        affinity: spec.affinity,
                    })
                }
            }
        }
        stmt.execute(params_from_iter(values.iter()))?;
        stats.inserted += 1;
    }
    Ok(stats)
}

fn coerce(cell: Option<&str>, spec: &ColumnSpec) -> Option<rusqlite::types::Value> {
    use rusqlite::types::Value as V;
    let Some(v) = cell else {
        return spec.nullable.then_some(V::Null);
    };
    match spec.affinity {
        Affinity::Integer => parses_as_integer(v).then(|| V::Integer(v.parse().unwrap())),
        Affinity::Real => parses_as_real(v).then(|| V::Real(v.parse().unwrap())),
        Affinity::Text => Some(V::Text(v.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableReport {
    pub table: String,
    pub source: String,
    pub rows: u64,
    pub rejected: u64,
    /// How many times a late value forced the table to be reloaded.
    pub widenings: u32,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub tables: usize,
    pub rows: u64,
    pub rejected: u64,
    pub per_table: Vec<TableReport>,
}

impl std::fmt::Display for BuildReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tables={} rows={} rejected={}", self.tables, self.rows, self.rejected)?;
        for t in &self.per_table {
            write!(f, "  {:<28} rows={:<8} rejected={}", t.table, t.rows, t.rejected)?;
            if t.widenings > 0 {
                write!(f, " widened={}", t.widenings)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Builds a fresh database at `out` from every CSV under `root`.
///
/// The file is written under a temporary sibling name and renamed into
/// place only after every table loaded and the result reopened read-only;
/// any failure removes the partial file.
pub fn build_database(root: &Path, out: &Path, options: &EtlOptions) -> Result<BuildReport> {
    if out.exists() && !options.overwrite {
        return Err(EtlError::OutputExists(out.display().to_string()));
    }
    let sources = discover_files(root)?;
    let mut partial = out.as_os_str().to_owned();
    partial.push(".building");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        std::fs::remove_file(&partial)?;
    }
    let result = build_into(&sources, &partial, options);
    match result {
        Ok(report) => {
            if out.exists() {
                std::fs::remove_file(out)?;
            }
            std::fs::rename(&partial, out)?;
            if let Err(e) = LocalBackend::open(out) {
                let _ = std::fs::remove_file(out);
                return Err(EtlError::Reopen(e.to_string()));
            }
            Ok(report)
        }
        Err(e) => {
            let _ = std::fs::remove_file(&partial);
            Err(e)
        }
    }
}

fn build_into(sources: &[CsvSource], path: &Path, options: &EtlOptions) -> Result<BuildReport> {
    let mut conn = Connection::open(path)?;
    conn.execute_batch("PRAGMA journal_mode = DELETE; PRAGMA synchronous = OFF;")?;
    let mut per_table = Vec::with_capacity(sources.len());
    for source in sources {
        log::info!("loading {} from {}", source.table_name, source.path.display());
        let mut schema = infer_schema(source, options)?;
        let mut widenings = 0;
        let stats = loop {
            let tx = conn.transaction()?;
            match load_table(&tx, source, &schema, options) {
                Ok(stats) => {
                    tx.commit()?;
                    break stats;
                }
                Err(EtlError::SchemaViolation { column_index, value, row, .. }) => {
                    drop(tx);
                    let spec = &mut schema[column_index];
                    let mut inf = TypeInference::from_spec(spec);
                    inf.observe(value.as_deref());
                    let widened = inf.finish();
                    log::info!(
                        "{}: column {} widened to {} at row {row}",
                        source.table_name,
                        spec.name,
                        widened.affinity
                    );
                    spec.affinity = widened.affinity;
                    spec.nullable = widened.saw_null;
                    widenings += 1;
                }
                Err(e) => return Err(e),
            }
        };
        if stats.rejected > 0 {
            log::warn!("{}: rejected {} malformed rows", source.table_name, stats.rejected);
        }
        per_table.push(TableReport {
            table: source.table_name.clone(),
            source: source.path.display().to_string(),
            rows: stats.inserted,
            rejected: stats.rejected,
            widenings,
            columns: schema,
        });
    }
    conn.close().map_err(|(_, e)| EtlError::Database(e))?;
    Ok(BuildReport {
        tables: per_table.len(),
        rows: per_table.iter().map(|t| t.rows).sum(),
        rejected: per_table.iter().map(|t| t.rejected).sum(),
        per_table,
    })
}
