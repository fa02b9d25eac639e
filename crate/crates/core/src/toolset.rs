//! The nine MCP tools: six core database tools and three clinical
//! shortcuts. Every tool that runs SQL goes through the same pipeline
//! (validate → bounded execute → output cap → render) and returns the
//! executed SQL as its final text block.
//!
//! Clinical tools build SQL by interpolation: numbers only after an integer
//! parse, strings only after quote doubling.

use std::rc::Rc;

use serde_json::{json, Map, Value as Json};

use crate::access_control::{enforce_output, OutputPolicy};
use crate::backend::{Backend, BackendError, ResultSet, TableSchema};
use crate::render::{render_table, sql_block};
use crate::sql_guard::validate;
use crate::wire::{Server, ToolDescriptor, ToolHandler, WireError};

pub const SERVER_NAME: &str = "m3-gateway";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub text_blocks: Vec<String>,
    pub is_error: bool,
    /// Rows returned, for the audit log. Not sent on the wire.
    pub rows: Option<usize>,
}

impl ToolResult {
    pub fn text(s: impl Into<String>) -> Self {
        Self { text_blocks: vec![s.into()], is_error: false, rows: None }
    }

    pub fn error(s: impl Into<String>) -> Self {
        let s = s.into();
        Self { text_blocks: vec![if s.is_empty() { "error".into() } else { s }], is_error: true, rows: None }
    }

    pub fn joined(&self) -> String {
        self.text_blocks.join("\n")
    }
}

/// Table names the clinical tools target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalSchema {
    pub patients: String,
    pub admissions: String,
    pub icustays: String,
    pub labevents: String,
    pub d_labitems: String,
}

impl ClinicalSchema {
    /// Bare names, as in the EHRSQL benchmark database and flat builds.
    pub fn bare() -> Self {
        Self {
            patients: "patients".into(),
            admissions: "admissions".into(),
            icustays: "icustays".into(),
            labevents: "labevents".into(),
            d_labitems: "d_labitems".into(),
        }
    }

    /// Names produced by building from a `hosp/` + `icu/` export.
    pub fn prefixed() -> Self {
        Self {
            patients: "hosp_patients".into(),
            admissions: "hosp_admissions".into(),
            icustays: "icu_icustays".into(),
            labevents: "hosp_labevents".into(),
            d_labitems: "hosp_d_labitems".into(),
        }
    }

    /// Picks the prefixed layout when the database has `hosp_patients` and
    /// no bare `patients`.
    pub fn detect(tables: &[String]) -> Self {
        let has = |t: &str| tables.iter().any(|x| x == t);
        if !has("patients") && has("hosp_patients") {
            Self::prefixed()
        } else {
            Self::bare()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemographicDimension {
    Gender,
    AnchorAgeDecade,
    AdmissionType,
}

impl DemographicDimension {
    pub const ALL: [DemographicDimension; 3] =
        [DemographicDimension::Gender, DemographicDimension::AnchorAgeDecade, DemographicDimension::AdmissionType];

    pub fn as_str(&self) -> &'static str {
        match self {
            DemographicDimension::Gender => "gender",
            DemographicDimension::AnchorAgeDecade => "anchor_age_decade",
            DemographicDimension::AdmissionType => "admission_type",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_str() == s.trim())
    }
}

pub fn escape_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Integer parameter gate. Accepts a JSON integer or a string holding only
/// an optionally signed decimal integer.
pub fn parse_int_arg(value: &Json, name: &str) -> Result<i64, String> {
    let bad = || format!("{name} must be an integer, got {value}");
    match value {
        Json::Number(n) => n.as_i64().ok_or_else(bad),
        Json::String(s) => {
            let t = s.trim();
            if crate::etl::parses_as_integer(t) {
                t.parse().map_err(|_| bad())
            } else {
                Err(bad())
            }
        }
        _ => Err(bad()),
    }
}

fn parse_limit(value: Option<&Json>, default: usize) -> Result<usize, String> {
    match value {
        None | Some(Json::Null) => Ok(default),
        Some(v) => {
            let n = parse_int_arg(v, "limit")?;
            if n < 1 {
                Err(format!("limit must be >= 1, got {n}"))
            } else {
                Ok(n as usize)
            }
        }
    }
}

fn parse_patient(value: Option<&Json>) -> Result<Option<i64>, String> {
    match value {
        None | Some(Json::Null) => Ok(None),
        Some(v) => parse_int_arg(v, "patient_id").map(Some),
    }
}

pub fn icu_stays_sql(schema: &ClinicalSchema, patient_id: Option<i64>, limit: usize) -> String {
    let mut sql = format!(
        "SELECT stay_id, subject_id, hadm_id, intime, outtime, \
         ROUND(julianday(outtime) - julianday(intime), 2) AS los_days\n\
         FROM {}",
        schema.icustays
    );
    if let Some(id) = patient_id {
        sql.push_str(&format!("\nWHERE subject_id = {id}"));
    }
    sql.push_str(&format!("\nORDER BY intime, stay_id\nLIMIT {limit}"));
    sql
}

pub fn lab_results_sql(
    schema: &ClinicalSchema,
    patient_id: Option<i64>,
    item_filter: Option<&str>,
    limit: usize,
) -> String {
    let mut sql = format!(
        "SELECT l.subject_id, d.label, l.valuenum, l.valueuom, l.charttime\n\
         FROM {} AS l\n\
         JOIN {} AS d ON l.itemid = d.itemid",
        schema.labevents, schema.d_labitems
    );
    let mut conds = Vec::new();
    if let Some(id) = patient_id {
        conds.push(format!("l.subject_id = {id}"));
    }
    if let Some(f) = item_filter {
        conds.push(format!("instr(lower(d.label), lower({})) > 0", escape_literal(f)));
    }
    if !conds.is_empty() {
        sql.push_str("\nWHERE ");
        sql.push_str(&conds.join(" AND "));
    }
    sql.push_str(&format!("\nORDER BY l.charttime, l.subject_id, d.label, l.valuenum\nLIMIT {limit}"));
    sql
}

pub fn demographics_sql(schema: &ClinicalSchema, dim: DemographicDimension) -> String {
    let (expr, table) = match dim {
        DemographicDimension::Gender => ("gender".to_string(), &schema.patients),
        DemographicDimension::AnchorAgeDecade => (
            "CAST(anchor_age / 10 AS INTEGER) * 10 || '-' || (CAST(anchor_age / 10 AS INTEGER) * 10 + 9)".to_string(),
            &schema.patients,
        ),
        DemographicDimension::AdmissionType => ("admission_type".to_string(), &schema.admissions),
    };
    let name = dim.as_str();
    format!(
        "SELECT {expr} AS {name}, COUNT(*) AS count\n\
         FROM {table}\n\
         GROUP BY 1\n\
         ORDER BY count DESC, {name}"
    )
}

pub struct Toolset {
    backend: Box<dyn Backend>,
    output: OutputPolicy,
    schema: ClinicalSchema,
}

impl Toolset {
    pub fn new(backend: Box<dyn Backend>, output: OutputPolicy, schema: ClinicalSchema) -> Self {
        Self { backend, output, schema }
    }

    /// Uses [`ClinicalSchema::detect`] on the backend's tables.
    pub fn with_detected_schema(backend: Box<dyn Backend>, output: OutputPolicy) -> Self {
        let schema =
            backend.list_tables().map(|t| ClinicalSchema::detect(&t)).unwrap_or_else(|_| ClinicalSchema::bare());
        Self::new(backend, output, schema)
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn schema(&self) -> &ClinicalSchema {
        &self.schema
    }

    pub fn output_policy(&self) -> &OutputPolicy {
        &self.output
    }

    /// validate → execute (cap = max_rows) → enforce output policy.
    pub fn run_query(&self, sql: &str) -> Result<ResultSet, QueryFailure> {
        let verdict = validate(sql);
        if !verdict.allowed {
            return Err(QueryFailure::Blocked(verdict.message()));
        }
        let rs = self.backend.execute_select(sql, self.output.max_rows).map_err(QueryFailure::Engine)?;
        Ok(enforce_output(rs, &self.output))
    }

    fn query_tool(&self, sql: &str) -> ToolResult {
        match self.run_query(sql) {
            Ok(rs) => render_result(&rs),
            Err(f) => ToolResult::error(f.to_string()),
        }
    }

    pub fn ping(&self) -> ToolResult {
        ToolResult::text(format!("{SERVER_NAME} is alive; backend: {}", self.backend.kind()))
    }

    pub fn list_tables(&self) -> ToolResult {
        match self.backend.list_tables() {
            Ok(t) if t.is_empty() => ToolResult::text("no tables"),
            Ok(t) => ToolResult::text(t.join("\n")),
            Err(e) => ToolResult::error(e.to_string()),
        }
    }

    pub fn describe_table(&self, table: &str) -> ToolResult {
        match self.backend.describe_table(table) {
            Ok(s) => ToolResult::text(render_schema(&s)),
            Err(e) => ToolResult::error(e.to_string()),
        }
    }

    pub fn get_schema(&self) -> ToolResult {
        let tables = match self.backend.list_tables() {
            Ok(t) => t,
            Err(e) => return ToolResult::error(e.to_string()),
        };
        if tables.is_empty() {
            return ToolResult::text("no tables");
        }
        let mut blocks = Vec::with_capacity(tables.len());
        for t in &tables {
            match self.backend.describe_table(t) {
                Ok(s) => blocks.push(render_schema(&s)),
                Err(e) => return ToolResult::error(e.to_string()),
            }
        }
        ToolResult::text(blocks.join("\n"))
    }

    pub fn execute_query(&self, sql: &str) -> ToolResult {
        self.query_tool(sql)
    }

    pub fn estimate_cost(&self, sql: &str) -> ToolResult {
        let verdict = validate(sql);
        if !verdict.allowed {
            return ToolResult::error(verdict.message());
        }
        match self.backend.estimate_cost(sql) {
            Ok(c) => ToolResult {
                text_blocks: vec![format!("estimated_rows_scanned: {}", c.estimated_rows_scanned), sql_block(sql)],
                is_error: false,
                rows: None,
            },
            Err(e) => ToolResult::error(e.to_string()),
        }
    }

    pub fn icu_stays(&self, patient_id: Option<&Json>, limit: Option<&Json>) -> ToolResult {
        let params = parse_patient(patient_id).and_then(|p| parse_limit(limit, self.output.max_rows).map(|l| (p, l)));
        match params {
            Ok((p, l)) => self.query_tool(&icu_stays_sql(&self.schema, p, l)),
            Err(e) => ToolResult::error(e),
        }
    }

    pub fn lab_results(
        &self,
        patient_id: Option<&Json>,
        item_filter: Option<&str>,
        limit: Option<&Json>,
    ) -> ToolResult {
        let params = parse_patient(patient_id).and_then(|p| parse_limit(limit, self.output.max_rows).map(|l| (p, l)));
        match params {
            Ok((p, l)) => self.query_tool(&lab_results_sql(&self.schema, p, item_filter, l)),
            Err(e) => ToolResult::error(e),
        }
    }

    pub fn demographics(&self, group_by: &str) -> ToolResult {
        match DemographicDimension::parse(group_by) {
            Some(d) => self.query_tool(&demographics_sql(&self.schema, d)),
            None => {
                let valid: Vec<&str> = DemographicDimension::ALL.iter().map(|d| d.as_str()).collect();
                ToolResult::error(format!("unknown group_by {group_by:?}; valid values: {}", valid.join(", ")))
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QueryFailure {
    #[error("{0}")]
    Blocked(String),
    #[error("Query error: {0}")]
    Engine(BackendError),
}

pub fn render_schema(s: &TableSchema) -> String {
    let mut out = format!("table {}\n", s.table_name);
    let w = s.columns.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &s.columns {
        out.push_str(&format!(
            "  {:<w$}  {:<7}  {}\n",
            c.name,
            c.affinity.as_str(),
            if c.nullable { "nullable" } else { "not null" }
        ));
    }
    out.push_str(&format!("row_count: {}\n", s.row_count));
    out
}

/// Table block (with row count or truncation note) followed by the SQL block.
pub fn render_result(rs: &ResultSet) -> ToolResult {
    let mut table = render_table(rs);
    if rs.truncated {
        table.push_str(&format!("({} rows shown; result truncated by the output limit)", rs.rows.len()));
    } else {
        let n = rs.rows.len();
        table.push_str(&format!("({n} row{})", if n == 1 { "" } else { "s" }));
    }
    ToolResult { text_blocks: vec![table, sql_block(&rs.executed_sql)], is_error: false, rows: Some(rs.rows.len()) }
}

/// Descriptors for the nine tools, in registration order.
pub fn tool_descriptors() -> Vec<ToolDescriptor> {
    let none = json!({"type": "object", "properties": {}, "additionalProperties": false});
    let sql_only = |what: &str| {
        json!({
            "type": "object",
            "properties": {"sql": {"type": "string", "description": what}},
            "required": ["sql"],
            "additionalProperties": false
        })
    };
    vec![
        ToolDescriptor::new("ping", "Liveness check: server name and backend kind.", none.clone()),
        ToolDescriptor::new("list_tables", "List the tables in the clinical database.", none.clone()),
        ToolDescriptor::new(
            "describe_table",
            "Show the columns (name, affinity, nullability) and row count of one table.",
            json!({
                "type": "object",
                "properties": {"table": {"type": "string", "description": "Table name from list_tables."}},
                "required": ["table"],
                "additionalProperties": false
            }),
        ),
        ToolDescriptor::new("get_schema", "Describe every table in the database.", none.clone()),
        ToolDescriptor::new(
            "execute_query",
            "Run one read-only SELECT (or WITH ... SELECT) query. Results are row-capped and the executed SQL is echoed back.",
            sql_only("A single read-only SQL query."),
        ),
        ToolDescriptor::new(
            "estimate_cost",
            "Upper-bound estimate of rows scanned by a read-only query.",
            sql_only("A single read-only SQL query."),
        ),
        ToolDescriptor::new(
            "get_icu_stays",
            "ICU stays with in/out times and length of stay in days, optionally for one patient.",
            json!({
                "type": "object",
                "properties": {
                    "patient_id": {"type": ["integer", "string"], "description": "subject_id to filter on."},
                    "limit": {"type": ["integer", "string"], "description": "Maximum rows (>= 1)."}
                },
                "additionalProperties": false
            }),
        ),
        ToolDescriptor::new(
            "get_lab_results",
            "Laboratory results joined with their item labels, optionally filtered by patient and by a case-insensitive label substring.",
            json!({
                "type": "object",
                "properties": {
                    "patient_id": {"type": ["integer", "string"], "description": "subject_id to filter on."},
                    "item_filter": {"type": "string", "description": "Substring of the lab item label, e.g. glucose."},
                    "limit": {"type": ["integer", "string"], "description": "Maximum rows (>= 1)."}
                },
                "additionalProperties": false
            }),
        ),
        ToolDescriptor::new(
            "get_demographics",
            "Counts grouped by one dimension: gender, anchor_age_decade or admission_type.",
            json!({
                "type": "object",
                "properties": {
                    "group_by": {"type": "string", "description": "One of gender, anchor_age_decade, admission_type."}
                },
                "required": ["group_by"],
                "additionalProperties": false
            }),
        ),
    ]
}

/// Registers all nine tools against `tools`.
pub fn register_tools(server: &mut Server, tools: Rc<Toolset>) -> Result<(), WireError> {
    for descriptor in tool_descriptors() {
        let t = Rc::clone(&tools);
        let handler: ToolHandler = match descriptor.name.as_str() {
            "ping" => Box::new(move |_| t.ping()),
            "list_tables" => Box::new(move |_| t.list_tables()),
            "describe_table" => Box::new(move |a| t.describe_table(str_arg(a, "table"))),
            "get_schema" => Box::new(move |_| t.get_schema()),
            "execute_query" => Box::new(move |a| t.execute_query(str_arg(a, "sql"))),
            "estimate_cost" => Box::new(move |a| t.estimate_cost(str_arg(a, "sql"))),
            "get_icu_stays" => Box::new(move |a| t.icu_stays(present(a, "patient_id"), present(a, "limit"))),
            "get_lab_results" => Box::new(move |a| {
                let filter = present(a, "item_filter").and_then(Json::as_str);
                t.lab_results(present(a, "patient_id"), filter, present(a, "limit"))
            }),
            "get_demographics" => Box::new(move |a| t.demographics(str_arg(a, "group_by"))),
            other => unreachable!("no handler for {other}"),
        };
        server.register_tool(descriptor, handler)?;
    }
    Ok(())
}

fn present<'a>(args: &'a Map<String, Json>, key: &str) -> Option<&'a Json> {
    args.get(key).filter(|v| !v.is_null())
}

fn str_arg<'a>(args: &'a Map<String, Json>, key: &str) -> &'a str {
    args.get(key).and_then(Json::as_str).unwrap_or_default()
}
