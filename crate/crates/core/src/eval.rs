//! Execution-accuracy harness for EHRSQL-style cases.
//!
//! Each answerable case runs its gold and candidate SQL against a benchmark
//! database with `'now'` pinned to a fixed timestamp, and the two results
//! are compared as row multisets. Cases run in parallel over independent
//! read-only handles; outcomes keep case order.
//!
//! Equivalence rule: rows compared positionally; integers and reals (and
//! numeric-looking text) compared as numbers with relative tolerance 1e-6;
//! other text compared trimmed and case-insensitively; row order ignored.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, LocalBackend, ResultSet, Value};
use crate::etl::parses_as_real;
use crate::par::{map_init_with, Execution};
use crate::sql_guard::{tokenize, validate, SqlToken, TokenKind};
use crate::toolset::escape_literal;

pub const DEFAULT_NOW: &str = "2100-12-31 23:59:00";
pub const RELATIVE_TOLERANCE: f64 = 1e-6;
const EVAL_ROW_CAP: usize = 1_000_000;

const TIME_FUNCTIONS: &[&str] = &["date", "time", "datetime", "julianday", "strftime", "unixepoch", "timediff"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read cases file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cases line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("invalid clock {0:?}: expected YYYY-MM-DD HH:MM:SS")]
    Clock(String),
    #[error("{0}")]
    Database(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalCase {
    pub id: String,
    pub question: String,
    pub gold_sql: String,
    pub candidate_sql: Option<String>,
    pub is_answerable: bool,
}

#[derive(Deserialize)]
struct RawCase {
    id: Json,
    #[serde(default)]
    question: String,
    gold_sql: String,
    #[serde(default)]
    candidate_sql: Option<String>,
    #[serde(default = "default_true")]
    is_answerable: bool,
}

fn default_true() -> bool {
    true
}

/// Parses newline-delimited JSON cases. Blank lines are skipped; any other
/// bad line fails with its 1-based line number.
pub fn parse_cases(text: &str) -> Result<Vec<EvalCase>, EvalError> {
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCase =
            serde_json::from_str(line).map_err(|e| EvalError::Line { line: i + 1, message: e.to_string() })?;
        let id = match raw.id {
            Json::String(s) => s,
            Json::Number(n) => n.to_string(),
            other => {
                return Err(EvalError::Line {
                    line: i + 1,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        cases.push(EvalCase {
            id,
            question: raw.question,
            gold_sql: raw.gold_sql,
            candidate_sql: raw.candidate_sql,
            is_answerable: raw.is_answerable,
        });
    }
    Ok(cases)
}

pub fn load_cases(path: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_cases(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PinnedClock {
    now: String,
}

impl PinnedClock {
    pub fn new(now: &str) -> Result<Self, EvalError> {
        let bad = || EvalError::Clock(now.to_string());
        let b = now.as_bytes();
        if b.len() != 19 || b[4] != b'-' || b[7] != b'-' || b[10] != b' ' || b[13] != b':' || b[16] != b':' {
            return Err(bad());
        }
        let field = |r: std::ops::Range<usize>| -> Result<u32, EvalError> {
            let s = &now[r];
            if s.bytes().all(|c| c.is_ascii_digit()) {
                s.parse().map_err(|_| bad())
            } else {
                Err(bad())
            }
        };
        let (y, mo, d) = (field(0..4)?, field(5..7)?, field(8..10)?);
        let (h, mi, s) = (field(11..13)?, field(14..16)?, field(17..19)?);
        let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        let days = [31, if leap { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
        if !(1..=12).contains(&mo) || d == 0 || d > days[mo as usize - 1] || h > 23 || mi > 59 || s > 59 {
            return Err(bad());
        }
        Ok(Self { now: now.to_string() })
    }

    pub fn as_str(&self) -> &str {
        &self.now
    }
}

impl Default for PinnedClock {
    fn default() -> Self {
        Self { now: DEFAULT_NOW.to_string() }
    }
}

fn is_now_literal(tok: &SqlToken) -> bool {
    tok.kind == TokenKind::StringLiteral
        && tok.complete
        && tok.text.len() == 5
        && tok.text[1..4].eq_ignore_ascii_case("now")
}

/// Replaces `'now'` with the pinned timestamp wherever it is a whole
/// argument of a date/time function. Other occurrences are left alone.
pub fn pin_time(sql: &str, clock: &PinnedClock) -> String {
    let tokens = tokenize(sql);
    let sig: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].is_trivia()).collect();
    let mut replace = vec![false; tokens.len()];
    for (k, &ti) in sig.iter().enumerate() {
        if !is_now_literal(&tokens[ti]) || k == 0 || k + 1 >= sig.len() {
            continue;
        }
        let prev = &tokens[sig[k - 1]];
        let next = &tokens[sig[k + 1]];
        if !(prev.is_punct("(") || prev.is_punct(",")) || !(next.is_punct(")") || next.is_punct(",")) {
            continue;
        }
        // walk back to the unmatched open paren of the enclosing call
        let mut depth = 0i64;
        let mut open = None;
        for j in (0..k).rev() {
            let t = &tokens[sig[j]];
            if t.is_punct(")") {
                depth += 1;
            } else if t.is_punct("(") {
                if depth == 0 {
                    open = Some(j);
                    break;
                }
                depth -= 1;
            }
        }
        let Some(open) = open.filter(|&o| o > 0) else { continue };
        let callee = &tokens[sig[open - 1]];
        let is_time_fn = matches!(callee.kind, TokenKind::Identifier | TokenKind::Keyword)
            && TIME_FUNCTIONS.iter().any(|f| callee.text.eq_ignore_ascii_case(f));
        // strftime's first argument is the format, not a time value
        let format_slot = open + 1 == k && callee.text.eq_ignore_ascii_case("strftime");
        replace[ti] = is_time_fn && !format_slot;
    }
    let literal = escape_literal(clock.as_str());
    tokens.iter().zip(&replace).map(|(t, &r)| if r { literal.as_str() } else { t.text.as_str() }).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Canon {
    Null,
    Num(f64),
    Text(String),
}

impl Canon {
    fn of(v: &Value) -> Canon {
        match v {
            Value::Null => Canon::Null,
            Value::Integer(i) => Canon::Num(*i as f64),
            Value::Real(r) => Canon::Num(*r),
            Value::Text(s) => {
                let t = s.trim();
                if parses_as_real(t) {
                    Canon::Num(t.parse().unwrap())
                } else {
                    Canon::Text(t.to_lowercase())
                }
            }
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Canon::Null => 0,
            Canon::Num(_) => 1,
            Canon::Text(_) => 2,
        }
    }

    fn order(&self, other: &Canon) -> Ordering {
        match (self, other) {
            (Canon::Num(a), Canon::Num(b)) => a.total_cmp(b),
            (Canon::Text(a), Canon::Text(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }

    fn close(&self, other: &Canon) -> bool {
        match (self, other) {
            (Canon::Num(a), Canon::Num(b)) => a == b || (a - b).abs() <= RELATIVE_TOLERANCE * a.abs().max(b.abs()),
            _ => self == other,
        }
    }

    fn digest_repr(&self) -> String {
        match self {
            Canon::Null => "null".into(),
            Canon::Num(n) => format!("{n:e}"),
            Canon::Text(s) => serde_json::to_string(s).unwrap(),
        }
    }
}

fn canonical_rows(rs: &ResultSet) -> Vec<Vec<Canon>> {
    let mut rows: Vec<Vec<Canon>> = rs.rows.iter().map(|r| r.iter().map(Canon::of).collect()).collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.order(y)).find(|o| o.is_ne()).unwrap_or_else(|| a.len().cmp(&b.len()))
    });
    rows
}

/// Multiset equality under the tolerance rules in the module docs.
pub fn compare_results(a: &ResultSet, b: &ResultSet) -> bool {
    let (ra, rb) = (canonical_rows(a), canonical_rows(b));
    ra.len() == rb.len()
        && ra.iter().zip(&rb).all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.close(q)))
}

/// Hex SHA-256 prefix of the canonical sorted rows.
pub fn result_digest(rs: &ResultSet) -> String {
    let mut h = Sha256::new();
    for row in canonical_rows(rs) {
        let line: Vec<String> = row.iter().map(Canon::digest_repr).collect();
        h.update(line.join("\u{1f}").as_bytes());
        h.update(b"\x1e");
    }
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Correct,
    Incorrect,
    GoldError,
    CandidateError,
    SkippedUnanswerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalOutcome {
    pub id: String,
    pub status: EvalStatus,
    pub gold_rows: Option<String>,
    pub candidate_rows: Option<String>,
    /// Correct only by tolerance: the digests differ. Flagged for review.
    pub near_tolerance: bool,
    pub detail: String,
}

impl EvalOutcome {
    fn new(id: &str, status: EvalStatus, detail: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            status,
            gold_rows: None,
            candidate_rows: None,
            near_tolerance: false,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    /// correct + incorrect + candidate_error
    pub scored: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub candidate_error: usize,
    pub gold_error: usize,
    pub skipped: usize,
    pub accuracy: f64,
    pub now: String,
    pub outcomes: Vec<EvalOutcome>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<EvalOutcome>, clock: &PinnedClock) -> Self {
        let count = |s: EvalStatus| outcomes.iter().filter(|o| o.status == s).count();
        let correct = count(EvalStatus::Correct);
        let incorrect = count(EvalStatus::Incorrect);
        let candidate_error = count(EvalStatus::CandidateError);
        let scored = correct + incorrect + candidate_error;
        Self {
            n: outcomes.len(),
            scored,
            correct,
            incorrect,
            candidate_error,
            gold_error: count(EvalStatus::GoldError),
            skipped: count(EvalStatus::SkippedUnanswerable),
            accuracy: if scored == 0 { 0.0 } else { correct as f64 / scored as f64 },
            now: clock.as_str().to_string(),
            outcomes,
        }
    }

    /// Outcome/count table followed by per-case lines.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("Correct Answers", self.correct.to_string()),
            ("Incorrect Answers", (self.incorrect + self.candidate_error).to_string()),
            ("  -- Wrong result", self.incorrect.to_string()),
            ("  -- Candidate failed to run", self.candidate_error.to_string()),
            ("Total Evaluated", self.scored.to_string()),
            ("Gold errors (not scored)", self.gold_error.to_string()),
            ("Skipped (unanswerable)", self.skipped.to_string()),
            ("Execution accuracy", format!("{:.4}", self.accuracy)),
        ];
        let _ = writeln!(s, "{:<32} {:>10}", "Outcome", "Count");
        let _ = writeln!(s, "{}", "-".repeat(43));
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<32} {v:>10}");
        }
        let _ = writeln!(s, "\nclock: {}\n", self.now);
        for o in &self.outcomes {
            let status = serde_json::to_value(o.status).unwrap();
            let _ = write!(s, "{:<12} {:<22}", o.id, status.as_str().unwrap_or_default());
            if let (Some(g), Some(c)) = (&o.gold_rows, &o.candidate_rows) {
                let _ = write!(s, " gold={g} candidate={c}");
            }
            if o.near_tolerance {
                let _ = write!(s, " [near tolerance]");
            }
            if !o.detail.is_empty() {
                let _ = write!(s, " {}", o.detail);
            }
            s.push('\n');
        }
        s
    }
}

fn run_one(backend: Option<&LocalBackend>, case: &EvalCase, clock: &PinnedClock) -> EvalOutcome {
    if !case.is_answerable {
        return EvalOutcome::new(&case.id, EvalStatus::SkippedUnanswerable, "");
    }
    let Some(backend) = backend else {
        return EvalOutcome::new(&case.id, EvalStatus::GoldError, "database unavailable");
    };
    let gold_verdict = validate(&case.gold_sql);
    if !gold_verdict.allowed {
        return EvalOutcome::new(&case.id, EvalStatus::GoldError, gold_verdict.message());
    }
    let gold = match backend.execute_select(&pin_time(&case.gold_sql, clock), EVAL_ROW_CAP) {
        Ok(rs) => rs,
        Err(e) => return EvalOutcome::new(&case.id, EvalStatus::GoldError, e.to_string()),
    };
    let gold_digest = result_digest(&gold);
    let with_gold = |mut o: EvalOutcome| {
        o.gold_rows = Some(gold_digest.clone());
        o
    };
    let Some(candidate_sql) = case.candidate_sql.as_deref() else {
        return with_gold(EvalOutcome::new(&case.id, EvalStatus::CandidateError, "no candidate SQL"));
    };
    let verdict = validate(candidate_sql);
    if !verdict.allowed {
        return with_gold(EvalOutcome::new(&case.id, EvalStatus::CandidateError, verdict.message()));
    }
    let candidate = match backend.execute_select(&pin_time(candidate_sql, clock), EVAL_ROW_CAP) {
        Ok(rs) => rs,
        Err(e) => return with_gold(EvalOutcome::new(&case.id, EvalStatus::CandidateError, e.to_string())),
    };
    let candidate_digest = result_digest(&candidate);
    let equal = compare_results(&gold, &candidate);
    let mut o = EvalOutcome::new(&case.id, if equal { EvalStatus::Correct } else { EvalStatus::Incorrect }, "");
    o.near_tolerance = equal && gold_digest != candidate_digest;
    o.gold_rows = Some(gold_digest);
    o.candidate_rows = Some(candidate_digest);
    o
}

pub fn run_eval(cases: &[EvalCase], db: &Path, clock: &PinnedClock) -> Result<EvalReport, EvalError> {
    run_eval_with(Execution::Parallel, cases, db, clock)
}

/// Scores every case. Each worker opens its own read-only handle.
pub fn run_eval_with(
    mode: Execution,
    cases: &[EvalCase],
    db: &Path,
    clock: &PinnedClock,
) -> Result<EvalReport, EvalError> {
    LocalBackend::open(db).map_err(|e| EvalError::Database(e.to_string()))?;
    let outcomes = map_init_with(
        mode,
        cases,
        || LocalBackend::open(db).ok(),
        |backend, case| run_one(backend.as_ref(), case, clock),
    );
    Ok(EvalReport::from_outcomes(outcomes, clock))
}
