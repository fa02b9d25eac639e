#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use m3_core::backend::{ResultSet, Value};
use m3_core::etl::{build_database, BuildReport, EtlOptions};
use m3_core::fixtures::{self, ClinicalWorld, Layout, ANEMIA_TITLE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::Connection;
use sha2::{Digest, Sha256};

pub fn world() -> ClinicalWorld {
    ClinicalWorld::generate(fixtures::DEFAULT_SEED)
}

pub fn benchmark_db(dir: &Path) -> (ClinicalWorld, PathBuf) {
    let w = world();
    let csv = dir.join("bench_csv");
    fixtures::write_benchmark_csvs(&w, &csv).unwrap();
    let db = dir.join("bench.db");
    build_database(&csv, &db, &EtlOptions::default()).unwrap();
    (w, db)
}

pub fn demo_db(dir: &Path, layout: Layout) -> (ClinicalWorld, PathBuf, BuildReport) {
    let w = world();
    let csv = dir.join("demo_csv");
    fixtures::write_demo_csvs(&w, &csv, layout).unwrap();
    let db = dir.join("demo.db");
    let report = build_database(&csv, &db, &EtlOptions::default()).unwrap();
    (w, db, report)
}

pub fn file_hash(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sign_token(header: &str, payload: &str, key: &[u8]) -> String {
    let h = URL_SAFE_NO_PAD.encode(header);
    let p = URL_SAFE_NO_PAD.encode(payload);
    let mut mac = Hmac::<Sha256>::new_from_slice(key).unwrap();
    mac.update(format!("{h}.{p}").as_bytes());
    let s = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
    format!("{h}.{p}.{s}")
}

pub const HS256_HEADER: &str = r#"{"alg":"HS256","typ":"JWT"}"#;

/// Top-three drugs by dense rank, computed directly from the world.
pub fn top_three_oracle(w: &ClinicalWorld) -> Vec<String> {
    let code = w.icd_codes.iter().find(|c| c.1 == ANEMIA_TITLE).unwrap().0;
    let t1: Vec<(i64, &str, i64)> = w
        .diagnoses
        .iter()
        .filter(|d| d.icd_code == code && &d.charttime[..4] >= "2100")
        .filter_map(|d| w.admission(d.hadm_id).map(|a| (a.subject_id, d.charttime.as_str(), a.hadm_id)))
        .collect();
    let t2: Vec<(i64, &str, &str, i64)> = w
        .prescriptions
        .iter()
        .filter(|r| &r.starttime[..4] >= "2100")
        .filter_map(|r| {
            w.admission(r.hadm_id)
                .filter(|a| a.age >= 60)
                .map(|a| (a.subject_id, r.drug, r.starttime.as_str(), a.hadm_id))
        })
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &t1 {
        for b in &t2 {
            if a.0 == b.0 && a.1 < b.2 && a.2 == b.3 {
                *counts.entry(b.1).or_default() += 1;
            }
        }
    }
    let mut distinct: Vec<usize> = counts.values().copied().collect();
    distinct.sort_unstable_by(|a, b| b.cmp(a));
    distinct.dedup();
    distinct.truncate(3);
    counts.into_iter().filter(|(_, c)| distinct.contains(c)).map(|(d, _)| d.to_string()).collect()
}

/// Hand-written labevents x d_labitems join with the tool's ordering.
pub fn lab_oracle(w: &ClinicalWorld, patient: Option<i64>, filter: Option<&str>, limit: usize) -> ResultSet {
    let mut rows: Vec<(&str, i64, &str, Option<f64>, &str)> = w
        .labevents
        .iter()
        .filter(|l| patient.is_none_or(|p| l.subject_id == p))
        .filter_map(|l| w.lab_label(l.itemid).map(|label| (l, label)))
        .filter(|(_, label)| filter.is_none_or(|f| label.to_lowercase().contains(&f.to_lowercase())))
        .map(|(l, label)| (l.charttime.as_str(), l.subject_id, label, l.valuenum, l.valueuom))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)).then(a.3.partial_cmp(&b.3).unwrap()));
    rows.truncate(limit);
    ResultSet {
        columns: ["subject_id", "label", "valuenum", "valueuom", "charttime"].map(String::from).to_vec(),
        rows: rows
            .into_iter()
            .map(|(t, s, label, v, u)| {
                vec![
                    Value::Integer(s),
                    Value::Text(label.into()),
                    v.map_or(Value::Null, Value::Real),
                    Value::Text(u.into()),
                    Value::Text(t.into()),
                ]
            })
            .collect(),
        truncated: false,
        executed_sql: String::new(),
    }
}

/// What the corpus generator knows about a string by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// One well-formed read-only statement: must be allowed.
    Read,
    /// Contains a top-level write, DDL or admin statement: must be blocked.
    Forbidden,
    /// Two read statements: must be blocked as multiple statements.
    MultiRead,
    /// No expectation beyond soundness.
    Unknown,
}

pub const SCRATCH_SCHEMA: &str = "
CREATE TABLE t1 (a INTEGER, b TEXT);
CREATE TABLE t2 (id INTEGER PRIMARY KEY, note TEXT);
CREATE VIEW v1 AS SELECT a FROM t1;
INSERT INTO t1 VALUES (1, 'x'), (2, 'delete me'), (3, NULL);
INSERT INTO t2 VALUES (1, 'drop'), (2, 'update');
";

pub fn scratch_db(dir: &Path) -> PathBuf {
    let p = dir.join("scratch.db");
    let c = Connection::open(&p).unwrap();
    c.execute_batch(SCRATCH_SCHEMA).unwrap();
    c.close().unwrap();
    p
}

const READS: &[&str] = &[
    "SELECT a, b FROM t1",
    "SELECT COUNT(*) FROM t2 WHERE note LIKE '%delete%'",
    "SELECT 'DROP TABLE t1; DELETE FROM t2' AS s",
    "SELECT \"delete\" FROM (SELECT 1 AS \"delete\")",
    "SELECT [update] FROM (SELECT 2 AS [update])",
    "SELECT `insert` FROM (SELECT 3 AS `insert`)",
    "WITH x AS (SELECT a FROM t1) SELECT * FROM x",
    "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM c WHERE n < 5) SELECT n FROM c",
    "SELECT a FROM t1 WHERE a IN (SELECT id FROM t2)",
    "SELECT replace(b, 'x', 'y') FROM t1",
    "SELECT * FROM t1 ORDER BY a LIMIT 2",
    "SELECT a FROM t1 UNION SELECT id FROM t2",
    "SELECT a, DENSE_RANK() OVER (ORDER BY a DESC) AS r FROM t1",
    "SELECT x'00ff' AS blob",
    "SELECT a FROM v1",
    "SELECT 1 -- ; DROP TABLE t1",
    "SELECT 1 /* ; DELETE FROM t1 */",
    "SELECT 'it''s; DROP TABLE t2'",
    "SELECT strftime('%Y', 'now')",
    "SELECT (SELECT MAX(a) FROM t1) AS m",
    "SELECT t1.a, t2.note FROM t1 JOIN t2 ON t1.a = t2.id",
    "SELECT 0x10 + 1.5e2",
];

const WRITES: &[&str] = &[
    "INSERT INTO t1 VALUES (9, 'z')",
    "INSERT INTO t1 SELECT * FROM t1",
    "UPDATE t1 SET a = a + 1",
    "DELETE FROM t2",
    "REPLACE INTO t2 VALUES (1, 'r')",
    "INSERT OR REPLACE INTO t2 VALUES (5, 'q')",
    "CREATE TABLE z (q)",
    "CREATE INDEX i1 ON t1(a)",
    "CREATE TEMP TABLE tt (q)",
    "DROP TABLE t1",
    "DROP VIEW v1",
    "ALTER TABLE t1 ADD COLUMN c",
    "ATTACH DATABASE ':memory:' AS aux",
    "DETACH DATABASE aux",
    "PRAGMA user_version = 7",
    "PRAGMA journal_mode = WAL",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "BEGIN",
    "COMMIT",
    "ROLLBACK",
    "SAVEPOINT s1",
    "RELEASE s1",
    "WITH x AS (SELECT 1) DELETE FROM t1",
    "WITH x AS (SELECT 1 AS n) INSERT INTO t1 SELECT n, 'w' FROM x",
    "WITH x AS (SELECT 1) UPDATE t2 SET note = 'u'",
];

const PREFIXES: &[&str] = &["", " ", "\n\t", "-- hi\n", "/* c */ ", "/* multi\nline */\n", "\r\n"];
const SUFFIXES: &[&str] = &["", ";", " ;", "; ", ";\n-- end", " -- trailing", " /* tail */", ";;"];
const SOUP: &[&str] = &[
    "SELECT", "FROM", "t1", "t2", ";", "(", ")", "'", "\"", "--", "/*", "*/", "DELETE", "DROP", "1", "a", ",", "*",
    "WHERE", "=", "INSERT", "INTO", "VALUES", "WITH", "AS", "\n", "UPDATE", "SET", "PRAGMA", "`", "[", "]", "x'ab'",
    "EXPLAIN", "CREATE", "TABLE", "ATTACH", "VACUUM", "BEGIN", "0x1f", "-", "NULL",
];

fn random_case(rng: &mut ChaCha8Rng, s: &str) -> String {
    s.chars().map(|c| if rng.gen_bool(0.5) { c.to_ascii_lowercase() } else { c.to_ascii_uppercase() }).collect()
}

fn decorate(rng: &mut ChaCha8Rng, s: &str) -> String {
    let body = if rng.gen_bool(0.3) { random_case(rng, s) } else { s.to_string() };
    format!("{}{}{}", PREFIXES.choose(rng).unwrap(), body, SUFFIXES.choose(rng).unwrap())
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

/// Deterministic mixed corpus: reads, writes, multi-statement strings,
/// comment- and string-smuggled verbs, token soup and random bytes.
pub fn fuzz_corpus(seed: u64, n: usize) -> Vec<(String, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let item = match rng.gen_range(0..11) {
            0 | 1 => {
                let r = pick(&mut rng, READS);
                (decorate(&mut rng, r), Label::Read)
            }
            2 | 3 => {
                let w = pick(&mut rng, WRITES);
                (decorate(&mut rng, w), Label::Forbidden)
            }
            4 => {
                let (r, w) = (pick(&mut rng, READS), pick(&mut rng, WRITES));
                (decorate(&mut rng, &format!("{r}\n;{w}")), Label::Forbidden)
            }
            5 => {
                let (r, w) = (pick(&mut rng, READS), pick(&mut rng, WRITES));
                let glue = pick(&mut rng, &["; ", " /* x */; ", ";/*;*/", ";\n-- c\n"]);
                // a newline first so a trailing line comment in the read ends
                if rng.gen_bool(0.5) {
                    (format!("{w}{glue}{r}"), Label::Forbidden)
                } else {
                    (format!("{r}\n{glue}{w}"), Label::Forbidden)
                }
            }
            6 => {
                let (a, b) = (pick(&mut rng, READS), pick(&mut rng, READS));
                (format!("{a}\n; {b}"), Label::MultiRead)
            }
            7 => {
                // the verb only ever appears inside a comment or a literal
                let w = pick(&mut rng, WRITES);
                let s = match rng.gen_range(0..4) {
                    0 => format!("SELECT 1 -- ; {w}"),
                    1 => format!("SELECT 1 /* ; {w} */"),
                    2 => format!("SELECT '{}' AS q", w.replace('\'', "''")),
                    _ => format!("/* {w}; */ SELECT a FROM t1"),
                };
                (s, Label::Read)
            }
            8 | 9 => {
                let len = rng.gen_range(1..14);
                let words: Vec<&str> = (0..len).map(|_| pick(&mut rng, SOUP)).collect();
                let sep = if rng.gen_bool(0.7) { " " } else { "" };
                (words.join(sep), Label::Unknown)
            }
            _ => {
                let len = rng.gen_range(0..40);
                let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                (String::from_utf8_lossy(&bytes).into_owned(), Label::Unknown)
            }
        };
        out.push(item);
    }
    out
}

/// Runs every statement in `sql` on a read-write connection, stepping at
/// most `row_cap` rows each. Errors are ignored.
pub fn execute_unguarded(conn: &Connection, sql: &str, row_cap: usize) {
    let mut batch = rusqlite::Batch::new(conn, sql);
    loop {
        match batch.next() {
            Ok(Some(mut stmt)) => {
                if let Ok(mut rows) = stmt.query([]) {
                    for _ in 0..row_cap {
                        match rows.next() {
                            Ok(Some(_)) => {}
                            _ => break,
                        }
                    }
                }
            }
            Ok(None) => break,
            Err(_) => break,
        }
    }
}

/// Independent full-scan profile of one CSV file.
#[derive(Debug, Default)]
pub struct CsvProfile {
    pub header: Vec<String>,
    pub data_rows: u64,
    pub short_rows: u64,
    /// (affinity name, nullable) per column over every well-formed row.
    pub columns: Vec<(&'static str, bool)>,
    pub null_cells: Vec<u64>,
    pub tokens_seen: std::collections::BTreeSet<String>,
}

pub const NULL_TOKENS: &[&str] = &["", "NULL", "null", "None", "___", "N/A", "NA", "?"];

pub fn profile_csv(path: &Path) -> CsvProfile {
    let file = std::fs::File::open(path).unwrap();
    let reader: Box<dyn std::io::Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(reader);
    let mut records = rdr.records().map(|r| r.unwrap());
    let header: Vec<String> = records.next().unwrap().iter().map(|h| h.trim().to_lowercase()).collect();
    let width = header.len();
    // 0 = integer, 1 = real, 2 = text
    let mut rank = vec![0u8; width];
    let mut nullable = vec![false; width];
    let mut null_cells = vec![0u64; width];
    let mut p = CsvProfile { header, ..Default::default() };
    for rec in records {
        p.data_rows += 1;
        if rec.len() != width {
            p.short_rows += 1;
            continue;
        }
        for (i, cell) in rec.iter().enumerate() {
            let t = cell.trim();
            if NULL_TOKENS.contains(&t) {
                nullable[i] = true;
                null_cells[i] += 1;
                p.tokens_seen.insert(t.to_string());
                continue;
            }
            let r = if t.parse::<i64>().is_ok() {
                0
            } else if t.parse::<f64>().is_ok_and(f64::is_finite) {
                1
            } else {
                2
            };
            rank[i] = rank[i].max(r);
        }
    }
    p.columns = rank.iter().zip(&nullable).map(|(r, n)| (["integer", "real", "text"][*r as usize], *n)).collect();
    p.null_cells = null_cells;
    p
}
