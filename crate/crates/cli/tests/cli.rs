use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value as Json;

const ENV_KEYS: &[&str] = &[
    "M3_BACKEND",
    "M3_DB_PATH",
    "M3_REMOTE_ENDPOINT",
    "M3_OAUTH2_ENABLED",
    "M3_OAUTH2_ISSUER",
    "M3_OAUTH2_AUDIENCE",
    "M3_OAUTH2_KEY",
    "M3_RATE_LIMIT",
    "M3_MAX_ROWS",
    "M3_MAX_BYTES",
];

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("conf/config.env")
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_m3"));
        for k in ENV_KEYS {
            c.env_remove(k);
        }
        c.env("HOME", self.dir.path()).env_remove("XDG_CONFIG_HOME").env_remove("RUST_LOG");
        c.arg("--config").arg(self.config()).args(args);
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn run_stdin(&self, args: &[&str], input: &str) -> Output {
        self.run_with(self.cmd(args), input)
    }

    fn run_with(&self, mut cmd: Command, input: &str) -> Output {
        let mut child = cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    }

    /// Benchmark CSVs built into `bench.db`.
    fn bench_db(&self) -> PathBuf {
        let csv = self.path("bench_csv");
        let db = self.path("bench.db");
        assert_eq!(code(&self.run(&["fixture", "benchmark", s(&csv)])), 0);
        let out = self.run(&["init", s(&csv), "--out", s(&db)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        db
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn init_exit_codes() {
    let sb = Sandbox::new();
    let missing = sb.run(&["init", s(&sb.path("nope")), "--out", s(&sb.path("x.db"))]);
    assert_eq!(code(&missing), 1);
    assert!(stdout(&missing).is_empty());
    let db = sb.bench_db();
    let again = sb.run(&["init", s(&sb.path("bench_csv")), "--out", s(&db)]);
    assert_eq!(code(&again), 1, "refuses to clobber");
    let forced = sb.run(&["init", s(&sb.path("bench_csv")), "--out", s(&db), "--overwrite"]);
    assert_eq!(code(&forced), 0);
    assert!(stdout(&forced).contains("patients"));
}

#[test]
fn validate_exit_codes_and_json() {
    let sb = Sandbox::new();
    let ok = sb.run(&["validate", "SELECT 1"]);
    assert_eq!(code(&ok), 0);
    let v: Json = serde_json::from_str(stdout(&ok).trim()).unwrap();
    assert_eq!(v["allowed"], true);
    let blocked = sb.run(&["validate", "DROP TABLE patients"]);
    assert_eq!(code(&blocked), 2);
    let v: Json = serde_json::from_str(stdout(&blocked).trim()).unwrap();
    assert_eq!(v["allowed"], false);
    let piped = sb.run_stdin(&["validate", "-"], "SELECT 1; SELECT 2");
    assert_eq!(code(&piped), 2);
    let v: Json = serde_json::from_str(stdout(&piped).trim()).unwrap();
    assert_eq!(v["reason"], "multiple_statements");
}

#[test]
fn query_exit_codes() {
    let sb = Sandbox::new();
    let db = sb.bench_db();
    let ok = sb.run(&["query", "SELECT COUNT(*) AS n FROM patients", "--db", s(&db)]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(stdout(&ok).contains("100"));
    assert!(stdout(&ok).contains("SELECT COUNT(*) AS n FROM patients"));
    let blocked = sb.run(&["query", "DELETE FROM patients", "--db", s(&db)]);
    assert_eq!(code(&blocked), 2);
    let broken = sb.run(&["query", "SELECT * FROM no_such_table", "--db", s(&db)]);
    assert_eq!(code(&broken), 3);
    let top_three = sb.run_stdin(&["query", "-", "--db", s(&db)], m3_core::fixtures::TOP_THREE_DRUGS_SQL);
    assert_eq!(code(&top_three), 0, "{}", stderr(&top_three));
    let text = stdout(&top_three);
    for drug in ["Furosemide", "Heparin", "Metoprolol Tartrate"] {
        assert!(text.contains(drug), "{text}");
    }
    let capped = sb.run(&["query", "SELECT * FROM labevents", "--db", s(&db), "--max-rows", "5"]);
    assert_eq!(code(&capped), 0);
    assert!(stdout(&capped).contains("(5 rows"), "{}", stdout(&capped));
}

#[test]
fn serve_speaks_json_lines_only() {
    let sb = Sandbox::new();
    let db = sb.bench_db();
    let input = concat!(
        r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{"protocolVersion":"2024-11-05","capabilities":{},"clientInfo":{"name":"t","version":"0"}}}"#,
        "\n",
        r#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#,
        "\n",
        r#"{"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"ping","arguments":{}}}"#,
        "\n",
        "not json at all\n",
    );
    let mut cmd = sb.cmd(&["serve", "--db", s(&db)]);
    cmd.env("RUST_LOG", "debug");
    let out = sb.run_with(cmd, input);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<Json> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["result"]["serverInfo"]["name"], "m3-gateway");
    assert_eq!(lines[1]["result"]["content"][0]["text"], "m3-gateway is alive; backend: local");
    assert_eq!(lines[2]["error"]["code"], -32700);

    let bad = sb.run_stdin(&["serve", "--db", s(&sb.path("absent.db"))], input);
    assert_eq!(code(&bad), 1);
    assert!(bad.stdout.is_empty());
    assert!(!stderr(&bad).is_empty());
}

#[test]
fn config_set_and_interactive() {
    let sb = Sandbox::new();
    let set = sb.run(&["config", "--set", "M3_MAX_ROWS=50", "--set", "M3_DB_PATH=/data/x.db"]);
    assert_eq!(code(&set), 0, "{}", stderr(&set));
    let saved = std::fs::read_to_string(sb.config()).unwrap();
    assert!(saved.contains("M3_MAX_ROWS=50"));
    let rejected = sb.run(&["config", "--set", "M3_MAX_ROWS=abc"]);
    assert_eq!(code(&rejected), 1);
    assert_eq!(std::fs::read_to_string(sb.config()).unwrap(), saved);

    // current values are the defaults offered at each prompt
    let session = sb.run_stdin(&["config"], "\n\nfalse\nabc\n5/10\n\n\n");
    assert_eq!(code(&session), 0, "{}", stderr(&session));
    assert!(stdout(&session).starts_with("wrote "));
    assert_eq!(stderr(&session).matches("invalid:").count(), 1);
    let show = stdout(&sb.run(&["config", "--show"]));
    assert!(show.contains("M3_DB_PATH=/data/x.db"));
    assert!(show.contains("M3_RATE_LIMIT=5/10"));
    assert!(show.contains("M3_MAX_ROWS=50"));

    let eof = sb.run_stdin(&["config"], "local\n");
    assert_eq!(code(&eof), 1);
}

#[test]
fn precedence_file_env_flags() {
    let sb = Sandbox::new();
    let db = sb.bench_db();
    assert_eq!(code(&sb.run(&["config", "--set", &format!("M3_DB_PATH={}", s(&db)), "--set", "M3_MAX_ROWS=3"])), 0);
    let rows = |o: &Output| stdout(o).lines().find(|l| l.starts_with('(')).unwrap_or_default().to_string();
    let q = ["query", "SELECT subject_id FROM patients"];

    let from_file = sb.run(&q);
    assert_eq!(code(&from_file), 0, "{}", stderr(&from_file));
    assert!(rows(&from_file).starts_with("(3 rows"), "{}", stdout(&from_file));

    let mut with_env = sb.cmd(&q);
    with_env.env("M3_MAX_ROWS", "4");
    let from_env = with_env.output().unwrap();
    assert!(rows(&from_env).starts_with("(4 rows"), "{}", stdout(&from_env));

    let mut both = sb.cmd(&["query", "SELECT subject_id FROM patients", "--max-rows", "6"]);
    both.env("M3_MAX_ROWS", "4");
    let from_flag = both.output().unwrap();
    assert!(rows(&from_flag).starts_with("(6 rows"), "{}", stdout(&from_flag));

    let mut bad_env = sb.cmd(&q);
    bad_env.env("M3_DB_PATH", s(&sb.path("elsewhere.db")));
    assert_eq!(code(&bad_env.output().unwrap()), 1);
}

#[test]
fn eval_scores_bundled_cases() {
    let sb = Sandbox::new();
    let db = sb.bench_db();
    let report = sb.path("report.json");
    let out = sb.run(&["eval", s(&sb.path("bench_csv/cases.jsonl")), "--db", s(&db), "--json", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("Execution accuracy"));
    let parsed: Json = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["accuracy"], 1.0);
    assert_eq!(parsed["now"], "2100-12-31 23:59:00");
    let seq = sb.run(&["eval", s(&sb.path("bench_csv/cases.jsonl")), "--db", s(&db), "--sequential"]);
    assert_eq!(stdout(&seq), stdout(&out));
    let bad_clock = sb.run(&["eval", s(&sb.path("bench_csv/cases.jsonl")), "--db", s(&db), "--now", "tomorrow"]);
    assert_eq!(code(&bad_clock), 1);
}
