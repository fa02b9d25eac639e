use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::rc::Rc;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;
use serde_json::json;

use m3_core::access_control::{AccessGate, SystemClock};
use m3_core::backend;
use m3_core::config::{self, CliConfig, ConfigMap};
use m3_core::etl::{build_database, EtlOptions};
use m3_core::eval::{load_cases, run_eval_with, PinnedClock};
use m3_core::fixtures::{self, ClinicalWorld, Layout};
use m3_core::par::Execution;
use m3_core::sql_guard::validate;
use m3_core::toolset::{register_tools, render_result, QueryFailure, Toolset};
use m3_core::wire::Server;

#[derive(Parser)]
#[command(name = "m3", version, about = "Read-only clinical database gateway")]
struct Cli {
    /// Config file (default: $XDG_CONFIG_HOME/m3/config.env)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Database file
    #[arg(long)]
    db: Option<String>,
    /// local or remote
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    max_rows: Option<String>,
    #[arg(long)]
    max_bytes: Option<String>,
    /// N/seconds, e.g. 60/60
    #[arg(long)]
    rate_limit: Option<String>,
}

impl Overrides {
    fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let pairs = [
            (config::KEY_DB_PATH, &self.db),
            (config::KEY_BACKEND, &self.backend),
            (config::KEY_MAX_ROWS, &self.max_rows),
            (config::KEY_MAX_BYTES, &self.max_bytes),
            (config::KEY_RATE_LIMIT, &self.rate_limit),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        }
        m
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a SQLite database from a directory of CSV / CSV.gz files
    Init {
        csv_dir: PathBuf,
        /// Output database (default: configured M3_DB_PATH)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        /// Rows sampled for type inference
        #[arg(long)]
        sample_rows: Option<usize>,
    },
    /// Serve MCP over stdin/stdout
    Serve {
        #[command(flatten)]
        over: Overrides,
    },
    /// Check a query against the read-only rules; prints the verdict as JSON
    Validate {
        /// SQL text, or - to read stdin
        sql: String,
    },
    /// Run one query through the full tool pipeline
    Query {
        /// SQL text, or - to read stdin
        sql: String,
        #[command(flatten)]
        over: Overrides,
    },
    /// Edit the config file interactively or with --set
    Config {
        /// KEY=VALUE, repeatable
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Print the effective configuration
        #[arg(long)]
        show: bool,
    },
    /// Score EHRSQL-style cases against a benchmark database
    Eval {
        /// Newline-delimited JSON cases
        cases: PathBuf,
        #[arg(long)]
        db: Option<String>,
        /// Pinned current time
        #[arg(long, default_value = m3_core::eval::DEFAULT_NOW)]
        now: String,
        /// Also write the report as JSON here
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Write synthetic CSV trees for testing
    Fixture {
        kind: FixtureKind,
        dir: PathBuf,
        #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
        seed: u64,
        /// Put demo tables under hosp/ and icu/
        #[arg(long)]
        modules: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Demo,
    Benchmark,
}

fn read_sql(arg: &str) -> io::Result<String> {
    if arg == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(arg.to_string())
    }
}

fn config_path(cli: &Cli) -> PathBuf {
    cli.config.clone().unwrap_or_else(config::default_config_path)
}

/// file < environment < flags
fn effective_map(path: &Path, flags: &ConfigMap) -> Result<ConfigMap, config::ConfigError> {
    let file = config::load_file(path)?;
    let env = config::env_overrides(std::env::vars());
    Ok(config::layer(&[&file, &env, flags]))
}

fn effective(path: &Path, flags: &ConfigMap) -> Result<CliConfig, String> {
    effective_map(path, flags).and_then(|m| CliConfig::from_map(&m)).map_err(|e| format!("configuration error: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let path = config_path(&cli);
    let code = match &cli.command {
        Command::Init { csv_dir, out, overwrite, sample_rows } => {
            cmd_init(&path, csv_dir, out.as_deref(), *overwrite, *sample_rows)
        }
        Command::Serve { over } => cmd_serve(&path, over),
        Command::Validate { sql } => cmd_validate(sql),
        Command::Query { sql, over } => cmd_query(&path, sql, over),
        Command::Config { set, show } => cmd_config(&path, set, *show),
        Command::Eval { cases, db, now, json, sequential } => {
            cmd_eval(&path, cases, db.as_deref(), now, json.as_deref(), *sequential)
        }
        Command::Fixture { kind, dir, seed, modules } => cmd_fixture(*kind, dir, *seed, *modules),
    };
    ExitCode::from(code)
}

fn fail(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    1
}

fn cmd_init(path: &Path, csv_dir: &Path, out: Option<&Path>, overwrite: bool, sample_rows: Option<usize>) -> u8 {
    let cfg = match effective(path, &ConfigMap::new()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let out = out.map(Path::to_path_buf).unwrap_or(cfg.db_path);
    let mut options = EtlOptions { overwrite, ..EtlOptions::default() };
    if let Some(n) = sample_rows {
        options.sample_rows = n;
    }
    match build_database(csv_dir, &out, &options) {
        Ok(report) => {
            print!("{report}");
            println!("database: {}", out.display());
            0
        }
        Err(e) => fail(e),
    }
}

fn open_toolset(cfg: &CliConfig) -> Result<Toolset, String> {
    let b = backend::open(&cfg.backend_config()).map_err(|e| e.to_string())?;
    Ok(Toolset::with_detected_schema(b, cfg.output))
}

fn cmd_serve(path: &Path, over: &Overrides) -> u8 {
    let cfg = match effective(path, &over.to_map()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let tools = match open_toolset(&cfg) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let gate = Arc::new(AccessGate::new(cfg.auth.clone(), cfg.rate, cfg.output, Arc::new(SystemClock)));
    let mut server = Server::new(gate);
    if let Err(e) = register_tools(&mut server, Rc::new(tools)) {
        return fail(e);
    }
    let stdin = io::stdin();
    let stdout = io::stdout();
    match server.serve(stdin.lock(), BufWriter::new(stdout.lock())) {
        Ok(()) => 0,
        Err(e) => {
            error!("serve loop ended: {e}");
            1
        }
    }
}

fn cmd_validate(sql: &str) -> u8 {
    let sql = match read_sql(sql) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let v = validate(&sql);
    let out = json!({
        "allowed": v.allowed,
        "reason": v.reason.as_str(),
        "detail": v.detail,
        "message": v.message(),
    });
    println!("{out}");
    if v.allowed {
        0
    } else {
        2
    }
}

fn cmd_query(path: &Path, sql: &str, over: &Overrides) -> u8 {
    let sql = match read_sql(sql) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let cfg = match effective(path, &over.to_map()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let tools = match open_toolset(&cfg) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    match tools.run_query(&sql) {
        Ok(rs) => {
            println!("{}", render_result(&rs).joined());
            0
        }
        Err(f @ QueryFailure::Blocked(_)) => {
            eprintln!("{f}");
            2
        }
        Err(f) => {
            eprintln!("{f}");
            3
        }
    }
}

fn cmd_config(path: &Path, set: &[String], show: bool) -> u8 {
    let mut map = match config::load_file(path) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    if show {
        let eff = match effective_map(path, &ConfigMap::new()) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        print!("{}", config::render_config(&eff));
        return 0;
    }
    if set.is_empty() {
        let stdin = io::stdin();
        let mut input = stdin.lock();
        let mut stderr = io::stderr();
        map = match config::interactive(&mut input, &mut stderr, &map) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
    } else {
        for s in set {
            match config::parse_assignment(s) {
                Ok((k, v)) => {
                    map.insert(k, v);
                }
                Err(e) => return fail(e),
            }
        }
    }
    if let Err(e) = CliConfig::from_map(&map) {
        return fail(e);
    }
    match config::save_file(path, &map) {
        Ok(()) => {
            println!("wrote {}", path.display());
            0
        }
        Err(e) => fail(e),
    }
}

fn cmd_eval(path: &Path, cases: &Path, db: Option<&str>, now: &str, json_out: Option<&Path>, sequential: bool) -> u8 {
    let mut flags = ConfigMap::new();
    if let Some(db) = db {
        flags.insert(config::KEY_DB_PATH.to_string(), db.to_string());
    }
    let cfg = match effective(path, &flags) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let clock = match PinnedClock::new(now) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let cases = match load_cases(cases) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mode = if sequential { Execution::Sequential } else { Execution::Parallel };
    let report = match run_eval_with(mode, &cases, &cfg.db_path, &clock) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    print!("{}", report.render_text());
    if let Some(p) = json_out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        if let Err(e) = std::fs::write(p, text + "\n") {
            return fail(format!("{}: {e}", p.display()));
        }
    }
    let _ = io::stdout().flush();
    0
}

fn cmd_fixture(kind: FixtureKind, dir: &Path, seed: u64, modules: bool) -> u8 {
    let world = ClinicalWorld::generate(seed);
    let res = match kind {
        FixtureKind::Demo => {
            fixtures::write_demo_csvs(&world, dir, if modules { Layout::Modules } else { Layout::Flat })
        }
        FixtureKind::Benchmark => fixtures::write_benchmark_csvs(&world, dir)
            .and_then(|()| std::fs::write(dir.join("cases.jsonl"), fixtures::benchmark_cases_ndjson())),
    };
    match res {
        Ok(()) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => fail(e),
    }
}
