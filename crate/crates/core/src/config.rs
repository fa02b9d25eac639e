//! Operator configuration: a flat `KEY=VALUE` file, environment overrides
//! and an interactive prompt session.
//!
//! Precedence, lowest first: defaults, file, environment, command-line.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

use crate::access_control::{AuthConfig, OutputPolicy, RatePolicy};
use crate::backend::{BackendConfig, BackendKind};

pub const KEY_BACKEND: &str = "M3_BACKEND";
pub const KEY_DB_PATH: &str = "M3_DB_PATH";
pub const KEY_REMOTE_ENDPOINT: &str = "M3_REMOTE_ENDPOINT";
pub const KEY_AUTH_ENABLED: &str = "M3_OAUTH2_ENABLED";
pub const KEY_AUTH_ISSUER: &str = "M3_OAUTH2_ISSUER";
pub const KEY_AUTH_AUDIENCE: &str = "M3_OAUTH2_AUDIENCE";
pub const KEY_AUTH_KEY: &str = "M3_OAUTH2_KEY";
pub const KEY_RATE_LIMIT: &str = "M3_RATE_LIMIT";
pub const KEY_MAX_ROWS: &str = "M3_MAX_ROWS";
pub const KEY_MAX_BYTES: &str = "M3_MAX_BYTES";

/// Recognised keys in file order.
pub const KNOWN_KEYS: &[&str] = &[
    KEY_BACKEND,
    KEY_DB_PATH,
    KEY_REMOTE_ENDPOINT,
    KEY_AUTH_ENABLED,
    KEY_AUTH_ISSUER,
    KEY_AUTH_AUDIENCE,
    KEY_AUTH_KEY,
    KEY_RATE_LIMIT,
    KEY_MAX_ROWS,
    KEY_MAX_BYTES,
];

pub const DEFAULT_DB_PATH: &str = "m3.db";
pub const DEFAULT_RATE_LIMIT: &str = "60/60";
pub const DEFAULT_MAX_ROWS: usize = 100;
pub const DEFAULT_MAX_BYTES: usize = 65536;

pub type ConfigMap = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected KEY=VALUE")]
    Syntax { path: String, line: usize },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("input ended before configuration was complete")]
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub backend_kind: BackendKind,
    pub db_path: PathBuf,
    pub remote_endpoint: String,
    pub auth: AuthConfig,
    pub rate: RatePolicy,
    pub output: OutputPolicy,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            backend_kind: BackendKind::Local,
            db_path: PathBuf::from(DEFAULT_DB_PATH),
            remote_endpoint: String::new(),
            auth: AuthConfig::default(),
            rate: DEFAULT_RATE_LIMIT.parse().unwrap(),
            output: OutputPolicy::new(DEFAULT_MAX_ROWS, DEFAULT_MAX_BYTES).unwrap(),
        }
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" | "on" => Ok(true),
        "false" | "0" | "no" | "n" | "off" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

/// Checks one value for a known key. Unknown keys pass through untouched.
pub fn validate_entry(key: &str, value: &str) -> Result<(), String> {
    match key {
        KEY_BACKEND => value.parse::<BackendKind>().map(drop),
        KEY_DB_PATH if value.trim().is_empty() => Err("path must not be empty".into()),
        KEY_AUTH_ENABLED => parse_bool(value).map(drop),
        KEY_AUTH_KEY => STANDARD.decode(value.trim()).map_err(|e| format!("not valid base64: {e}")).and_then(|k| {
            if k.is_empty() {
                Err("key must not be empty".into())
            } else {
                Ok(())
            }
        }),
        KEY_RATE_LIMIT => value.parse::<RatePolicy>().map(drop),
        KEY_MAX_ROWS | KEY_MAX_BYTES => parse_positive(value).map(drop),
        _ => Ok(()),
    }
}

impl CliConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, ConfigError> {
        let err = |key: &str, message: String| ConfigError::Value { key: key.to_string(), message };
        for (k, v) in map {
            validate_entry(k, v).map_err(|m| err(k, m))?;
        }
        let mut cfg = CliConfig::default();
        let get = |k: &str| map.get(k).map(|v| v.trim());
        if let Some(v) = get(KEY_BACKEND) {
            cfg.backend_kind = v.parse().map_err(|m| err(KEY_BACKEND, m))?;
        }
        if let Some(v) = get(KEY_DB_PATH) {
            cfg.db_path = PathBuf::from(v);
        }
        if let Some(v) = get(KEY_REMOTE_ENDPOINT) {
            cfg.remote_endpoint = v.to_string();
        }
        if let Some(v) = get(KEY_AUTH_ENABLED) {
            cfg.auth.enabled = parse_bool(v).map_err(|m| err(KEY_AUTH_ENABLED, m))?;
        }
        if let Some(v) = get(KEY_AUTH_ISSUER) {
            cfg.auth.issuer = v.to_string();
        }
        if let Some(v) = get(KEY_AUTH_AUDIENCE) {
            cfg.auth.audience = v.to_string();
        }
        if let Some(v) = get(KEY_AUTH_KEY) {
            cfg.auth.key = STANDARD.decode(v).map_err(|e| err(KEY_AUTH_KEY, e.to_string()))?;
        }
        if let Some(v) = get(KEY_RATE_LIMIT) {
            cfg.rate = v.parse().map_err(|m| err(KEY_RATE_LIMIT, m))?;
        }
        let rows = get(KEY_MAX_ROWS).map(parse_positive).transpose().map_err(|m| err(KEY_MAX_ROWS, m))?;
        let bytes = get(KEY_MAX_BYTES).map(parse_positive).transpose().map_err(|m| err(KEY_MAX_BYTES, m))?;
        cfg.output = OutputPolicy::new(rows.unwrap_or(DEFAULT_MAX_ROWS), bytes.unwrap_or(DEFAULT_MAX_BYTES))
            .map_err(|m| err(KEY_MAX_ROWS, m))?;
        if cfg.auth.enabled && cfg.auth.key.is_empty() {
            return Err(err(KEY_AUTH_KEY, "required when authentication is enabled".into()));
        }
        Ok(cfg)
    }

    /// The inverse of [`CliConfig::from_map`] for recognised keys.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let kind = match self.backend_kind {
            BackendKind::Local => "local",
            BackendKind::Remote => "remote",
        };
        m.insert(KEY_BACKEND.into(), kind.into());
        m.insert(KEY_DB_PATH.into(), self.db_path.display().to_string());
        if !self.remote_endpoint.is_empty() {
            m.insert(KEY_REMOTE_ENDPOINT.into(), self.remote_endpoint.clone());
        }
        m.insert(KEY_AUTH_ENABLED.into(), self.auth.enabled.to_string());
        if !self.auth.issuer.is_empty() {
            m.insert(KEY_AUTH_ISSUER.into(), self.auth.issuer.clone());
        }
        if !self.auth.audience.is_empty() {
            m.insert(KEY_AUTH_AUDIENCE.into(), self.auth.audience.clone());
        }
        if !self.auth.key.is_empty() {
            m.insert(KEY_AUTH_KEY.into(), STANDARD.encode(&self.auth.key));
        }
        m.insert(KEY_RATE_LIMIT.into(), self.rate.to_string());
        m.insert(KEY_MAX_ROWS.into(), self.output.max_rows.to_string());
        m.insert(KEY_MAX_BYTES.into(), self.output.max_bytes.to_string());
        m
    }

    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            kind: self.backend_kind,
            location: match self.backend_kind {
                BackendKind::Local => self.db_path.display().to_string(),
                BackendKind::Remote => self.remote_endpoint.clone(),
            },
            default_max_rows: self.output.max_rows,
        }
    }
}

/// `$XDG_CONFIG_HOME/m3/config.env`, else `~/.config/m3/config.env`.
pub fn default_config_path() -> PathBuf {
    if let Some(x) = std::env::var_os("XDG_CONFIG_HOME").filter(|v| !v.is_empty()) {
        return PathBuf::from(x).join("m3").join("config.env");
    }
    match std::env::var_os("HOME").filter(|v| !v.is_empty()) {
        Some(home) => PathBuf::from(home).join(".config").join("m3").join("config.env"),
        None => PathBuf::from("m3.env"),
    }
}

/// Parses `KEY=VALUE` text. `#` starts a comment line, `export ` prefixes
/// are accepted, and matching surrounding quotes are stripped.
pub fn parse_config(text: &str, origin: &str) -> Result<ConfigMap, ConfigError> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line = line.strip_prefix("export ").unwrap_or(line);
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { path: origin.to_string(), line: i + 1 });
        };
        let k = k.trim();
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Syntax { path: origin.to_string(), line: i + 1 });
        }
        map.insert(k.to_string(), unquote(v.trim()).to_string());
    }
    Ok(map)
}

fn unquote(v: &str) -> &str {
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

fn needs_quotes(v: &str) -> bool {
    v.is_empty() || v.chars().any(|c| c.is_whitespace() || "#\"'$`\\;&|<>()".contains(c))
}

/// Known keys first in canonical order, then any others alphabetically.
pub fn render_config(map: &ConfigMap) -> String {
    let mut out = String::from("# m3 configuration\n");
    let known = KNOWN_KEYS.iter().filter_map(|k| map.get_key_value(*k));
    let extra = map.iter().filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()));
    for (k, v) in known.chain(extra) {
        if needs_quotes(v) && !v.contains('\'') {
            out.push_str(&format!("{k}='{v}'\n"));
        } else {
            out.push_str(&format!("{k}={v}\n"));
        }
    }
    out
}

/// Missing file reads as empty.
pub fn load_file(path: &Path) -> Result<ConfigMap, ConfigError> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_config(&text, &path.display().to_string()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ConfigMap::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn save_file(path: &Path, map: &ConfigMap) -> Result<(), ConfigError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render_config(map))?;
    Ok(())
}

/// Known keys present in the given environment.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> ConfigMap {
    vars.into_iter().filter(|(k, _)| KNOWN_KEYS.contains(&k.as_str())).collect()
}

/// Later layers win.
pub fn layer(layers: &[&ConfigMap]) -> ConfigMap {
    let mut out = ConfigMap::new();
    for l in layers {
        out.extend(l.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    out
}

/// Parses a `KEY=VALUE` assignment and validates it.
pub fn parse_assignment(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax { path: "--set".into(), line: 1 })?;
    let k = k.trim().to_string();
    if !KNOWN_KEYS.contains(&k.as_str()) {
        return Err(ConfigError::UnknownKey(k));
    }
    let v = v.trim().to_string();
    validate_entry(&k, &v).map_err(|message| ConfigError::Value { key: k.clone(), message })?;
    Ok((k, v))
}

struct Prompt<'a, R, W> {
    input: &'a mut R,
    output: &'a mut W,
}

impl<R: BufRead, W: Write> Prompt<'_, R, W> {
    /// Asks until the answer validates. Empty input keeps the default.
    fn ask(
        &mut self,
        question: &str,
        default: &str,
        check: impl Fn(&str) -> Result<(), String>,
    ) -> Result<String, ConfigError> {
        loop {
            if default.is_empty() {
                write!(self.output, "{question}: ")?;
            } else {
                write!(self.output, "{question} [{default}]: ")?;
            }
            self.output.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Err(ConfigError::Eof);
            }
            let answer = match line.trim() {
                "" => default.to_string(),
                a => a.to_string(),
            };
            match check(&answer) {
                Ok(()) => return Ok(answer),
                Err(m) => writeln!(self.output, "  invalid: {m}")?,
            }
        }
    }
}

/// Walks through backend, location, auth and limits, starting from
/// `current`. Keys not asked about are carried over unchanged.
pub fn interactive<R: BufRead, W: Write>(
    input: &mut R,
    output: &mut W,
    current: &ConfigMap,
) -> Result<ConfigMap, ConfigError> {
    let mut p = Prompt { input, output };
    let mut map = current.clone();
    let cur = |k: &str, d: &str| current.get(k).cloned().unwrap_or_else(|| d.to_string());
    let v = |k: &'static str| move |a: &str| validate_entry(k, a);

    let backend = p.ask("Backend (local or remote)", &cur(KEY_BACKEND, "local"), v(KEY_BACKEND))?;
    let kind: BackendKind = backend.parse().map_err(|m| ConfigError::Value { key: KEY_BACKEND.into(), message: m })?;
    map.insert(KEY_BACKEND.into(), backend.trim().to_ascii_lowercase());
    match kind {
        BackendKind::Local => {
            let path = p.ask("Database path", &cur(KEY_DB_PATH, DEFAULT_DB_PATH), v(KEY_DB_PATH))?;
            map.insert(KEY_DB_PATH.into(), path);
        }
        BackendKind::Remote => {
            let ep = p.ask("Remote endpoint", &cur(KEY_REMOTE_ENDPOINT, ""), |a| {
                if a.trim().is_empty() {
                    Err("endpoint must not be empty".into())
                } else {
                    Ok(())
                }
            })?;
            map.insert(KEY_REMOTE_ENDPOINT.into(), ep);
        }
    }
    let enabled =
        p.ask("Enable OAuth2 token checks (true/false)", &cur(KEY_AUTH_ENABLED, "false"), v(KEY_AUTH_ENABLED))?;
    let enabled_bool = parse_bool(&enabled).unwrap_or(false);
    map.insert(KEY_AUTH_ENABLED.into(), enabled_bool.to_string());
    if enabled_bool {
        let issuer = p.ask("Token issuer", &cur(KEY_AUTH_ISSUER, ""), |_| Ok(()))?;
        map.insert(KEY_AUTH_ISSUER.into(), issuer);
        let audience = p.ask("Token audience", &cur(KEY_AUTH_AUDIENCE, ""), |_| Ok(()))?;
        map.insert(KEY_AUTH_AUDIENCE.into(), audience);
        let key = p.ask("HS256 key (base64)", &cur(KEY_AUTH_KEY, ""), |a| {
            if a.trim().is_empty() {
                Err("key is required when authentication is enabled".into())
            } else {
                validate_entry(KEY_AUTH_KEY, a)
            }
        })?;
        map.insert(KEY_AUTH_KEY.into(), key);
    }
    let rate = p.ask("Rate limit (requests/seconds)", &cur(KEY_RATE_LIMIT, DEFAULT_RATE_LIMIT), v(KEY_RATE_LIMIT))?;
    map.insert(KEY_RATE_LIMIT.into(), rate);
    let rows = p.ask("Max rows per result", &cur(KEY_MAX_ROWS, &DEFAULT_MAX_ROWS.to_string()), v(KEY_MAX_ROWS))?;
    map.insert(KEY_MAX_ROWS.into(), rows);
    let bytes = p.ask("Max bytes per result", &cur(KEY_MAX_BYTES, &DEFAULT_MAX_BYTES.to_string()), v(KEY_MAX_BYTES))?;
    map.insert(KEY_MAX_BYTES.into(), bytes);
    Ok(map)
}
