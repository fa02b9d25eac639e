//! Request admission: HS256 bearer tokens, fixed-window rate limiting and
//! result-size limits. Runs before any tool handler touches the backend.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::Serialize;
use serde_json::Value as Json;
use sha2::Sha256;
use thiserror::Error;

use crate::backend::ResultSet;
use crate::render::render_table;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("token-missing: a bearer token is required in arguments._token")]
    Missing,
    #[error("token-malformed: {0}")]
    Malformed(String),
    #[error("token-invalid: {0}")]
    Invalid(String),
    #[error("token-expired: token expired at {exp}")]
    Expired { exp: i64 },
    #[error("token-rejected: {0}")]
    Rejected(String),
    #[error("rate-limited: retry after {retry_after_seconds} s")]
    RateLimited { retry_after_seconds: u64 },
}

impl AccessError {
    pub fn code(&self) -> &'static str {
        match self {
            AccessError::Missing => "token-missing",
            AccessError::Malformed(_) => "token-malformed",
            AccessError::Invalid(_) => "token-invalid",
            AccessError::Expired { .. } => "token-expired",
            AccessError::Rejected(_) => "token-rejected",
            AccessError::RateLimited { .. } => "rate-limited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessClaims {
    pub subject: String,
    pub issuer: String,
    pub audience: String,
    pub expiry: i64,
    pub scopes: BTreeSet<String>,
}

/// Verifies an HS256 JWT and returns its claims.
///
/// Only `alg: "HS256"` is accepted; `none` and every other algorithm are
/// rejected as invalid before the signature is consulted.
pub fn verify_token(
    token: &str,
    key: &[u8],
    expected_issuer: &str,
    expected_audience: &str,
    now: i64,
    leeway: i64,
) -> Result<AccessClaims, AccessError> {
    let parts: Vec<&str> = token.trim().split('.').collect();
    let [header_b64, payload_b64, sig_b64] = parts[..] else {
        return Err(AccessError::Malformed(format!("expected 3 dot-separated segments, found {}", parts.len())));
    };
    let header = decode_json_segment(header_b64, "header")?;
    let payload = decode_json_segment(payload_b64, "payload")?;
    let signature = URL_SAFE_NO_PAD.decode(sig_b64).map_err(|e| AccessError::Malformed(format!("signature: {e}")))?;

    match header.get("alg").and_then(Json::as_str) {
        Some("HS256") => {}
        Some(other) => return Err(AccessError::Invalid(format!("algorithm {other:?} not accepted"))),
        None => return Err(AccessError::Invalid("missing alg".into())),
    }

    let mut mac = Hmac::<Sha256>::new_from_slice(key).map_err(|e| AccessError::Invalid(e.to_string()))?;
    mac.update(header_b64.as_bytes());
    mac.update(b".");
    mac.update(payload_b64.as_bytes());
    mac.verify_slice(&signature).map_err(|_| AccessError::Invalid("signature mismatch".into()))?;

    let exp = payload
        .get("exp")
        .and_then(|v| v.as_i64().or_else(|| v.as_f64().map(|f| f as i64)))
        .ok_or_else(|| AccessError::Rejected("missing exp claim".into()))?;
    if exp <= now - leeway {
        return Err(AccessError::Expired { exp });
    }
    let issuer = payload.get("iss").and_then(Json::as_str).unwrap_or_default();
    if issuer != expected_issuer {
        return Err(AccessError::Rejected(format!("issuer {issuer:?} not accepted")));
    }
    let audiences: Vec<&str> = match payload.get("aud") {
        Some(Json::String(s)) => vec![s.as_str()],
        Some(Json::Array(a)) => a.iter().filter_map(Json::as_str).collect(),
        _ => Vec::new(),
    };
    if !audiences.contains(&expected_audience) {
        return Err(AccessError::Rejected(format!("audience {audiences:?} not accepted")));
    }
    let subject = payload
        .get("sub")
        .and_then(Json::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| AccessError::Rejected("missing sub claim".into()))?;
    let mut scopes = BTreeSet::new();
    if let Some(s) = payload.get("scope").and_then(Json::as_str) {
        scopes.extend(s.split_whitespace().map(String::from));
    }
    if let Some(a) = payload.get("scopes").and_then(Json::as_array) {
        scopes.extend(a.iter().filter_map(Json::as_str).map(String::from));
    }
    Ok(AccessClaims {
        subject: subject.to_string(),
        issuer: issuer.to_string(),
        audience: expected_audience.to_string(),
        expiry: exp,
        scopes,
    })
}

fn decode_json_segment(seg: &str, what: &str) -> Result<serde_json::Map<String, Json>, AccessError> {
    let bytes = URL_SAFE_NO_PAD.decode(seg).map_err(|e| AccessError::Malformed(format!("{what}: {e}")))?;
    match serde_json::from_slice(&bytes) {
        Ok(Json::Object(map)) => Ok(map),
        Ok(_) => Err(AccessError::Malformed(format!("{what} is not a JSON object"))),
        Err(e) => Err(AccessError::Malformed(format!("{what}: {e}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RatePolicy {
    pub max_requests: u32,
    pub window_seconds: u64,
}

impl RatePolicy {
    pub fn new(max_requests: u32, window_seconds: u64) -> Result<Self, String> {
        if max_requests == 0 || window_seconds == 0 {
            return Err("rate limit values must be positive".into());
        }
        Ok(Self { max_requests, window_seconds })
    }
}

impl fmt::Display for RatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.max_requests, self.window_seconds)
    }
}

impl FromStr for RatePolicy {
    type Err = String;

    /// Parses `"N/seconds"`, e.g. `"60/60"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, w) = s.trim().split_once('/').ok_or_else(|| format!("rate limit {s:?} must look like N/seconds"))?;
        let n: u32 = n.trim().parse().map_err(|_| format!("bad request count in {s:?}"))?;
        let w: u64 = w.trim().parse().map_err(|_| format!("bad window in {s:?}"))?;
        RatePolicy::new(n, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateDecision {
    Allowed,
    Denied { retry_after_seconds: u64 },
}

/// Fixed-window counter per user. Windows start at multiples of
/// `window_seconds` since the epoch.
#[derive(Debug, Default)]
pub struct RateLimiter {
    // user -> (window start, count in window)
    buckets: Mutex<HashMap<String, (u64, u32)>>,
}

impl RateLimiter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Atomic check-and-count for one request.
    pub fn check(&self, user: &str, now: u64, policy: &RatePolicy) -> RateDecision {
        let window_start = now - now % policy.window_seconds;
        let mut buckets = self.buckets.lock().unwrap_or_else(|p| p.into_inner());
        let entry = buckets.entry(user.to_string()).or_insert((window_start, 0));
        if entry.0 != window_start {
            *entry = (window_start, 0);
        }
        if entry.1 < policy.max_requests {
            entry.1 += 1;
            RateDecision::Allowed
        } else {
            RateDecision::Denied { retry_after_seconds: window_start + policy.window_seconds - now }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputPolicy {
    pub max_rows: usize,
    pub max_bytes: usize,
}

impl OutputPolicy {
    pub fn new(max_rows: usize, max_bytes: usize) -> Result<Self, String> {
        if max_rows == 0 || max_bytes == 0 {
            return Err("output limits must be positive".into());
        }
        Ok(Self { max_rows, max_bytes })
    }
}

/// Caps rows at `max_rows`, then drops tail rows until the rendered table
/// fits in `max_bytes`. Idempotent.
pub fn enforce_output(mut rs: ResultSet, policy: &OutputPolicy) -> ResultSet {
    if rs.rows.len() > policy.max_rows {
        rs.rows.truncate(policy.max_rows);
        rs.truncated = true;
    }
    if render_table(&rs).len() <= policy.max_bytes {
        return rs;
    }
    // rendering length is monotone in the row count, so binary search the
    // largest prefix that fits
    let all = std::mem::take(&mut rs.rows);
    let (mut lo, mut hi) = (0usize, all.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        rs.rows = all[..mid].to_vec();
        if render_table(&rs).len() <= policy.max_bytes {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    rs.rows = all[..lo].to_vec();
    rs.truncated = true;
    rs
}

pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// Manually advanced clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(t: u64) -> Self {
        Self(AtomicU64::new(t))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AuthConfig {
    pub enabled: bool,
    pub issuer: String,
    pub audience: String,
    pub key: Vec<u8>,
    pub leeway_seconds: i64,
}

impl fmt::Debug for AuthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthConfig")
            .field("enabled", &self.enabled)
            .field("issuer", &self.issuer)
            .field("audience", &self.audience)
            .field("key", &format_args!("<{} bytes>", self.key.len()))
            .field("leeway_seconds", &self.leeway_seconds)
            .finish()
    }
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self { enabled: false, issuer: String::new(), audience: String::new(), key: Vec::new(), leeway_seconds: 30 }
    }
}

pub const ANONYMOUS: &str = "anonymous";

/// Who a request was admitted as.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub subject: String,
    pub claims: Option<AccessClaims>,
}

/// Authentication plus rate limiting in one place, with a counter of token
/// verifications for instrumentation.
pub struct AccessGate {
    auth: AuthConfig,
    rate: RatePolicy,
    output: OutputPolicy,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    verifications: AtomicU64,
}

impl AccessGate {
    pub fn new(auth: AuthConfig, rate: RatePolicy, output: OutputPolicy, clock: Arc<dyn Clock>) -> Self {
        Self { auth, rate, output, limiter: RateLimiter::new(), clock, verifications: AtomicU64::new(0) }
    }

    pub fn output_policy(&self) -> &OutputPolicy {
        &self.output
    }

    pub fn auth_enabled(&self) -> bool {
        self.auth.enabled
    }

    /// Number of times a token was verified since construction.
    pub fn verification_count(&self) -> u64 {
        self.verifications.load(Ordering::SeqCst)
    }

    /// Authenticates (when enabled) and then counts the request against the
    /// caller's rate bucket: the token subject, or a shared anonymous bucket.
    pub fn admit(&self, token: Option<&str>) -> Result<Identity, AccessError> {
        let now = self.clock.now();
        let identity = if self.auth.enabled {
            let token = token.ok_or(AccessError::Missing)?;
            self.verifications.fetch_add(1, Ordering::SeqCst);
            let claims = verify_token(
                token,
                &self.auth.key,
                &self.auth.issuer,
                &self.auth.audience,
                now as i64,
                self.auth.leeway_seconds,
            )?;
            Identity { subject: claims.subject.clone(), claims: Some(claims) }
        } else {
            Identity { subject: ANONYMOUS.to_string(), claims: None }
        };
        match self.limiter.check(&identity.subject, now, &self.rate) {
            RateDecision::Allowed => Ok(identity),
            RateDecision::Denied { retry_after_seconds } => Err(AccessError::RateLimited { retry_after_seconds }),
        }
    }
}
