//! MCP server over newline-delimited JSON-RPC 2.0.
//!
//! One JSON object per LF-terminated line on stdin; one response line per
//! request on stdout; notifications get no reply. Requests are handled
//! strictly in order on one thread. Tool failures (blocked SQL, access
//! denials, handler panics) are reported in-band as `isError: true`; only
//! protocol problems become JSON-RPC error objects.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::access_control::{AccessClaims, AccessGate};
use crate::toolset::{ToolResult, SERVER_NAME};

pub const PROTOCOL_VERSION: &str = "2024-11-05";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;

/// Reserved argument carrying the bearer token on `tools/call`.
pub const TOKEN_ARGUMENT: &str = "_token";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("tool {0:?} is already registered")]
    DuplicateTool(String),
    #[error("tool name {0:?} is not snake_case")]
    BadToolName(String),
    #[error("tools must be registered before initialize")]
    RegistrationClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Json,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, input_schema: Json) -> Self {
        Self { name: name.to_string(), description: description.to_string(), input_schema }
    }
}

pub type ToolHandler = Box<dyn Fn(&Map<String, Json>) -> ToolResult>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Created,
    Initialized,
}

/// JSON-RPC id: integer or string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum RpcId {
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

/// One parsed line.
#[derive(Debug, Clone, PartialEq)]
pub enum RpcMessage {
    Request {
        id: RpcId,
        method: String,
        params: Option<Map<String, Json>>,
    },
    Notification {
        method: String,
        params: Option<Map<String, Json>>,
    },
    /// `id` is `None` for error replies to unidentifiable requests.
    Response {
        id: Option<RpcId>,
        result: Option<Json>,
        error: Option<RpcError>,
    },
}

#[derive(Serialize)]
struct Envelope<'a> {
    jsonrpc: &'static str,
    id: Option<&'a RpcId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Json>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<RpcError>,
}

fn encode(id: Option<&RpcId>, outcome: Result<Json, RpcError>) -> String {
    let (result, error) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    serde_json::to_string(&Envelope { jsonrpc: "2.0", id, result, error }).expect("response serializes")
}

fn rpc_error(code: i64, message: impl Into<String>) -> RpcError {
    RpcError { code, message: message.into() }
}

fn parse_id(v: &Json) -> Option<RpcId> {
    match v {
        Json::Number(n) => n.as_i64().map(RpcId::Int),
        Json::String(s) => Some(RpcId::Str(s.clone())),
        _ => None,
    }
}

/// Classifies one line. On failure returns the error plus whatever id could
/// be recovered for the reply.
pub fn parse_message(raw: &[u8]) -> Result<RpcMessage, (Option<RpcId>, RpcError)> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| (None, rpc_error(PARSE_ERROR, format!("Parse error: invalid UTF-8 ({e})"))))?;
    let value: Json =
        serde_json::from_str(text).map_err(|e| (None, rpc_error(PARSE_ERROR, format!("Parse error: {e}"))))?;
    let Json::Object(obj) = value else {
        return Err((None, rpc_error(INVALID_REQUEST, "Invalid Request: expected a JSON object")));
    };
    let null_id = obj.get("id").is_some_and(Json::is_null);
    let id = match obj.get("id") {
        None | Some(Json::Null) => None,
        Some(v) => match parse_id(v) {
            Some(id) => Some(id),
            None => return Err((None, rpc_error(INVALID_REQUEST, "Invalid Request: id must be an integer or string"))),
        },
    };
    if obj.get("jsonrpc").and_then(Json::as_str) != Some("2.0") {
        return Err((id, rpc_error(INVALID_REQUEST, "Invalid Request: jsonrpc must be \"2.0\"")));
    }
    let params = match obj.get("params") {
        None | Some(Json::Null) => None,
        Some(Json::Object(m)) => Some(m.clone()),
        Some(_) => return Err((id, rpc_error(INVALID_PARAMS, "Invalid params: params must be an object"))),
    };
    let is_reply = !obj.contains_key("method") && obj.contains_key("result") != obj.contains_key("error");
    if null_id && !is_reply {
        return Err((None, rpc_error(INVALID_REQUEST, "Invalid Request: id must be an integer or string")));
    }
    match (obj.get("method"), id) {
        (Some(Json::String(m)), Some(id)) => Ok(RpcMessage::Request { id, method: m.clone(), params }),
        (Some(Json::String(m)), None) => Ok(RpcMessage::Notification { method: m.clone(), params }),
        (Some(_), id) => Err((id, rpc_error(INVALID_REQUEST, "Invalid Request: method must be a string"))),
        (None, id) if is_reply && (id.is_some() || null_id) => {
            let error = obj
                .get("error")
                .and_then(|e| serde_json::from_value::<ErrorShape>(e.clone()).ok())
                .map(|e| rpc_error(e.code, e.message));
            Ok(RpcMessage::Response { id, result: obj.get("result").cloned(), error })
        }
        (None, id) => Err((id, rpc_error(INVALID_REQUEST, "Invalid Request: missing method"))),
    }
}

#[derive(serde::Deserialize)]
struct ErrorShape {
    code: i64,
    message: String,
}

pub struct Server {
    phase: Phase,
    registry: Vec<(ToolDescriptor, ToolHandler)>,
    gate: Arc<AccessGate>,
    session_identity: Option<AccessClaims>,
    version: String,
    handler_calls: AtomicU64,
}

impl Server {
    pub fn new(gate: Arc<AccessGate>) -> Self {
        Self {
            phase: Phase::Created,
            registry: Vec::new(),
            gate,
            session_identity: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            handler_calls: AtomicU64::new(0),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn session_identity(&self) -> Option<&AccessClaims> {
        self.session_identity.as_ref()
    }

    /// Number of tool handler invocations so far.
    pub fn handler_invocations(&self) -> u64 {
        self.handler_calls.load(Ordering::SeqCst)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.registry.iter().map(|(d, _)| d)
    }

    pub fn register_tool(&mut self, descriptor: ToolDescriptor, handler: ToolHandler) -> Result<(), WireError> {
        if self.phase != Phase::Created {
            return Err(WireError::RegistrationClosed);
        }
        let snake = !descriptor.name.is_empty()
            && descriptor.name.starts_with(|c: char| c.is_ascii_lowercase())
            && descriptor.name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
        if !snake {
            return Err(WireError::BadToolName(descriptor.name));
        }
        if self.registry.iter().any(|(d, _)| d.name == descriptor.name) {
            return Err(WireError::DuplicateTool(descriptor.name));
        }
        self.registry.push((descriptor, handler));
        Ok(())
    }

    /// Handles one input line. Returns the response line (no trailing
    /// newline) for requests and malformed input, `None` for notifications.
    pub fn handle_message(&mut self, raw: &[u8]) -> Option<String> {
        match parse_message(raw) {
            Err((id, err)) => Some(encode(id.as_ref(), Err(err))),
            Ok(RpcMessage::Notification { method, .. }) => {
                log::debug!("notification {method}");
                None
            }
            Ok(RpcMessage::Response { id, .. }) => {
                log::debug!("ignoring client response {id:?}");
                None
            }
            Ok(RpcMessage::Request { id, method, params }) => {
                let outcome = self.dispatch(&method, params.unwrap_or_default());
                Some(encode(Some(&id), outcome))
            }
        }
    }

    fn dispatch(&mut self, method: &str, params: Map<String, Json>) -> Result<Json, RpcError> {
        match method {
            "initialize" => self.initialize(&params),
            "tools/list" => {
                self.require_initialized()?;
                let tools: Vec<&ToolDescriptor> = self.descriptors().collect();
                Ok(json!({ "tools": tools }))
            }
            "tools/call" => {
                self.require_initialized()?;
                self.tools_call(params)
            }
            other => Err(rpc_error(METHOD_NOT_FOUND, format!("Method not found: {other}"))),
        }
    }

    fn require_initialized(&self) -> Result<(), RpcError> {
        match self.phase {
            Phase::Initialized => Ok(()),
            Phase::Created => {
                Err(rpc_error(INVALID_REQUEST, "Invalid Request: server not initialized; send initialize first"))
            }
        }
    }

    fn initialize(&mut self, params: &Map<String, Json>) -> Result<Json, RpcError> {
        if self.phase != Phase::Created {
            return Err(rpc_error(INVALID_REQUEST, "Invalid Request: already initialized"));
        }
        if let Some(requested) = params.get("protocolVersion").and_then(Json::as_str) {
            if requested != PROTOCOL_VERSION {
                log::info!("client requested protocol {requested}; answering with {PROTOCOL_VERSION}");
            }
        }
        self.phase = Phase::Initialized;
        Ok(json!({
            "protocolVersion": PROTOCOL_VERSION,
            "capabilities": { "tools": { "listChanged": false } },
            "serverInfo": { "name": SERVER_NAME, "version": self.version },
        }))
    }

    fn tools_call(&mut self, params: Map<String, Json>) -> Result<Json, RpcError> {
        let name = params
            .get("name")
            .and_then(Json::as_str)
            .ok_or_else(|| rpc_error(INVALID_PARAMS, "Invalid params: name must be a string"))?;
        let mut arguments = match params.get("arguments") {
            None | Some(Json::Null) => Map::new(),
            Some(Json::Object(m)) => m.clone(),
            Some(_) => return Err(rpc_error(INVALID_PARAMS, "Invalid params: arguments must be an object")),
        };
        let Some(idx) = self.registry.iter().position(|(d, _)| d.name == name) else {
            return Err(rpc_error(INVALID_PARAMS, format!("Unknown tool: {name}")));
        };
        let token = arguments.remove(TOKEN_ARGUMENT);
        check_arguments(&self.registry[idx].0.input_schema, &arguments)
            .map_err(|m| rpc_error(INVALID_PARAMS, format!("Invalid params for {name}: {m}")))?;

        let admitted = match &token {
            None => self.gate.admit(None),
            Some(Json::String(t)) => self.gate.admit(Some(t)),
            // a non-string token is as good as a missing one
            Some(_) => self.gate.admit(Some("")),
        };
        let (subject, result) = match admitted {
            Err(e) => (None, ToolResult::error(format!("Access denied ({}): {e}", e.code()))),
            Ok(identity) => {
                if let Some(c) = identity.claims {
                    self.session_identity = Some(c);
                }
                self.handler_calls.fetch_add(1, Ordering::SeqCst);
                let handler = &self.registry[idx].1;
                let result = catch_unwind(AssertUnwindSafe(|| handler(&arguments))).unwrap_or_else(|_| {
                    log::error!("tool {name} panicked");
                    ToolResult::error(format!("internal error while running {name}"))
                });
                (Some(identity.subject), result)
            }
        };
        log::info!(
            target: "audit",
            "ts={} subject={} tool={} verdict={} rows={}",
            crate::access_control::Clock::now(&crate::access_control::SystemClock),
            subject.as_deref().unwrap_or("-"),
            name,
            if result.is_error { "error" } else { "ok" },
            result.rows.map_or("-".to_string(), |r| r.to_string()),
        );
        let content: Vec<Json> = result.text_blocks.iter().map(|t| json!({ "type": "text", "text": t })).collect();
        Ok(json!({ "content": content, "isError": result.is_error }))
    }

    /// Reads requests until EOF, writing one line per response. A closed
    /// output pipe ends the loop cleanly.
    pub fn serve<R: BufRead, W: Write>(&mut self, mut input: R, mut output: W) -> io::Result<()> {
        let mut line = Vec::new();
        loop {
            line.clear();
            if input.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            while matches!(line.last(), Some(b'\n' | b'\r')) {
                line.pop();
            }
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            if let Some(resp) = self.handle_message(&line) {
                let written = output
                    .write_all(resp.as_bytes())
                    .and_then(|_| output.write_all(b"\n"))
                    .and_then(|_| output.flush());
                if let Err(e) = written {
                    if e.kind() == io::ErrorKind::BrokenPipe {
                        log::info!("output closed; stopping");
                        return Ok(());
                    }
                    return Err(e);
                }
            }
        }
        Ok(())
    }
}

fn type_matches(expected: &str, v: &Json) -> bool {
    match expected {
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "object" => v.is_object(),
        "array" => v.is_array(),
        "null" => v.is_null(),
        _ => true,
    }
}

/// Checks arguments against the subset of JSON Schema the descriptors use:
/// `properties` with `type` (string or list), `required`, and no extra keys.
pub fn check_arguments(schema: &Json, args: &Map<String, Json>) -> Result<(), String> {
    let empty = Map::new();
    let props = schema.get("properties").and_then(Json::as_object).unwrap_or(&empty);
    let required: HashSet<&str> = schema
        .get("required")
        .and_then(Json::as_array)
        .map(|a| a.iter().filter_map(Json::as_str).collect())
        .unwrap_or_default();
    for r in &required {
        if args.get(*r).is_none_or(Json::is_null) {
            return Err(format!("missing required argument {r:?}"));
        }
    }
    for (k, v) in args {
        let Some(spec) = props.get(k) else {
            return Err(format!("unexpected argument {k:?}"));
        };
        if v.is_null() && !required.contains(k.as_str()) {
            continue;
        }
        let ok = match spec.get("type") {
            Some(Json::String(t)) => type_matches(t, v),
            Some(Json::Array(ts)) => ts.iter().filter_map(Json::as_str).any(|t| type_matches(t, v)),
            _ => true,
        };
        if !ok {
            return Err(format!("argument {k:?} has the wrong type"));
        }
    }
    Ok(())
}
