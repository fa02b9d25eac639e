mod common;

use std::rc::Rc;
use std::sync::Arc;

use m3_core::access_control::{AccessGate, AuthConfig, ManualClock, OutputPolicy, RatePolicy};
use m3_core::backend::LocalBackend;
use m3_core::toolset::{register_tools, Toolset};
use m3_core::wire::{parse_message, RpcMessage, Server, INVALID_PARAMS, INVALID_REQUEST};
use proptest::prelude::*;
use serde_json::{json, Value as Json};

const INIT: &str = r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{"protocolVersion":"2024-11-05","capabilities":{},"clientInfo":{"name":"t","version":"0"}}}"#;

fn server_for(db: &std::path::Path, auth: AuthConfig, rate: RatePolicy) -> Server {
    let output = OutputPolicy::new(100, 65536).unwrap();
    let gate = Arc::new(AccessGate::new(auth, rate, output, Arc::new(ManualClock::new(1_000_000))));
    let mut server = Server::new(gate);
    let backend = LocalBackend::open(db).unwrap();
    register_tools(&mut server, Rc::new(Toolset::with_detected_schema(Box::new(backend), output))).unwrap();
    server
}

fn default_server(db: &std::path::Path) -> Server {
    server_for(db, AuthConfig::default(), RatePolicy::new(10_000, 60).unwrap())
}

fn run_transcript(server: &mut Server, input: &str) -> String {
    let mut out = Vec::new();
    server.serve(input.as_bytes(), &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn mask_version(s: &str) -> String {
    let v = format!("\"version\":\"{}\"", env!("CARGO_PKG_VERSION"));
    s.replace(&v, "\"version\":\"<version>\"")
}

fn call(id: u64, name: &str, args: Json) -> String {
    json!({"jsonrpc":"2.0","id":id,"method":"tools/call","params":{"name":name,"arguments":args}}).to_string()
}

#[test]
fn golden_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let (_, db) = common::benchmark_db(dir.path());
    let input = include_str!("golden/transcript.in.jsonl");
    let first = mask_version(&run_transcript(&mut default_server(&db), input));
    let second = mask_version(&run_transcript(&mut default_server(&db), input));
    assert_eq!(first, second);
    let golden_path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/transcript.out.jsonl");
    if std::env::var_os("M3_BLESS").is_some() {
        std::fs::write(golden_path, &first).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path).expect("golden output present");
    assert_eq!(first, golden);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 4);
    let last: Json = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(last["error"]["code"], INVALID_PARAMS);
    assert_eq!(last["id"], 4);
}

#[test]
fn blocked_sql_is_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let (_, db) = common::benchmark_db(dir.path());
    let mut s = default_server(&db);
    s.handle_message(INIT.as_bytes()).unwrap();
    for (i, sql) in ["DELETE FROM patients", "DROP TABLE admissions", "SELECT 1; SELECT 2", "PRAGMA user_version=3"]
        .iter()
        .enumerate()
    {
        let resp: Json = serde_json::from_str(
            &s.handle_message(call(10 + i as u64, "execute_query", json!({"sql": sql})).as_bytes()).unwrap(),
        )
        .unwrap();
        assert!(resp.get("error").is_none(), "{resp}");
        assert_eq!(resp["result"]["isError"], true);
    }
    let hash = common::file_hash(&db);
    assert_eq!(hash, common::file_hash(&db));
}

#[test]
fn handlers_wait_for_initialize() {
    let dir = tempfile::tempdir().unwrap();
    let (_, db) = common::benchmark_db(dir.path());
    let mut s = default_server(&db);
    let early: Json = serde_json::from_str(&s.handle_message(call(1, "ping", json!({})).as_bytes()).unwrap()).unwrap();
    assert_eq!(early["error"]["code"], INVALID_REQUEST);
    assert_eq!(s.handler_invocations(), 0);
    s.handle_message(INIT.as_bytes()).unwrap();
    s.handle_message(call(2, "ping", json!({})).as_bytes()).unwrap();
    assert_eq!(s.handler_invocations(), 1);
}

#[test]
fn auth_gate_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let (_, db) = common::benchmark_db(dir.path());
    let key = b"wire-secret".to_vec();
    let auth =
        AuthConfig { enabled: true, issuer: "iss".into(), audience: "m3".into(), key: key.clone(), leeway_seconds: 0 };
    let mut s = server_for(&db, auth, RatePolicy::new(100, 60).unwrap());
    s.handle_message(INIT.as_bytes()).unwrap();
    let no_token: Json =
        serde_json::from_str(&s.handle_message(call(2, "ping", json!({})).as_bytes()).unwrap()).unwrap();
    assert_eq!(no_token["result"]["isError"], true);
    assert!(no_token["result"]["content"][0]["text"].as_str().unwrap().contains("token-missing"));
    let token =
        common::sign_token(common::HS256_HEADER, r#"{"sub":"alice","iss":"iss","aud":"m3","exp":2000000}"#, &key);
    let ok: Json =
        serde_json::from_str(&s.handle_message(call(3, "ping", json!({"_token": token})).as_bytes()).unwrap()).unwrap();
    assert_eq!(ok["result"]["isError"], false, "{ok}");
    assert_eq!(s.handler_invocations(), 1);
}

fn arb_line() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(INIT.to_string()),
        Just(r#"{"jsonrpc":"2.0","id":7,"method":"tools/list"}"#.to_string()),
        Just(r#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#.to_string()),
        Just(call(8, "ping", json!({}))),
        Just(call(9, "execute_query", json!({"sql": "SELECT COUNT(*) FROM patients"}))),
        Just(call(10, "execute_query", json!({"sql": "UPDATE patients SET gender='x'"}))),
        Just(call(11, "nope", json!({}))),
        Just(r#"{"jsonrpc":"2.0","id":12,"method":"resources/list"}"#.to_string()),
        Just("[1,2,3]".to_string()),
        "[a-z{}\":,0-9 ]{0,30}",
    ]
}

fn expects_response(line: &str) -> bool {
    match parse_message(line.as_bytes()) {
        Ok(RpcMessage::Request { .. }) => true,
        Ok(_) => false,
        Err(_) => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_response_per_request(lines in prop::collection::vec(arb_line(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let db = common::scratch_db(dir.path());
        let input: String = lines.iter().map(|l| format!("{l}\n")).collect();
        let out = run_transcript(&mut default_server(&db), &input);
        let expected: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty() && expects_response(l)).collect();
        let responses: Vec<&str> = out.lines().collect();
        prop_assert_eq!(responses.len(), expected.len());
        for (resp, req) in responses.iter().zip(expected) {
            let parsed = parse_message(resp.as_bytes());
            prop_assert!(matches!(parsed, Ok(RpcMessage::Response { .. })), "{}", resp);
            let r: Json = serde_json::from_str(resp).unwrap();
            if let Ok(q) = serde_json::from_str::<Json>(req) {
                if q.is_object() && q.get("id").is_some_and(|i| i.is_number() || i.is_string()) {
                    prop_assert_eq!(&r["id"], &q["id"]);
                }
            }
        }
    }
}
