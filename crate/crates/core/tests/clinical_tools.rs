mod common;

use m3_core::access_control::OutputPolicy;
use m3_core::backend::{LocalBackend, Value};
use m3_core::fixtures::ClinicalWorld;
use m3_core::render::{parse_sql_block, render_table};
use m3_core::toolset::{lab_results_sql, ClinicalSchema, DemographicDimension, Toolset};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn tools(db: &std::path::Path, max_rows: usize) -> Toolset {
    let b = LocalBackend::open(db).unwrap();
    Toolset::with_detected_schema(Box::new(b), OutputPolicy::new(max_rows, 1 << 20).unwrap())
}

fn rows_of(text: &str) -> Vec<&str> {
    // drop header, rule and the trailing count note
    let lines: Vec<&str> = text.lines().collect();
    lines[2..lines.len() - 1].to_vec()
}

fn check_labs(w: &ClinicalWorld, t: &Toolset, pid: Option<i64>, filter: Option<&str>, limit: usize) {
    let pid_json = pid.map(|p| json!(p));
    let r = t.lab_results(pid_json.as_ref(), filter, Some(&json!(limit)));
    assert!(!r.is_error, "{}", r.joined());
    let oracle = common::lab_oracle(w, pid, filter, limit);
    let table = render_table(&oracle);
    assert_eq!(rows_of(&r.text_blocks[0]), table.lines().skip(2).collect::<Vec<_>>(), "pid={pid:?} filter={filter:?}");
    assert_eq!(r.rows, Some(oracle.rows.len()));
    let sql = parse_sql_block(r.text_blocks.last().unwrap()).unwrap();
    assert_eq!(sql, lab_results_sql(t.schema(), pid, filter, limit));
}

#[test]
fn lab_results_match_join_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (w, db) = common::benchmark_db(dir.path());
    let t = tools(&db, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let p = w.patients.choose(&mut rng).unwrap().subject_id;
        let filter = *[None, Some("glucose"), Some("GLU"), Some("o"), Some("x'; --")].choose(&mut rng).unwrap();
        check_labs(&w, &t, Some(p), filter, rng.gen_range(1..20));
    }
    check_labs(&w, &t, None, None, 100_000);
    check_labs(&w, &t, None, Some("Glucose"), 100_000);
    // the first patient has no labs at all
    check_labs(&w, &t, Some(w.patients[0].subject_id), None, 10);
}

#[test]
fn demographics_sum_to_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let (w, db) = common::benchmark_db(dir.path());
    let t = tools(&db, 100_000);
    for dim in DemographicDimension::ALL {
        let sql = m3_core::toolset::demographics_sql(t.schema(), dim);
        let rs = t.run_query(&sql).unwrap();
        let total: i64 = rs
            .rows
            .iter()
            .map(|r| match r[1] {
                Value::Integer(n) => n,
                ref v => panic!("{v:?}"),
            })
            .sum();
        let expected = match dim {
            DemographicDimension::AdmissionType => w.admissions.len(),
            _ => w.patients.len(),
        };
        assert_eq!(total as usize, expected, "{}", dim.as_str());
    }
    let r = t.demographics("gender");
    assert!(!r.is_error);
    let bad = t.demographics("favourite_colour");
    assert!(bad.is_error && bad.joined().contains("gender"));
}

#[test]
fn icu_stays_match_world() {
    let dir = tempfile::tempdir().unwrap();
    let (w, db) = common::benchmark_db(dir.path());
    let t = tools(&db, 100_000);
    for stay in w.icustays.iter().take(20) {
        let r = t.icu_stays(Some(&json!(stay.subject_id.to_string())), None);
        assert!(!r.is_error, "{}", r.joined());
        let expected = w.icustays.iter().filter(|s| s.subject_id == stay.subject_id).count();
        assert_eq!(r.rows, Some(expected));
        assert!(r.text_blocks[0].contains(&stay.intime));
    }
    let bad = t.icu_stays(Some(&json!("10000032 OR 1=1")), None);
    assert!(bad.is_error);
    let zero = t.icu_stays(None, Some(&json!(0)));
    assert!(zero.is_error);
}

#[test]
fn prefixed_schema_serves_same_tools() {
    let dir = tempfile::tempdir().unwrap();
    let (w, db, _) = common::demo_db(dir.path(), m3_core::fixtures::Layout::Modules);
    let t = tools(&db, 1000);
    assert_eq!(t.schema(), &ClinicalSchema::prefixed());
    let r = t.demographics("admission_type");
    assert!(!r.is_error, "{}", r.joined());
    let r = t.icu_stays(None, Some(&json!(5)));
    assert_eq!(r.rows, Some(5.min(w.icustays.len())));
}
