//! Sequential vs rayon throughput for the two batch workloads: validating a
//! query corpus and scoring an eval run. Build with
//! `--no-default-features` to see the fallback on its own.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use m3_core::etl::{build_database, EtlOptions};
use m3_core::eval::{parse_cases, run_eval_with, EvalCase, PinnedClock};
use m3_core::fixtures::{self, ClinicalWorld};
use m3_core::par::{map_with, Execution};
use m3_core::sql_guard::validate;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn corpus() -> Vec<String> {
    let reads = [
        fixtures::TOP_THREE_DRUGS_SQL.to_string(),
        "SELECT subject_id, gender FROM patients WHERE anchor_age > 60 -- old".to_string(),
        "WITH x AS (SELECT hadm_id FROM admissions) SELECT COUNT(*) FROM x".to_string(),
    ];
    let writes = ["DELETE FROM patients", "SELECT 1; DROP TABLE admissions", "PRAGMA writable_schema = 1"];
    (0..4000)
        .map(|i| match i % 4 {
            3 => writes[i % writes.len()].to_string(),
            _ => reads[i % reads.len()].clone(),
        })
        .collect()
}

fn bench_validate(c: &mut Criterion) {
    let sqls = corpus();
    let mut g = c.benchmark_group("validate");
    g.throughput(Throughput::Elements(sqls.len() as u64));
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &sqls, |b, sqls| {
            b.iter(|| map_with(mode, sqls, |s| validate(s).allowed))
        });
    }
    g.finish();
}

fn bench_eval(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("csv");
    fixtures::write_benchmark_csvs(&ClinicalWorld::generate(fixtures::DEFAULT_SEED), &csv).unwrap();
    let db = dir.path().join("bench.db");
    build_database(&csv, &db, &EtlOptions::default()).unwrap();
    let base = parse_cases(&fixtures::benchmark_cases_ndjson()).unwrap();
    let cases: Vec<EvalCase> =
        (0..8).flat_map(|r| base.iter().map(move |c| EvalCase { id: format!("{}-{r}", c.id), ..c.clone() })).collect();
    let clock = PinnedClock::default();
    let mut g = c.benchmark_group("eval");
    g.sample_size(20);
    g.throughput(Throughput::Elements(cases.len() as u64));
    for (name, mode) in MODES {
        g.bench_function(name, |b| b.iter(|| run_eval_with(mode, &cases, &db, &clock).unwrap().accuracy));
    }
    g.finish();
}

criterion_group!(benches, bench_validate, bench_eval);
criterion_main!(benches);
