use netmis_core::harness::{
    export_summary, ingest_csv, ingest_reader, run_montecarlo, write_replications, write_sample, write_summary,
    Estimator, ExperimentConfig, McSummary,
};
use netmis_core::ident::OneTypeMode;
use netmis_core::{simulate, Error, SimConfig};

fn small(reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        n: 600,
        reps,
        seed: 42,
        mode: Some(OneTypeMode::NoFalsePositive),
        estimators: vec![Estimator::Spe, Estimator::Naive1, Estimator::Naive2, Estimator::SingleProxy],
        ..ExperimentConfig::default()
    }
}

fn bytes(f: impl Fn(&mut Vec<u8>)) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf);
    buf
}

fn summary_bytes(s: &McSummary) -> Vec<u8> {
    bytes(|b| write_summary(s, b).unwrap())
}

fn replication_bytes(s: &McSummary) -> Vec<u8> {
    bytes(|b| write_replications(s, b).unwrap())
}

#[test]
fn identical_across_worker_counts() {
    let cfg = small(6);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_montecarlo(&cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(summary_bytes(&one), summary_bytes(&four));
    assert_eq!(replication_bytes(&one), replication_bytes(&four));
}

#[test]
fn doubling_reps_keeps_the_prefix() {
    let a = run_montecarlo(&small(4)).unwrap();
    let b = run_montecarlo(&small(8)).unwrap();
    assert_eq!(a.replications[..], b.replications[..4]);
}

#[test]
fn summary_moments_follow_the_raw_estimates() {
    let s = run_montecarlo(&small(5)).unwrap();
    assert_eq!(s.rows.len(), 4 * 4);
    for row in &s.rows {
        let q = s.config.parsed_queries().unwrap().iter().position(|q| q.label() == row.effect).unwrap();
        let raw = s.raw(row.estimator, q);
        let m = raw.len() as f64;
        assert_eq!(row.reps, raw.len());
        let mean = raw.iter().map(|e| e.value).sum::<f64>() / m;
        assert!((row.bias - (mean - row.truth)).abs() < 1e-12);
        assert!((row.mse - (row.bias.powi(2) + row.sd.powi(2) * (m - 1.0) / m)).abs() < 1e-12);
        let covered = raw.iter().filter(|e| (e.value - row.truth).abs() <= 1.96 * e.std_error).count();
        assert!((row.coverage - covered as f64 / m).abs() < 1e-15);
    }
}

#[test]
fn summary_export_is_byte_stable() {
    let s = run_montecarlo(&small(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export_summary(&s, &a).unwrap();
    export_summary(&s, &b).unwrap();
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let text = String::from_utf8(text).unwrap();
    assert_eq!(text.lines().next().unwrap(), "estimator,effect,truth,bias,sd,mse,cr,reps");
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn empty_queries_give_header_only() {
    let cfg = ExperimentConfig { queries: vec![], reps: 1, ..small(1) };
    let s = run_montecarlo(&cfg).unwrap();
    assert_eq!(String::from_utf8(summary_bytes(&s)).unwrap().lines().count(), 1);
}

#[test]
fn simulated_sample_round_trips_through_csv() {
    let ds = simulate(&SimConfig { n: 300, seed: 5, ..SimConfig::default() }).unwrap();
    let sample = ds.to_sample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_sample(&sample, std::fs::File::create(&path).unwrap()).unwrap();
    let (back, nbrs) = ingest_csv(&path, None).unwrap();
    assert!(nbrs.is_none());
    assert_eq!(back.y, sample.y);
    assert_eq!(back.d, sample.d);
    assert_eq!(back.z, sample.z);
    assert_eq!((back.s1, back.deg1, back.s2, back.deg2), (sample.s1, sample.deg1, sample.s2, sample.deg2));
}

#[test]
fn ingest_reports_the_offending_row() {
    let text = "y,d,z,s1,deg1,s2,deg2\n1,0,0,0,1,0,1\n1,1,0,1,1,1,2\n2,1,1,3,2,0,0\n";
    match ingest_reader(text.as_bytes(), None) {
        Err(Error::Integrity { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected an integrity error, got {other:?}"),
    }
    let missing = "y,d,z,s1,deg1,s2\n1,0,0,0,1,0\n";
    assert!(matches!(ingest_reader(missing.as_bytes(), None), Err(Error::Schema { row: 0, .. })));
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "n = 400\nreps = 2\nseed = 3\nestimators = [\"naive1\"]\n").unwrap();
    let cfg = ExperimentConfig::from_file(&path).unwrap();
    let s = run_montecarlo(&cfg).unwrap();
    assert_eq!(s.replications.len(), 2);
    assert!(s.rows.iter().all(|r| r.estimator == Estimator::Naive1));
}
