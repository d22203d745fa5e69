use std::path::Path;

use rbsc::bench::{
    read_records, run_experiment, write_report, DataSource, ExperimentSpec, RecordSink, RunRecord, Sweep,
    SweepVariable,
};
use rbsc::datasets::SyntheticSpec;
use rbsc::pipeline::Method;
use rbsc::rb_features::KernelParams;

fn spec(dir: &Path, methods: Vec<Method>, kernel: KernelParams) -> ExperimentSpec {
    ExperimentSpec {
        name: "small".into(),
        dataset: DataSource::Synthetic(SyntheticSpec::blobs(3, 600, 2, 6.0, 1)),
        methods,
        sweep: Sweep {
            variable: SweepVariable::R,
            values: vec![32, 64, 128],
        },
        seeds: vec![0, 1],
        k: None,
        r: None,
        kernel,
        svd: None,
        kmeans: None,
        output_dir: dir.to_path_buf(),
        warmup: false,
        parallel: false,
    }
}

fn strip_timings(r: &RunRecord) -> RunRecord {
    RunRecord {
        t_features: None,
        t_degrees: None,
        t_svd: None,
        t_kmeans: None,
        t_total: None,
        ..r.clone()
    }
}

#[test]
fn every_cell_is_recorded_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), vec![Method::ScRb, Method::KmeansRaw], KernelParams::laplacian(1.0));
    let records = run_experiment(&s).unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(RunRecord::is_ok));
    assert!(records.iter().all(|r| r.acc.unwrap() > 0.9));

    // records.csv holds exactly what was returned
    let on_disk = read_records(dir.path().join("records.csv")).unwrap();
    assert_eq!(on_disk.len(), 12);
    for (a, b) in on_disk.iter().zip(&records) {
        assert_eq!(strip_timings(a), strip_timings(b));
    }

    // a second run with the same spec gives identical metrics and appends
    let again = run_experiment(&s).unwrap();
    for (a, b) in again.iter().zip(&records) {
        assert_eq!(strip_timings(a), strip_timings(b));
    }
    assert_eq!(read_records(dir.path().join("records.csv")).unwrap().len(), 24);
}

#[test]
fn failures_become_error_records() {
    let dir = tempfile::tempdir().unwrap();
    // binning features are only defined for the Laplacian kernel
    let s = spec(dir.path(), vec![Method::ScRb, Method::ExactSc], KernelParams::gaussian(1.0));
    let records = run_experiment(&s).unwrap();
    assert_eq!(records.len(), 12);
    for r in &records {
        match r.method {
            Method::ScRb => assert!(r.error.is_some() && r.acc.is_none()),
            _ => assert!(r.is_ok()),
        }
    }
    let back = read_records(dir.path().join("records.csv")).unwrap();
    assert_eq!(back.iter().filter(|r| r.error.is_some()).count(), 6);
}

#[test]
fn methods_share_seeds_within_a_cell() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), vec![Method::ScRb, Method::ScRf], KernelParams::laplacian(1.0));
    let records = run_experiment(&s).unwrap();
    for value in [32, 64, 128] {
        for seed in [0, 1] {
            let cell: Vec<_> = records.iter().filter(|r| r.value == value && r.seed == seed).collect();
            assert_eq!(cell.len(), 2);
            assert!(cell.iter().all(|r| r.r == Some(value) && r.n == 600));
        }
    }
}

#[test]
fn sink_appends_without_repeating_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), vec![Method::KmeansRaw], KernelParams::laplacian(1.0));
    let records = run_experiment(&s).unwrap();
    let path = dir.path().join("extra.csv");
    for chunk in records.chunks(2) {
        let mut sink = RecordSink::open(&path).unwrap();
        for r in chunk {
            sink.append(r).unwrap();
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("experiment,")).count(), 1);
    assert_eq!(read_records(&path).unwrap().len(), records.len());
}

#[test]
fn report_writes_curves_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), vec![Method::ScRb], KernelParams::laplacian(1.0));
    s.sweep.values = vec![16, 32, 64, 128];
    s.seeds = vec![0, 1, 2];
    let records = run_experiment(&s).unwrap();
    let (curves, scaling) = write_report(&records, dir.path()).unwrap();

    let mut reader = csv::Reader::from_path(&curves).unwrap();
    assert_eq!(reader.records().count(), 4);
    let text = std::fs::read_to_string(&scaling).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
}

#[test]
fn spec_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), vec![Method::ScRb, Method::ExactSc], KernelParams::laplacian(0.5));
    s.sweep = Sweep {
        variable: SweepVariable::N,
        values: vec![1000, 2000],
    };
    s.r = Some(64);
    let path = dir.path().join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    let back = ExperimentSpec::from_json_file(&path).unwrap();
    assert_eq!(back, s);
    back.validate().unwrap();

    s.sweep.values.push(50_000);
    assert!(s.validate().is_err());
    s.r = None;
    s.methods = vec![Method::ScRb];
    assert!(s.validate().is_err());
}
