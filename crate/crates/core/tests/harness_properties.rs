use std::io::Write;

use robust_subspace::adversary::AttackKind;
use robust_subspace::harness::{
    determinism_hash, read_records, resolve_threads, run_sweep, RecordStatus, RunOptions, SweepSpec, THREADS_ENV,
};

fn spec() -> SweepSpec {
    SweepSpec::from_json_str(
        r#"{
            "master_seed": 7,
            "n": [16],
            "r": [1],
            "theta": [1.0],
            "kappa": [2.0],
            "delta": [0.0, 0.05, 0.1],
            "m": [800],
            "adversary": "spike_inflation",
            "estimator": "vanilla_pca",
            "seeds_per_cell": 2
        }"#,
    )
    .unwrap()
}

fn opts(threads: usize, output: Option<std::path::PathBuf>, resume: bool) -> RunOptions {
    RunOptions { threads: Some(threads), resume, output }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let spec = spec();
    let a = run_sweep(&spec, &opts(1, None, false)).unwrap();
    let b = run_sweep(&spec, &opts(4, None, false)).unwrap();
    let c = run_sweep(&spec, &opts(1, None, false)).unwrap();
    assert_eq!(a.records.len(), 6);
    assert_eq!(a.hash, b.hash);
    assert_eq!(a.hash, c.hash);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.sin_theta_sq.to_bits(), y.sin_theta_sq.to_bits());
        assert_eq!(x.seed, y.seed);
    }
    assert!(a.records.iter().all(|r| r.status == RecordStatus::Ok));
}

#[test]
fn seeds_per_cell_controls_row_count() {
    let mut spec = spec();
    spec.delta = vec![0.05];
    let two = run_sweep(&spec, &opts(1, None, false)).unwrap();
    assert_eq!(two.records.len(), 2);
    assert_ne!(two.records[0].seed, two.records[1].seed);
    assert_ne!(two.records[0].sin_theta_sq, two.records[1].sin_theta_sq);
    spec.seeds_per_cell = 3;
    let three = run_sweep(&spec, &opts(1, None, false)).unwrap();
    assert_eq!(three.records.len(), 3);
    assert_eq!(three.records[1].seed, two.records[1].seed);
}

#[test]
fn resume_completes_an_interrupted_file() {
    let dir = tempfile::tempdir().unwrap();
    let full_path = dir.path().join("full.csv");
    let spec = spec();
    let full = run_sweep(&spec, &opts(1, Some(full_path.clone()), false)).unwrap();
    assert_eq!(read_records(&full_path).unwrap().len(), 6);

    let text = std::fs::read_to_string(&full_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let partial = dir.path().join("partial.csv");
    let mut f = std::fs::File::create(&partial).unwrap();
    for l in &lines[..3] {
        writeln!(f, "{l}").unwrap();
    }
    write!(f, "{}", &lines[3][..lines[3].len() / 2]).unwrap();
    drop(f);

    let resumed = run_sweep(&spec, &opts(3, Some(partial.clone()), true)).unwrap();
    assert_eq!(resumed.newly_run, 4);
    assert_eq!(resumed.hash, full.hash);
    let rows = read_records(&partial).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(determinism_hash(&rows), full.hash);

    let again = run_sweep(&spec, &opts(2, Some(partial.clone()), true)).unwrap();
    assert_eq!(again.newly_run, 0);
    assert_eq!(read_records(&partial).unwrap().len(), 6);
}

#[test]
fn skipped_cells_do_not_count_as_errors() {
    let mut spec = spec();
    spec.adversary = AttackKind::InstanceOptimal;
    spec.estimator = robust_subspace::harness::EstimatorKind::VanillaPca;
    spec.delta = vec![5.0];
    spec.seeds_per_cell = 1;
    let s = run_sweep(&spec, &opts(1, None, false)).unwrap();
    assert_eq!(s.records[0].status, RecordStatus::Skipped);
    assert!(!s.records[0].note.is_empty());
    assert_eq!(s.errors(), 0);
}

#[test]
fn thread_count_falls_back_to_the_environment() {
    std::env::set_var(THREADS_ENV, "3");
    assert_eq!(resolve_threads(None), Some(3));
    assert_eq!(resolve_threads(Some(2)), Some(2));
    std::env::set_var(THREADS_ENV, "junk");
    assert_eq!(resolve_threads(None), None);
    std::env::remove_var(THREADS_ENV);
    assert_eq!(resolve_threads(None), None);
}
