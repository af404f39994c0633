mod common;

use std::path::PathBuf;

use sslv::experiment::{compare_runs, method_by_name, read_aggregate, run_experiment, AGGREGATE_FILE};
use sslv::metrics::median;

use common::tiny_config;

#[test]
fn dist_rows_carry_both_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_experiment(&tiny_config("dist"), Some(tmp.path())).unwrap();
    assert!(summary.failures.is_empty());
    let rows = read_aggregate(&tmp.path().join(AGGREGATE_FILE)).unwrap();
    for seed in [0, 1] {
        let stages: Vec<_> = rows.iter().filter(|r| r.seed == seed).map(|r| r.stage).collect();
        assert_eq!(stages, vec![Some(1), Some(2)]);
    }
}

#[test]
fn unknown_methods_are_named() {
    let err = method_by_name("fixmatch").err().unwrap().to_string();
    assert!(err.contains("fixmatch") && err.contains("semivt"));
}

#[test]
fn comparison_medians_match_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs: Vec<PathBuf> = Vec::new();
    for method in ["supervised", "semivt"] {
        let dir = tmp.path().join(method);
        let mut cfg = tiny_config(method);
        cfg.seeds = vec![0, 1, 2];
        run_experiment(&cfg, Some(&dir)).unwrap();
        dirs.push(dir);
    }
    let rows = compare_runs(&dirs, Some("supervised")).unwrap();
    let metric = |dir: &PathBuf| -> Vec<f64> {
        read_aggregate(&dir.join(AGGREGATE_FILE)).unwrap().iter().filter_map(|r| r.accuracy).collect()
    };
    let (base, semi) = (metric(&dirs[0]), metric(&dirs[1]));
    let mut sorted = semi.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(rows[1].median, sorted[1]);
    assert_eq!(rows[0].median_delta, Some(0.0));
    let deltas: Vec<f64> = semi.iter().zip(&base).map(|(a, b)| a - b).collect();
    assert_eq!(rows[1].median_delta, Some(median(&deltas).unwrap()));
}
