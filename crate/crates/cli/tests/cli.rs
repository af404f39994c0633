use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
method = "supervised"
seeds = [0, 1]

[dataset]
num_classes = 2
clips_per_class = 4
frames = 8
height = 16
width = 16

[split]
labeled = 0.25
val = 0.0
test = 0.25

[model]
num_classes = 2
frames_per_view = 4
frame_shape = [16, 16, 3]
embed_dim = 8

[supervised]
epochs = 2
"#;

fn sslv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sslv"))
        .args(args)
        .current_dir(cwd)
        .env("SSLV_DETERMINISTIC", "1")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_reports_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let out = sslv(&["run", "-c", &cfg, "--out", "a"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = tmp.path().join("a");
    for f in ["aggregate.csv", "resolved_config.toml", "seed_0.json", "seed_1.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(a.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.starts_with("method,seed,stage,split,accuracy,macro_f1,dice,pseudo_precision"));

    let resolved = a.join("resolved_config.toml");
    let out = sslv(&["run", "-c", resolved.to_str().unwrap(), "--out", "b"], tmp.path());
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(tmp.path().join("b/aggregate.csv")).unwrap());
    let again = fs::read_to_string(tmp.path().join("b/resolved_config.toml")).unwrap();
    let first = fs::read_to_string(&resolved).unwrap();
    assert_eq!(first.replace("output_dir = \"a\"", "output_dir = \"b\""), again);
}

#[test]
fn seed_override_runs_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    let out = sslv(&["run", "-c", &cfg, "--seed-override", "9", "--out", "r"], tmp.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("r/aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("supervised,9,"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "method = \"mixmatch\"\n");
    let out = sslv(&["run", "-c", &bad], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixmatch"));
    let out = sslv(&["run", "-c", "does_not_exist.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let typo = write_config(tmp.path(), "typo.toml", &TINY.replace("epochs = 2", "epoch = 2"));
    assert_eq!(sslv(&["run", "-c", &typo], tmp.path()).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    // One clip per class goes to the labeled split and leaves nothing to test on.
    let text = TINY.replace("clips_per_class = 4", "clips_per_class = 1");
    let cfg = write_config(tmp.path(), "small.toml", &text);
    let out = sslv(&["run", "-c", &cfg, "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let report = fs::read_to_string(tmp.path().join("r/seed_0.json")).unwrap();
    assert!(report.contains("\"failed\""), "{report}");
}

#[test]
fn compare_self_gives_zero_deltas_and_names_missing_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.toml", TINY);
    assert!(sslv(&["run", "-c", &cfg, "--out", "a"], tmp.path()).status.success());
    let out = sslv(&["compare", "a", "a"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    for line in table.lines().skip(1) {
        assert!(line.ends_with(",0.0"), "{line}");
    }
    let out = sslv(&["compare", "a", "nowhere"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}
