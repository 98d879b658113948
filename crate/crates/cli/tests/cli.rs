use std::path::{Path, PathBuf};
use std::process::Command;

use interpcl::compare::compare;
use interpcl::run::ExperimentReport;
use interpcl_core::checkpoint::Checkpoint;
use interpcl_core::nn::{Architecture, BackboneConfig, Network};
use interpcl_core::scenarios::{write_csv, CsvSchema, Dataset};
use interpcl_core::tensor::Tensor;

const BIN: &str = env!("CARGO_BIN_EXE_interpcl");

fn config(dir: &Path, methods: &str) -> PathBuf {
    let text = format!(
        r#"
seeds = [3]

[scenario]
stream = {{ variant = "class_il", initial_classes = 2, increment = 1, n_tasks = 3 }}

[scenario.synthetic]
n_classes = 4
dim = 32
samples_per_class = 20

[training.sgd]
learning_rate = 0.01
batch_size = 8
epochs = 2

{methods}
"#
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env_remove("INTERPCL_OUTPUT_DIR").env_remove("INTERPCL_JOBS").output().unwrap()
}

#[test]
fn minimal_run_writes_one_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"none\"\n");
    let out = dir.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = ExperimentReport::load(&out.join("report.json")).unwrap();
    assert_eq!(report.cells.len(), 1);
    assert!(report.failures.is_empty());
    for f in ["metrics.csv", "accuracy.csv", "accuracy_curve.csv", "barriers.csv", "barrier_profiles.csv", "variance.csv", "lambdas.csv", "meta.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(!std::fs::read_to_string(out.join("report.json")).unwrap().contains("seconds"));
}

#[test]
fn environment_overrides_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"none\"\n");
    let out = dir.path().join("from_env");
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--jobs", "2"])
        .env("INTERPCL_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("report.json").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"none\"\nbogus = 1\n");
    assert_eq!(run(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["run", missing.to_str().unwrap()]).status.code(), Some(2));
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"consolidate\"\nlambda_grid = [2.0]\n");
    assert_eq!(run(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"none\"\n").to_str().unwrap().to_owned();
    // more tasks than the pool has classes for
    let text = std::fs::read_to_string(&cfg).unwrap().replace("n_tasks = 3", "n_tasks = 9");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lambda_grid_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "[[methods]]\nmethod = \"none\"\n[[methods]]\nmethod = \"joint\"\n[[methods]]\nmethod = \"consolidate\"\nlambda_grid = [0.3, 0.6]\n",
    );
    let out = dir.path().join("out");
    assert!(run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let report = ExperimentReport::load(&out.join("report.json")).unwrap();
    let labels: Vec<&str> = report.cells.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels, vec!["none", "joint", "consolidate@0.3", "consolidate@0.6"]);
    assert_eq!(report.cells[2].variance.len(), 2);
    assert_eq!(report.cells[0].barriers.len(), 2);

    let rows = compare(&[report.clone(), report.clone()]).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.delta_vs_first_report == 0.0));
    let none = rows.iter().find(|r| r.method == "none").unwrap();
    let joint = rows.iter().find(|r| r.method == "joint").unwrap();
    assert_eq!(none.gap_recovery, Some(0.0));
    assert_eq!(joint.gap_recovery, Some(1.0));

    let rp = out.join("report.json");
    let o = run(&["compare", rp.to_str().unwrap(), rp.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("report,method,seeds,avg_final_acc"));
    assert_eq!(text.lines().count(), 9);
    assert_eq!(run(&["compare", rp.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn compare_rejects_other_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = config(dir.path(), "[[methods]]\nmethod = \"none\"\n");
    assert!(run(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("seeds = [3]", "seeds = [4]");
    std::fs::write(&cfg, text).unwrap();
    assert!(run(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    let ra = ExperimentReport::load(&a.join("report.json")).unwrap();
    let rb = ExperimentReport::load(&b.join("report.json")).unwrap();
    assert!(compare(&[ra, rb]).is_err());
}

fn checkpoints(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let arch = Architecture::compact_cnn(32, 3, &BackboneConfig::default()).unwrap();
    let a = Checkpoint::from_network(&Network::new(arch.clone(), 1).unwrap(), 0);
    let b = Checkpoint::from_network(&Network::new(arch, 2).unwrap(), 1);
    let (pa, pb) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    a.save(&pa).unwrap();
    b.save(&pb).unwrap();
    let n = 9;
    let x = Tensor::new(vec![n, 32], (0..n * 32).map(|i| (i % 7) as f64 - 3.0).collect()).unwrap();
    let d = Dataset::new(x, (0..n).map(|i| i % 3).collect(), vec!["2".into(), "0".into(), "1".into()]).unwrap();
    let data = dir.join("eval.csv");
    write_csv(&d, &data, &CsvSchema::default()).unwrap();
    (pa, pb, data)
}

#[test]
fn barrier_command_prints_profile() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, data) = checkpoints(dir.path());
    let o = run(&["barrier", a.to_str().unwrap(), b.to_str().unwrap(), "--data", data.to_str().unwrap(), "--grid", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "s,loss,chord,deviation");
    assert_eq!(lines.len(), 12);
    assert!(lines[1].ends_with(",0") && lines[11].ends_with(",0"));
}

#[test]
fn interp_command_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, _) = checkpoints(dir.path());
    let out = dir.path().join("m.ckpt");
    let o = run(&["interp", a.to_str().unwrap(), b.to_str().unwrap(), "--lambda", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = Checkpoint::load(&out).unwrap();
    let cb = Checkpoint::load(&b).unwrap();
    assert_eq!(merged.params, cb.params);
    assert_eq!(merged.bn_stats, cb.bn_stats);

    let o = run(&["interp", a.to_str().unwrap(), b.to_str().unwrap(), "--adaptive", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("layer,shift,lambda"));
    assert!(text.contains("head,"));

    // exactly one coefficient source is required
    assert_eq!(run(&["interp", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(
        run(&["interp", a.to_str().unwrap(), b.to_str().unwrap(), "--lambda", "1.5", "--out", out.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
