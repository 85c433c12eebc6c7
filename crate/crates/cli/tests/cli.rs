use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn primkit(args: &[&str], cwd: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_primkit"));
    cmd.args(args).current_dir(cwd).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("PRIMKIT_THREADS", t),
        None => cmd.env_remove("PRIMKIT_THREADS"),
    };
    cmd.output().expect("spawn primkit")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path) {
    ok(&primkit(
        &[
            "synth",
            "--out",
            "data",
            "--seed",
            "5",
            "--n_patients",
            "8",
            "--n_test_patients",
            "2",
            "--recordings_per_patient",
            "2",
            "--recording_s",
            "8",
        ],
        dir,
        None,
    ));
}

const CONFIG: &str = r#"{
  "manifest": "data/train_manifest.json",
  "test_manifest": "data/test_manifest.json",
  "models": [{"kind": "forest", "config": {"n_trees": 10}}],
  "n_splits": 2,
  "pipeline": {"window": {"stride_samples": 25}},
  "train_stride": 25
}"#;

fn setup() -> TempDir {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path());
    fs::write(tmp.path().join("exp.json"), CONFIG).unwrap();
    tmp
}

/// Every file under `dir`, relative path and bytes, sorted.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn cv_evaluate_report_pipeline() {
    let tmp = setup();
    let d = tmp.path();
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "run", "--seed", "2"], d, None));
    let table = fs::read_to_string(d.join("run/val_table.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header, "model,fold0,fold1,Average");
    for row in table.lines().skip(1) {
        let cells: Vec<f64> = row.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        let (folds, avg) = cells.split_at(cells.len() - 1);
        let mean = folds.iter().sum::<f64>() / folds.len() as f64;
        assert!((avg[0] - mean).abs() < 1e-9, "{row}");
    }
    for f in ["metrics.json", "confusion.csv", "letter_values.csv", "composition.csv", "per_patient.csv"] {
        assert!(d.join("run/forest-10/test").join(f).is_file(), "{f}");
    }
    assert!(d.join("run/forest-10/fold1/manifest.json").is_file());

    ok(&primkit(
        &["evaluate", "--checkpoint", "run/forest-10", "--manifest", "data/test_manifest.json", "--out", "ev"],
        d,
        None,
    ));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_members"], 2);
    let ba = metrics["ensemble"]["balanced_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ba));
    // same checkpoints and stride as the cv test scoring
    assert_eq!(
        fs::read(d.join("ev/confusion.csv")).unwrap(),
        fs::read(d.join("run/forest-10/test/confusion.csv")).unwrap()
    );
    let confusion = fs::read_to_string(d.join("ev/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 26);

    let out = primkit(&["report", "run", "ev"], d, None);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Average") && text.contains("balanced accuracy"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = setup();
    let d = tmp.path();
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "a", "--seed", "9"], d, Some("1")));
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "b", "--seed", "9"], d, Some("3")));
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "a", "--seed", "9"], d, Some("1")));
    let (a, b) = (snapshot(&d.join("a")), snapshot(&d.join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_changes_the_split() {
    let tmp = setup();
    let d = tmp.path();
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "a", "--seed", "1"], d, None));
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "b", "--seed", "4"], d, None));
    assert_ne!(snapshot(&d.join("a")), snapshot(&d.join("b")));
}

#[test]
fn train_single_fold_and_neural_override() {
    let tmp = setup();
    let d = tmp.path();
    let cfg = r#"{
      "manifest": "data/train_manifest.json",
      "models": [{"kind": "neural", "spec": {"family": "fcnn", "fcnn": {"depth": 1, "width": 16}}}],
      "n_splits": 2,
      "pipeline": {"window": {"stride_samples": 50}},
      "train_stride": 50
    }"#;
    fs::write(d.join("nn.json"), cfg).unwrap();
    let out = primkit(
        &["train", "--config", "nn.json", "--out", "tr", "--fold", "1", "--train.max_epochs", "2", "--models.0.spec.fcnn.width", "8"],
        d,
        None,
    );
    ok(&out);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("tr/fcnn-d1-w8/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["fcnn"]["width"], 8);
    assert_eq!(manifest["meta"]["fold"], 1);
    let history: serde_json::Value = serde_json::from_slice(&fs::read(d.join("tr/fcnn-d1-w8/history.json")).unwrap()).unwrap();
    assert_eq!(history["history"].as_array().unwrap().len(), 2);
}

#[test]
fn predict_covers_every_valid_center() {
    let tmp = setup();
    let d = tmp.path();
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "run"], d, None));
    // 500 unlabeled samples in the compact layout, taken from a synthetic recording
    let src = fs::read_dir(d.join("data/recordings")).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(src).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep = header.len() - 1;
    assert_eq!(header[keep], "label");
    let body: Vec<String> = lines.cycle().take(500).map(|l| l.split(',').take(keep).collect::<Vec<_>>().join(",")).collect();
    fs::write(d.join("stream.csv"), format!("{}\n{}\n", header[..keep].join(","), body.join("\n"))).unwrap();

    ok(&primkit(
        &["predict", "--checkpoint", "run/forest-10", "--recording", "stream.csv", "--side", "right", "--out", "p/pred.csv"],
        d,
        None,
    ));
    let pred = fs::read_to_string(d.join("p/pred.csv")).unwrap();
    let rows: Vec<&str> = pred.lines().skip(1).collect();
    assert_eq!(rows.len(), 301);
    assert!(rows[0].starts_with("100,"));
    assert!(rows[300].starts_with("400,"));
    for r in rows {
        let cells: Vec<&str> = r.split(',').collect();
        let s: f64 = cells[2..7].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert_eq!(cells[8], "");
    }
}

#[test]
fn failures_exit_nonzero() {
    let tmp = setup();
    let d = tmp.path();
    let bad_key = primkit(&["cv", "--config", "exp.json", "--out", "x", "--train.no_such_key", "1"], d, None);
    assert!(!bad_key.status.success());
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("no_such_key"));

    fs::write(d.join("missing.json"), CONFIG.replace("data/train_manifest.json", "nowhere.json")).unwrap();
    assert!(!primkit(&["cv", "--config", "missing.json", "--out", "x"], d, None).status.success());

    assert!(!primkit(&["evaluate", "--checkpoint", "data", "--manifest", "data/test_manifest.json", "--out", "x"], d, None)
        .status
        .success());
    assert!(!primkit(&["cv", "--config", "exp.json", "--out", "x"], d, Some("many")).status.success());
    assert!(!primkit(&["report", "data"], d, None).status.success());
}

#[test]
fn schema_mismatch_is_rejected() {
    let tmp = setup();
    let d = tmp.path();
    ok(&primkit(&["cv", "--config", "exp.json", "--out", "run"], d, None));
    // a cohort with a different channel layout
    fs::write(
        d.join("other.json"),
        r#"{"schema": {"channels": [
            {"name": "acc_a_x", "kind": "linear_acceleration", "unit": "m/s^2"},
            {"name": "time_elapsed", "kind": "time_elapsed", "unit": "s"},
            {"name": "paretic_side", "kind": "paretic_flag", "unit": "1"}]},
          "n_patients": 4, "n_test_patients": 1, "recordings_per_patient": 1, "recording_s": 5}"#,
    )
    .unwrap();
    ok(&primkit(&["synth", "--config", "other.json", "--out", "other"], d, None));
    let out = primkit(
        &["evaluate", "--checkpoint", "run/forest-10", "--manifest", "other/test_manifest.json", "--out", "x"],
        d,
        None,
    );
    assert!(!out.status.success());
}
