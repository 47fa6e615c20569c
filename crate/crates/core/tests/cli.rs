use std::fs;
use std::path::Path;
use std::process::Command;

use fmae::cli::run;
use fmae::model::{FmAe, Init, ModelConfig};
use fmae::train::{save_checkpoint, Checkpoint, Stage};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("fmae").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn zero_checkpoint(path: &Path, stage: Stage) {
    let model = FmAe::new(ModelConfig::default(), Init::Zeros).unwrap();
    save_checkpoint(path, &Checkpoint::new(stage, model)).unwrap();
}

#[test]
fn gradcheck_seed_one_passes() {
    let (code, out, _) = call(&["gradcheck", "--seed", "1"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("{\"command\":\"gradcheck\",\"seed\":1}"));
    let rows: Vec<&str> = out.lines().filter(|l| l.ends_with(" ok")).collect();
    assert_eq!(rows.len(), 14);
    assert!(out.lines().any(|l| l.starts_with("full_model")));
}

#[test]
fn infer_zero_detector_is_half_and_anomalous() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(call(&["gen-data", "--out", p(&data), "--n", "2", "--seed", "3"]).0, 0);
    let ckpt = dir.path().join("zero.ckpt");
    zero_checkpoint(&ckpt, Stage::Detector);
    let (code, out, err) = call(&[
        "infer",
        "--ckpt",
        p(&ckpt),
        "--seq",
        p(&data.join("seq/s00000.csv")),
        "--img",
        p(&data.join("img/s00000.pgm")),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("probability 0.5000\n"), "{out}");
    assert!(out.contains("label 1\n"), "{out}");
}

#[test]
fn infer_rejects_pretrained_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    call(&["gen-data", "--out", p(&data), "--n", "1", "--seed", "3"]);
    let ckpt = dir.path().join("pre.ckpt");
    zero_checkpoint(&ckpt, Stage::Pretrained);
    let (code, _, err) = call(&[
        "infer",
        "--ckpt",
        p(&ckpt),
        "--seq",
        p(&data.join("seq/s00000.csv")),
        "--img",
        p(&data.join("img/s00000.pgm")),
    ]);
    assert_eq!(code, 3);
    assert!(err.contains("pre.ckpt"), "{err}");
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let (code, _, err) = call(&["eval", "--data", "x", "--ckpt", "y", "--threshold", "0.3"]);
    assert_eq!(code, 1);
    assert!(err.contains("--threshold"), "{err}");
    assert_eq!(call(&["train"]).0, 1);
    assert_eq!(call(&["eval", "--data", "x", "--ckpt", "y", "--ablate", "both"]).0, 1);
    assert_eq!(call(&["gen-data", "--out", "x", "--n", "ten", "--seed", "1"]).0, 1);
    // parameter validation also counts as usage
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&["gen-data", "--out", p(dir.path()), "--n", "0", "--seed", "1"]);
    assert_eq!(code, 1, "{err}");
    assert_eq!(call(&["--help"]).0, 0);
}

#[test]
fn file_errors_exit_two_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let (code, _, err) = call(&["eval", "--data", p(dir.path()), "--ckpt", p(&missing)]);
    assert_eq!(code, 2);
    assert!(err.contains("nope.ckpt"), "{err}");

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint at all").unwrap();
    let (code, _, err) = call(&["eval", "--data", p(dir.path()), "--ckpt", p(&junk)]);
    assert_eq!(code, 2);
    assert!(err.contains("junk.ckpt") && err.contains("magic"), "{err}");
}

#[test]
fn pipeline_is_reproducible_and_json_has_metric_names() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run_id in 0..2 {
        let root = dir.path().join(format!("run{run_id}"));
        let data = root.join("data");
        let pre = root.join("pre.ckpt");
        let det = root.join("det.ckpt");
        let json = root.join("eval.json");
        let (c, _, e) = call(&["gen-data", "--out", p(&data), "--n", "12", "--seed", "5"]);
        assert_eq!(c, 0, "{e}");
        let (c, _, e) = call(&["pretrain", "--data", p(&data), "--out", p(&pre), "--epochs", "1", "--batch", "4", "--seed", "2"]);
        assert_eq!(c, 0, "{e}");
        let (c, _, e) = call(&["train-detector", "--data", p(&data), "--ckpt", p(&pre), "--out", p(&det), "--epochs", "2", "--seed", "2"]);
        assert_eq!(c, 0, "{e}");
        // detector training refuses its own output as input
        let (c, _, _) = call(&["train-detector", "--data", p(&data), "--ckpt", p(&det), "--out", p(&root.join("x.ckpt"))]);
        assert_eq!(c, 3);
        let (c, _, _) = call(&["eval", "--data", p(&data), "--ckpt", p(&pre)]);
        assert_eq!(c, 3);
        let (c, out, e) = call(&["eval", "--data", p(&data), "--ckpt", p(&det), "--ablate", "voltage-only", "--json", p(&json)]);
        assert_eq!(c, 0, "{e}");
        assert!(out.contains("accuracy"));

        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        for key in ["accuracy", "precision", "recall", "f1", "auc"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["ablation"], "voltage_only");

        let mut files = Vec::new();
        for f in [
            data.join("manifest.jsonl"),
            data.join("seq/s00007.csv"),
            data.join("img/s00007.pgm"),
            pre.clone(),
            root.join("pre.ckpt.loss.csv"),
            det,
            json,
        ] {
            files.push(fs::read(&f).unwrap_or_else(|_| panic!("{} missing", f.display())));
        }
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_fmae");
    let out = Command::new(exe).args(["gradcheck", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("full_model"));
    let out = Command::new(exe).args(["infer", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(exe)
        .args(["infer", "--ckpt", "/nonexistent/a.ckpt", "--seq", "a.csv", "--img", "a.pgm"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/a.ckpt"));
}
