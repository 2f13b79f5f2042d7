//! Drives the compiled binary end to end: exit codes, the full subcommand
//! pipeline on a small dataset, and manifest semantics.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_confbias"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains(&format!("completed {}", args[0])),
        "missing completion line in {stdout:?}"
    );
    out
}

fn lines_of(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["frobnicate"],
        vec!["gen-data", "--no-such-flag", "1"],
        vec!["train"],
        vec!["measure-bias", "--mode", "nonsense"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "measure-bias",
            "--checkpoint",
            "/no/such/checkpoint.json",
            "--data",
            "/no/such/dataset.jsonl",
            "--out",
        ])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr {stderr:?}");
}

#[test]
fn pipeline_produces_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();

    run_ok(&[
        "gen-data", "--atoms", "5", "--molecules", "4", "--conformers", "8", "--seed", "17",
        "--out", &p("data"),
    ]);
    let dataset = p("data/dataset.jsonl");
    assert_eq!(lines_of(Path::new(&dataset)).len(), 4, "one JSON line per molecule");

    // A lambda grid trains one model per value and names the outputs by the
    // literal grid tokens.
    run_ok(&[
        "train", "--data", &dataset, "--steps", "60", "--batch-size", "8", "--hidden", "8",
        "--lambda-grid", "0,0.1", "--log-every", "30", "--seed", "2", "--out", &p("train"),
    ]);
    for name in [
        "checkpoint_lambda_0.json",
        "checkpoint_lambda_0.1.json",
        "train_log_lambda_0.csv",
        "train_log_lambda_0.1.csv",
        "manifest.json",
    ] {
        assert!(
            tmp.path().join("train").join(name).exists(),
            "missing train output {name}"
        );
    }
    let log = lines_of(&tmp.path().join("train/train_log_lambda_0.csv"));
    assert_eq!(log[1], "step,loss,seconds");
    assert_eq!(log.len(), 2 + 2, "digest comment, header, steps 30 and 60");

    let checkpoint = p("train/checkpoint_lambda_0.1.json");
    run_ok(&[
        "sample", "--checkpoint", &checkpoint, "--data", &dataset, "--multiplier", "2",
        "--t-steps", "10", "--seed", "3", "--out", &p("samples"),
    ]);
    let samples = p("samples/samples.jsonl");
    assert_eq!(lines_of(Path::new(&samples)).len(), 4);

    run_ok(&[
        "measure-bias", "--checkpoint", &checkpoint, "--data", &dataset,
        "--samples-per-level", "25", "--seed", "4", "--out", &p("bias"),
    ]);
    let bias = lines_of(&tmp.path().join("bias/bias.csv"));
    assert!(bias[0].starts_with("# manifest: "));
    assert_eq!(bias[1], "t,sigma,mean_abs_bias,n");
    assert_eq!(bias.len(), 2 + 6, "one row per schedule level");
    for (i, row) in bias[2..].iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        assert_eq!(fields[3], "25", "stratified probes per level");
    }
    assert!(tmp.path().join("bias/histogram.csv").exists());

    run_ok(&[
        "evaluate", "--reference", &dataset, "--generated", &samples, "--delta", "0.8",
        "--out", &p("eval"),
    ]);
    let eval = lines_of(&tmp.path().join("eval/eval.csv"));
    assert_eq!(eval[1], "molecule,cov,mat");
    assert_eq!(eval.len(), 2 + 4 + 2, "per-molecule rows plus mean and median");

    run_ok(&[
        "props", "--reference", &dataset, "--generated", &samples, "--property", "rg",
        "--stats", "mean,max", "--out", &p("props"),
    ]);
    let props = lines_of(&tmp.path().join("props/props.csv"));
    assert_eq!(props[1], "molecule,property,stat,generated,reference,abs_error");
    assert_eq!(props.len(), 2 + 4 * 2 + 2, "two stats per molecule plus summary rows");

    run_ok(&[
        "plot", &p("bias/bias.csv"), "--title", "held-out bias", "--out", &p("plot"),
    ]);
    let svg = std::fs::read_to_string(tmp.path().join("plot/bias_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg"), "not an SVG document");
    assert!(svg.contains("held-out bias"), "title missing from plot");
}

#[test]
fn train_manifests_differ_only_in_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    run_ok(&[
        "gen-data", "--atoms", "4", "--molecules", "2", "--conformers", "5", "--seed", "8",
        "--out", &p("data"),
    ]);
    let dataset = p("data/dataset.jsonl");
    for (lambda, dir) in [("0", "a"), ("0.1", "b")] {
        run_ok(&[
            "train", "--data", &dataset, "--steps", "20", "--batch-size", "4", "--hidden",
            "6", "--lambda", lambda, "--seed", "9", "--out", &p(dir),
        ]);
    }
    let manifest = |dir: &str| -> serde_json::Value {
        let text = std::fs::read_to_string(tmp.path().join(dir).join("manifest.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    };
    let a = manifest("a");
    let b = manifest("b");
    assert_eq!(a["inputs"], b["inputs"], "same dataset digest");
    assert_ne!(a["digest"], b["digest"]);
    let (ca, cb) = (
        a["config"].as_object().unwrap(),
        b["config"].as_object().unwrap(),
    );
    assert_eq!(ca.len(), cb.len());
    for (key, va) in ca {
        if key == "lambda" {
            assert_ne!(va, &cb[key]);
        } else {
            assert_eq!(va, &cb[key], "config key {key} should match");
        }
    }
}
