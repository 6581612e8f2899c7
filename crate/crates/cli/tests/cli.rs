//! Black-box tests of the `convqual` binary: exit codes, stdout/stderr
//! contracts, config precedence, rerun determinism, and an end-to-end
//! train/evaluate regression fixture with frozen expected metrics.

use convqual::eval::EvalReport;
use convqual::models::TrainConfig;
use convqual::synth::SynthConfig;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convqual"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary should spawn")
}

fn ok_in(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_documents_flags_and_defaults() {
    let top = bin().arg("--help").output().unwrap();
    assert!(top.status.success());
    let text = stdout(&top);
    for sub in ["synth", "train", "evaluate", "predict", "augment", "ate", "invert", "extend"] {
        assert!(text.contains(sub), "top-level help should list {sub}");
    }

    // The flag docs quote the library defaults; keep them honest.
    let synth = stdout(&bin().args(["synth", "--help"]).output().unwrap());
    let sd = SynthConfig::default();
    for (flag, default) in [
        ("--n", format!("default: {}", sd.n_dialogues)),
        ("--seed", format!("default: {}", sd.seed)),
        ("--arms", format!("default: {}", sd.num_arms)),
        ("--tau", format!("default: {}", sd.effect.tau())),
        ("--noise-std", format!("default: {}", sd.noise_std)),
    ] {
        assert!(synth.contains(flag), "synth help should list {flag}");
        assert!(synth.contains(&default), "synth help should state \"{default}\"");
    }

    let train = stdout(&bin().args(["train", "--help"]).output().unwrap());
    let td = TrainConfig::default();
    for (flag, default) in [
        ("--epochs", format!("default: {}", td.epochs)),
        ("--hidden-dim", format!("default: {}", td.hidden_dim)),
        ("--learning-rate", format!("default: {}", td.learning_rate)),
        ("--batch-size", format!("default: {}", td.batch_size)),
        ("--ipm-weight", format!("default: {}", td.ipm_weight)),
        ("--patience", format!("default: {}", td.patience)),
    ] {
        assert!(train.contains(flag), "train help should list {flag}");
        assert!(train.contains(&default), "train help should state \"{default}\"");
    }
}

#[test]
fn usage_errors_exit_2() {
    let unknown = bin().args(["synth", "--frobnicate"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("--frobnicate"));

    let badsub = bin().arg("transmogrify").output().unwrap();
    assert_eq!(badsub.status.code(), Some(2));

    let badkind = bin()
        .args(["train", "--model", "transformer", "--data", "x", "--out", "y"])
        .output()
        .unwrap();
    assert_eq!(badkind.status.code(), Some(2));

    let badarm = bin()
        .args(["predict", "--model", "x", "--data", "y", "--arm", "banana"])
        .output()
        .unwrap();
    assert_eq!(badarm.status.code(), Some(2));
    assert!(stderr(&badarm).contains("banana"));
}

#[test]
fn missing_files_exit_1_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["evaluate", "--model", "no-such.ckpt", "--data", "also-missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no-such.ckpt"));

    let out = run_in(dir.path(), &["train", "--model", "mlp", "--data", "ghost.jsonl", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ghost.jsonl"));
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "40", "--seed", "5", "--out", "a.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "40", "--seed", "5", "--out", "b.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "40", "--seed", "6", "--out", "c.jsonl"]);

    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b.jsonl")).unwrap();
    let c = fs::read(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(a, b, "same seed must reproduce the dataset bytes");
    assert_ne!(a, c, "a different seed should change the data");
    assert_eq!(
        fs::read(dir.path().join("a.truth.json")).unwrap(),
        fs::read(dir.path().join("b.truth.json")).unwrap(),
        "same seed must reproduce the ground-truth bytes"
    );
}

/// Settings resolve as defaults < `--config` < explicit flags.
#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gen.json"), r#"{ "n_dialogues": 30, "seed": 9 }"#).unwrap();

    ok_in(dir.path(), &["synth", "--config", "gen.json", "--out", "from_config.jsonl"]);
    ok_in(dir.path(), &["synth", "--config", "gen.json", "--seed", "11", "--out", "flag_wins.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "30", "--seed", "11", "--out", "flags_only.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "30", "--seed", "9", "--out", "config_equiv.jsonl"]);

    let read = |name: &str| fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("from_config.jsonl"), read("config_equiv.jsonl"), "config should override defaults");
    assert_eq!(read("flag_wins.jsonl"), read("flags_only.jsonl"), "flags should override the config");
    assert_ne!(read("from_config.jsonl"), read("flag_wins.jsonl"));
}

/// End-to-end regression fixture: a pinned pipeline whose report is frozen.
/// Everything is deterministic, so drift in any module shows up here.
#[test]
fn train_then_evaluate_reproduces_the_frozen_report() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "150", "--seed", "3", "--out", "train.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "100", "--seed", "4", "--out", "test.jsonl"]);
    ok_in(
        dir.path(),
        &[
            "train", "--model", "cf-lstm", "--data", "train.jsonl", "--out", "m.ckpt", "--seed",
            "3", "--epochs", "30", "--hidden-dim", "8",
        ],
    );
    let out = ok_in(dir.path(), &["evaluate", "--model", "m.ckpt", "--data", "test.jsonl"]);
    let report: EvalReport = serde_json::from_str(&stdout(&out)).expect("stdout is report JSON");
    assert!(stderr(&out).contains("pearson_individual"), "human table goes to stderr");

    let expect = [
        (report.pearson_individual, 0.834999079309433),
        (report.pearson_l1d, 0.8117325142742979),
        (report.pearson_l7d, 0.8380511835470338),
        (report.ate, -0.3428399450348118),
        (report.mse_factual_counterfactual, 0.3655176766598581),
        (Some(report.accuracy_binary), 0.84),
        (Some(report.accuracy_5class), 0.41),
    ];
    for (i, (got, want)) in expect.iter().enumerate() {
        let got = got.unwrap_or_else(|| panic!("metric {i} unexpectedly undefined"));
        assert!((got - want).abs() < 1e-6, "metric {i}: {got} != {want}");
    }
    assert_eq!((report.n_dialogues, report.n_days), (100, 46));
}

#[test]
fn evaluate_rejects_out_of_range_treatment_overrides() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "40", "--seed", "5", "--out", "d.jsonl"]);
    ok_in(
        dir.path(),
        &[
            "train", "--model", "cf-lstm", "--data", "d.jsonl", "--out", "m.ckpt", "--epochs",
            "2", "--hidden-dim", "4",
        ],
    );

    // Force one dialogue onto an arm the 2-arm checkpoint does not have.
    let text = fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    rec["treatment"] = 7.into();
    lines[0] = rec.to_string();
    fs::write(dir.path().join("bad.jsonl"), lines.join("\n") + "\n").unwrap();

    let out = run_in(dir.path(), &["evaluate", "--model", "m.ckpt", "--data", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains('7') && msg.contains("2 arms"), "should name both sides: {msg}");
}

#[test]
fn predict_honors_arm_choices_and_guards_baselines() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "40", "--seed", "5", "--out", "d.jsonl"]);
    ok_in(
        dir.path(),
        &[
            "train", "--model", "cf-lstm", "--data", "d.jsonl", "--out", "cf.ckpt", "--epochs",
            "2", "--hidden-dim", "4",
        ],
    );
    ok_in(
        dir.path(),
        &["train", "--model", "mlp", "--data", "d.jsonl", "--out", "mlp.ckpt", "--epochs", "2"],
    );

    let fixed = ok_in(dir.path(), &["predict", "--model", "cf.ckpt", "--data", "d.jsonl", "--arm", "1"]);
    let lines: Vec<serde_json::Value> = stdout(&fixed)
        .lines()
        .map(|l| serde_json::from_str(l).expect("JSON lines"))
        .collect();
    assert_eq!(lines.len(), 40);
    assert!(lines.iter().all(|l| l["arm"] == 1), "every prediction pinned to arm 1");
    assert!(lines.iter().all(|l| l["raw"].is_f64() && l["clamped"].is_f64()));

    let factual = ok_in(dir.path(), &["predict", "--model", "cf.ckpt", "--data", "d.jsonl"]);
    let factual: Vec<serde_json::Value> =
        stdout(&factual).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(factual.iter().any(|l| l["arm"] == 0) && factual.iter().any(|l| l["arm"] == 1));

    let blind = ok_in(dir.path(), &["predict", "--model", "mlp.ckpt", "--data", "d.jsonl"]);
    let blind: Vec<serde_json::Value> =
        stdout(&blind).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(blind.iter().all(|l| l["arm"].is_null()), "baselines have no arm");

    let guarded = run_in(dir.path(), &["predict", "--model", "mlp.ckpt", "--data", "d.jsonl", "--arm", "0"]);
    assert_eq!(guarded.status.code(), Some(1));
    assert!(stderr(&guarded).contains("treatment-blind"));
}

#[test]
fn augment_emits_only_generated_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "60", "--seed", "2", "--out", "d.jsonl"]);
    ok_in(dir.path(), &["augment", "--in", "d.jsonl", "--out", "aug.jsonl"]);

    let text = fs::read_to_string(dir.path().join("aug.jsonl")).unwrap();
    assert!(!text.is_empty(), "the default corpus has low-rated treated dialogues");
    for line in text.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = rec["id"].as_str().unwrap();
        assert!(id.contains("#aug"), "augmented ids are tagged: {id}");
    }

    // Nothing rates below 1, so the pipeline legitimately emits nothing.
    ok_in(dir.path(), &["augment", "--in", "d.jsonl", "--out", "none.jsonl", "--threshold", "1"]);
    assert_eq!(fs::read_to_string(dir.path().join("none.jsonl")).unwrap(), "");
}

#[test]
fn invert_twice_restores_the_original_bytes() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "50", "--seed", "8", "--out", "d.jsonl"]);
    ok_in(dir.path(), &["invert", "--in", "d.jsonl", "--out", "flip.jsonl"]);
    ok_in(dir.path(), &["invert", "--in", "flip.jsonl", "--out", "back.jsonl"]);

    let d = fs::read(dir.path().join("d.jsonl")).unwrap();
    let flip = fs::read(dir.path().join("flip.jsonl")).unwrap();
    let back = fs::read(dir.path().join("back.jsonl")).unwrap();
    assert_ne!(d, flip, "inversion must change assignments");
    assert_eq!(d, back, "inversion is an involution");
}

#[test]
fn ate_agrees_with_the_evaluation_report() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "80", "--seed", "3", "--out", "d.jsonl"]);
    ok_in(
        dir.path(),
        &[
            "train", "--model", "cf-lstm", "--data", "d.jsonl", "--out", "m.ckpt", "--epochs",
            "10", "--hidden-dim", "8",
        ],
    );

    let ate_out = ok_in(dir.path(), &["ate", "--model", "m.ckpt", "--data", "d.jsonl"]);
    let ate_doc: serde_json::Value = serde_json::from_str(&stdout(&ate_out)).unwrap();
    let eval_out = ok_in(dir.path(), &["evaluate", "--model", "m.ckpt", "--data", "d.jsonl"]);
    let report: EvalReport = serde_json::from_str(&stdout(&eval_out)).unwrap();

    let a = ate_doc["ate"].as_f64().unwrap();
    let b = report.ate.expect("binary model has an ATE");
    assert!((a - b).abs() < 1e-12, "ate subcommand {a} vs evaluate {b}");

    // Baselines have no potential-outcome heads to difference.
    ok_in(dir.path(), &["train", "--model", "lstm", "--data", "d.jsonl", "--out", "l.ckpt", "--epochs", "2", "--hidden-dim", "4"]);
    let refused = run_in(dir.path(), &["ate", "--model", "l.ckpt", "--data", "d.jsonl"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("counterfactual"));
}

#[test]
fn extend_adds_arms_to_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok_in(dir.path(), &["synth", "--n", "60", "--seed", "1", "--out", "bin.jsonl"]);
    ok_in(dir.path(), &["synth", "--n", "60", "--seed", "2", "--arms", "3", "--out", "tri.jsonl"]);
    ok_in(
        dir.path(),
        &[
            "train", "--model", "cf-lstm", "--data", "bin.jsonl", "--out", "m2.ckpt", "--epochs",
            "3", "--hidden-dim", "4",
        ],
    );
    ok_in(
        dir.path(),
        &[
            "extend", "--model", "m2.ckpt", "--data", "tri.jsonl", "--arms", "3", "--out",
            "m3.ckpt", "--epochs", "2",
        ],
    );

    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m3.ckpt")).unwrap()).unwrap();
    assert_eq!(ckpt["num_arms"], 3);

    // The extended checkpoint scores multi-arm data out of the box.
    ok_in(dir.path(), &["evaluate", "--model", "m3.ckpt", "--data", "tri.jsonl"]);
    // Shrinking or keeping the arm count is refused.
    let refused = run_in(dir.path(), &["extend", "--model", "m3.ckpt", "--data", "tri.jsonl", "--arms", "3", "--out", "x.ckpt"]);
    assert_eq!(refused.status.code(), Some(1));
}
