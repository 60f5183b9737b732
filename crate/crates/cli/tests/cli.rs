//! End-to-end runs of the `molsyn` binary: exit codes, error messages and
//! the artifacts each command writes.

use std::path::Path;
use std::process::{Command, Output};

fn molsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molsyn")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&molsyn(&["--help"])), 0);
    assert_eq!(code(&molsyn(&["frobnicate"])), 1);
    assert_eq!(code(&molsyn(&["train", "--stage", "x"])), 1);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let o = molsyn(&["analyze-chains", "--data", &s(&missing), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.jsonl"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = molsyn(&["analyze-chains", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = molsyn(&["analyze-chains", "--set", "bogus=2", "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn train_eval_infer_and_demo() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let train = dir.path().join("train");
    let o = molsyn(&["prepare-data", "--micro", "4", "--out", &s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["instruction.jsonl", "cot.jsonl", "rl.jsonl", "train_config.json", "config.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    // Stage 2 without a stage-1 checkpoint is refused.
    let cfg = s(&data.join("train_config.json"));
    let sets = [
        "--set", "pipeline.pretrain.steps=5",
        "--set", "pipeline.stage1.steps=5",
        "--set", "pipeline.stage2.steps=5",
        "--set", "pipeline.stage3.steps=1",
        "--set", "pipeline.eval_samples=4",
    ];
    let mut args = vec!["train", "--config", &cfg, "--stage", "2"];
    let empty = s(&dir.path().join("empty"));
    args.extend(["--out", &empty]);
    args.extend(sets);
    assert_eq!(code(&molsyn(&args)), 1);

    let mut args = vec!["train", "--config", &cfg];
    let t = s(&train);
    args.extend(["--out", &t]);
    args.extend(sets);
    let o = molsyn(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for n in 1..=3 {
        assert!(train.join(format!("stage{n}.ckpt")).exists());
        assert!(train.join(format!("stage{n}_metrics.json")).exists());
    }
    let ck = s(&train.join("stage3.ckpt"));

    let ev = dir.path().join("eval");
    let o = molsyn(&[
        "eval", "--checkpoint", &ck, "--data", &s(&data.join("instruction.jsonl")),
        "--task", "BBBP", "--set", "max_new=8", "--out", &s(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics.to_string().contains("BBBP"), "{metrics}");
    let preds = std::fs::read_to_string(ev.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 4);

    let inf = dir.path().join("infer");
    let o = molsyn(&["infer", "--checkpoint", &ck, "--task", "ESOL", "--input", "CCO", "--set", "max_new=8", "--out", &s(&inf)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(inf.join("infer.jsonl")).unwrap().lines().count(), 1);

    let demo = dir.path().join("demo");
    let o = molsyn(&[
        "demo-pipeline", "--checkpoint", &ck, "--candidate", "CCCCCCOC1=NSN=C1C2=CCCN(C2)C",
        "--set", "max_new=8", "--out", &s(&demo),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(demo.join("demo_report.json")).unwrap()).unwrap();
    let stages = report[0]["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 7);
    assert_eq!(stages[0]["status"], "provided");

    let o = molsyn(&["eval", "--checkpoint", &s(&dir.path().join("missing.ckpt")), "--data", &s(&data.join("instruction.jsonl"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn annotate_and_denoise_with_mock() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(
        &input,
        concat!(
            r#"{"task":"BBBP","input":"CCN","output":"Yes","id":"a"}"#, "\n",
            r#"{"task":"BBBP","input":"CCC","output":"No","id":"b"}"#, "\n",
            r#"{"task":"BBBP","input":"CCO","output":"No","id":"c"}"#, "\n",
        ),
    )
    .unwrap();
    let mock = dir.path().join("mock.json");
    std::fs::write(
        &mock,
        r#"[
          {"match": "Query: CCN\n", "reply": "<think>It has nitrogen.</think><answer>Yes</answer>"},
          {"match": "Query: CCC\n", "reply": "<think>Guess.</think><answer>Yes</answer>"},
          {"match": "Query: CCC\n", "reply": "<think>I already know the correct answer is No. No nitrogen here.</think><answer>No</answer>"},
          {"match": "Query: CCO\n", "fail": "timeout"}
        ]"#,
    )
    .unwrap();
    let ann = dir.path().join("ann");
    let o = molsyn(&[
        "annotate", "--input", &s(&input), "--mock", &s(&mock),
        "--set", "annotate.retries=0", "--out", &s(&ann),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let kept = std::fs::read_to_string(ann.join("annotated.jsonl")).unwrap();
    let skipped = std::fs::read_to_string(ann.join("skipped.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), 2);
    assert_eq!(skipped.lines().count(), 1);
    assert!(skipped.contains("\"c\""));

    let den = dir.path().join("den");
    let o = molsyn(&["denoise", "--input", &s(&ann.join("annotated.jsonl")), "--out", &s(&den)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cot = std::fs::read_to_string(den.join("cot.jsonl")).unwrap();
    assert!(!cot.to_lowercase().contains("already know"));
    assert!(cot.contains("No nitrogen here."));
    assert!(den.join("review.csv").exists());
}
