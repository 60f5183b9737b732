//! Stage orchestration: ordering, up-front dataset checks, resume and
//! determinism.

use std::path::Path;

use molsyn_core::training::{checkpoint_path, micro, run_pipeline, run_stages, PipelineConfig, StageKind};
use molsyn_core::CoreError;

fn quick_config(dir: &Path) -> PipelineConfig {
    let paths = micro::write_fixture(&dir.join("data"), 6, 21).unwrap();
    let mut cfg = micro::toy_config(paths, 21);
    cfg.model.d_model = 16;
    cfg.model.d_ff = 32;
    cfg.model.n_heads = 2;
    cfg.model.lora_rank = 2;
    cfg.pretrain.steps = 8;
    cfg.stage1.steps = 8;
    cfg.stage2.steps = 8;
    cfg.stage3.steps = 2;
    cfg.stage3.batch_size = 4;
    cfg.rl.max_new = 8;
    cfg.eval_samples = 6;
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn reversed_stage_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("run");
    let err = run_stages(&cfg, &out, StageKind::Reinforce, StageKind::InstructionSft, None).unwrap_err();
    assert!(matches!(err, CoreError::Config(_)), "{err}");
    assert!(!out.exists());
}

#[test]
fn later_stage_needs_previous_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("run");
    let err = run_pipeline(&cfg, &out, StageKind::CotSft).unwrap_err();
    assert!(matches!(err, CoreError::Config(ref m) if m.contains("stage1.ckpt")), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_dataset_aborts_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    std::fs::remove_file(&cfg.data.rl).unwrap();
    let out = dir.path().join("run");
    let err = run_pipeline(&cfg, &out, StageKind::InstructionSft).unwrap_err();
    assert!(err.to_string().contains("rl.jsonl"), "{err}");
    assert!(!checkpoint_path(&out, StageKind::InstructionSft).exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    let out = run_pipeline(&cfg, &full, StageKind::InstructionSft).unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    assert_eq!(out.metrics.iter().map(|m| m.stage).collect::<Vec<_>>(), [1, 2, 3]);

    run_stages(&cfg, &split, StageKind::InstructionSft, StageKind::CotSft, None).unwrap();
    assert!(!checkpoint_path(&split, StageKind::Reinforce).exists());
    run_pipeline(&cfg, &split, StageKind::Reinforce).unwrap();
    for s in [StageKind::InstructionSft, StageKind::CotSft, StageKind::Reinforce] {
        assert_eq!(bytes(&checkpoint_path(&full, s)), bytes(&checkpoint_path(&split, s)), "stage {}", s.number());
    }

    // Resuming from an explicit checkpoint elsewhere gives the same result.
    let moved = dir.path().join("stage2_copy.ckpt");
    std::fs::copy(checkpoint_path(&full, StageKind::CotSft), &moved).unwrap();
    let other = dir.path().join("other");
    run_stages(&cfg, &other, StageKind::Reinforce, StageKind::Reinforce, Some(&moved)).unwrap();
    assert_eq!(
        bytes(&checkpoint_path(&full, StageKind::Reinforce)),
        bytes(&checkpoint_path(&other, StageKind::Reinforce))
    );
}

#[test]
fn seeds_control_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_stages(&cfg, &a, StageKind::InstructionSft, StageKind::InstructionSft, None).unwrap();
    run_stages(&cfg, &b, StageKind::InstructionSft, StageKind::InstructionSft, None).unwrap();
    let ck = |d: &Path| bytes(&checkpoint_path(d, StageKind::InstructionSft));
    assert_eq!(ck(&a), ck(&b));

    let mut other = cfg.clone();
    other.seed += 1;
    let c = dir.path().join("c");
    run_stages(&other, &c, StageKind::InstructionSft, StageKind::InstructionSft, None).unwrap();
    assert_ne!(ck(&a), ck(&c));
}
