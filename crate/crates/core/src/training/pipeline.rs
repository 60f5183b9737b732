//! Three-stage training: instruction SFT on prediction adapters, CoT SFT on
//! inference adapters, then REINFORCE on inference adapters. Every stage
//! starts from the previous stage's checkpoint, so resuming from a saved
//! checkpoint reproduces an uninterrupted run.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use molsyn_autodiff::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, CotRecord, TaskRecord};
use crate::error::{CoreError, Result};
use crate::model::{generate, Checkpoint, DecodeMode, ModelConfig, Transformer};
use crate::specialist::format::{inference_prompt, is_well_formed, parse_cot, prediction_prompt};
use crate::specialist::{GroupId, OutputFormat, Phase, RouterMode, SpecialistLayer};
use crate::tokenizer::Vocabulary;
use crate::training::reinforce::{reinforce_step, DraftCache, RlConfig};
use crate::training::sft::{batch_loss, cot_example, cot_sft_step, instruction_example, pretrain_step, sft_step, Example, Optimizers, StepConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    InstructionSft,
    CotSft,
    Reinforce,
}

impl StageKind {
    pub fn number(self) -> u8 {
        match self {
            StageKind::InstructionSft => 1,
            StageKind::CotSft => 2,
            StageKind::Reinforce => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(StageKind::InstructionSft),
            2 => Ok(StageKind::CotSft),
            3 => Ok(StageKind::Reinforce),
            _ => Err(CoreError::Config(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    #[default]
    Adapters,
    AdaptersAndRouter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub trainable: TrainableSet,
}

impl StageConfig {
    /// Defaults: lr 1e-4; batch 8 for instruction SFT, 2 for CoT and RL.
    pub fn default_for(stage: StageKind) -> Self {
        Self {
            lr: 1e-4,
            batch_size: if stage == StageKind::InstructionSft { 8 } else { 2 },
            steps: 100,
            trainable: TrainableSet::Adapters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub instruction: PathBuf,
    pub cot: PathBuf,
    pub rl: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// `vocab_size` is the padded vocabulary width.
    pub model: ModelConfig,
    /// Language-model pretraining of the fresh base on plain record text,
    /// run before stage 1. Zero steps leaves the base at its random init.
    #[serde(default = "no_pretraining")]
    pub pretrain: StageConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub rl: RlConfig,
    pub clip: f64,
    /// Prompts used for each stage's metric snapshot.
    pub eval_samples: usize,
    pub data: DataPaths,
}

fn no_pretraining() -> StageConfig {
    StageConfig {
        steps: 0,
        ..StageConfig::default_for(StageKind::InstructionSft)
    }
}

impl PipelineConfig {
    pub fn new(data: DataPaths) -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            pretrain: no_pretraining(),
            stage1: StageConfig::default_for(StageKind::InstructionSft),
            stage2: StageConfig::default_for(StageKind::CotSft),
            stage3: StageConfig::default_for(StageKind::Reinforce),
            rl: RlConfig::default(),
            clip: 1.0,
            eval_samples: 200,
            data,
        }
    }

    pub fn stage(&self, s: StageKind) -> &StageConfig {
        match s {
            StageKind::InstructionSft => &self.stage1,
            StageKind::CotSft => &self.stage2,
            StageKind::Reinforce => &self.stage3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for s in [&self.pretrain, &self.stage1, &self.stage2, &self.stage3] {
            s.validate()?;
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(CoreError::Config("clip must be positive".into()));
        }
        if self.rl.max_new == 0 || !(self.rl.tau.is_finite() && self.rl.tau >= 0.0) {
            return Err(CoreError::Config("invalid rl sampling settings".into()));
        }
        if (self.rl.alpha + self.rl.beta - 1.0).abs() > 1e-12 || self.rl.alpha < 0.0 || self.rl.beta < 0.0 {
            return Err(CoreError::Config("rl.alpha and rl.beta must be non-negative and sum to 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(CoreError::Config("eval_samples must be positive".into()));
        }
        Ok(())
    }
}

/// The three datasets, loaded and checked before anything is trained.
pub struct Datasets {
    pub instruction: Vec<TaskRecord>,
    pub cot: Vec<CotRecord>,
    pub rl: Vec<TaskRecord>,
}

impl Datasets {
    pub fn load(paths: &DataPaths) -> Result<Self> {
        for p in [&paths.instruction, &paths.cot, &paths.rl] {
            if !p.exists() {
                return Err(CoreError::MissingFile(p.clone()));
            }
        }
        let ds = Self {
            instruction: read_jsonl(&paths.instruction)?,
            cot: read_jsonl(&paths.cot)?,
            rl: read_jsonl(&paths.rl)?,
        };
        for (name, n) in [("instruction", ds.instruction.len()), ("cot", ds.cot.len()), ("rl", ds.rl.len())] {
            if n == 0 {
                return Err(CoreError::Data(format!("{name} dataset is empty")));
            }
        }
        Ok(ds)
    }

    /// Plain-text sequences for base pretraining: each record's input and
    /// output, and each think span, without any task formatting.
    pub fn plain_text(&self) -> Vec<(crate::specialist::TaskKind, String)> {
        let mut out: Vec<_> = self
            .instruction
            .iter()
            .map(|r| (r.task, format!("{} {}", r.input, r.output)))
            .collect();
        out.extend(self.cot.iter().filter(|r| !r.think.is_empty()).map(|r| (r.task, r.think.clone())));
        out
    }

    /// Vocabulary over every text field, padded to `size`.
    pub fn vocabulary(&self, size: usize) -> Result<Vocabulary> {
        let mut texts: Vec<&str> = vec!["Draft"];
        for r in self.instruction.iter().chain(&self.rl) {
            texts.push(&r.input);
            texts.push(&r.output);
        }
        for r in &self.cot {
            texts.extend([r.input.as_str(), r.output.as_str(), r.think.as_str(), r.answer.as_str()]);
        }
        let v = Vocabulary::build(texts, size);
        if v.len() > size {
            return Err(CoreError::Config(format!(
                "vocabulary needs {} entries but vocab_size is {size}",
                v.len()
            )));
        }
        Ok(v.padded(size))
    }
}

/// One line of a stage report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub step: usize,
    pub loss: f64,
    pub mean_r_answer: Option<f64>,
    pub mean_r_think: Option<f64>,
    pub mean_r_hat: Option<f64>,
    pub wall_time: f64,
}

/// Snapshot written after each stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: u8,
    /// Mean loss over the last tenth of base pretraining (stage 1 only).
    pub pretrain_loss: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub well_formed_rate: Option<f64>,
    pub valid_smiles_fraction: Option<f64>,
    pub mean_reward: Option<f64>,
    pub skipped: usize,
}

pub struct StageResult {
    pub checkpoint: Checkpoint,
    pub metrics: StageMetrics,
    pub report: Vec<ReportLine>,
}

fn checkpoint_stage(ck: &Checkpoint) -> Option<u8> {
    ck.metadata.get("stage").and_then(|v| v.as_u64()).map(|v| v as u8)
}

fn metadata(cfg: &PipelineConfig, stage: StageKind) -> serde_json::Value {
    serde_json::json!({
        "stage": stage.number(),
        "seed": cfg.seed,
        "routing": "oracle",
        "smiles_similarity": "tanimoto over 2048-bit hashed linear-path fingerprints",
        "stage3_generation": if cfg.rl.paired { "paired" } else { "standalone" },
        "text_reward": "smoothed sentence BLEU",
        "format_version": crate::model::FORMAT_VERSION,
    })
}

/// Indices for each step's batch, drawn from a stage-specific stream.
fn batch_indices(seed: u64, stage: StageKind, step: usize, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = stream(seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), &format!("batches/{stage:?}"));
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

fn evenly<T: Clone>(items: &[T], k: usize) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    (0..k).map(|i| items[i * items.len() / k.max(1) % items.len()].clone()).collect()
}

/// Fraction of greedy paired generations whose output has well-formed
/// think and answer spans.
pub fn well_formed_rate(
    model: &Transformer,
    layer: &SpecialistLayer,
    vocab: &Vocabulary,
    records: &[TaskRecord],
    max_new: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::Data("no records to evaluate".into()));
    }
    let mut ok = 0;
    let mut drafts = DraftCache::new();
    for r in records {
        let raw = paired_raw(model, layer, vocab, r, DecodeMode::Greedy, max_new, &mut drafts)?;
        ok += usize::from(is_well_formed(&raw));
    }
    Ok(ok as f64 / records.len() as f64)
}

fn paired_raw(
    model: &Transformer,
    layer: &SpecialistLayer,
    vocab: &Vocabulary,
    r: &TaskRecord,
    mode: DecodeMode,
    max_new: usize,
    drafts: &mut DraftCache,
) -> Result<String> {
    let draft = drafts.get(model, layer, vocab, r.task, &r.input, max_new)?;
    let q = vocab.encode(&inference_prompt(r.task, &r.input, &draft)).ids;
    let adapter = layer.adapter(r.task.group(), Phase::Inference)?;
    let g = generate(model, Some(adapter), &q, mode, max_new, vocab.eos())?;
    Ok(vocab.decode(&g.tokens))
}

/// Fraction of `samples` temperature-sampled paired generations on
/// SMILES-output prompts whose answer span is a valid SMILES. Sample `i`
/// uses prompt `i mod n` and a seed derived from `(seed, i)`, so two
/// checkpoints are compared on identical random streams.
pub fn valid_smiles_fraction(
    model: &Transformer,
    layer: &SpecialistLayer,
    vocab: &Vocabulary,
    records: &[TaskRecord],
    samples: usize,
    tau: f64,
    max_new: usize,
    seed: u64,
) -> Result<f64> {
    let prompts: Vec<&TaskRecord> = records
        .iter()
        .filter(|r| matches!(r.task.output_format(), OutputFormat::Smiles | OutputFormat::Reaction))
        .collect();
    if prompts.is_empty() || samples == 0 {
        return Err(CoreError::Data("no SMILES-output prompts to sample".into()));
    }
    let mut valid = 0;
    let mut drafts = DraftCache::new();
    for i in 0..samples {
        let r = prompts[i % prompts.len()];
        let mode = DecodeMode::Temperature {
            tau,
            seed: seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(i as u64),
        };
        let raw = paired_raw(model, layer, vocab, r, mode, max_new, &mut drafts)?;
        if let Ok(spans) = parse_cot(&raw) {
            valid += usize::from(molsyn_chem::is_valid_smiles(&spans.answer));
        }
    }
    Ok(valid as f64 / samples as f64)
}

fn emit(report: &mut Vec<ReportLine>, start: Instant, step: usize, loss: f64, r: Option<(f64, f64, f64)>) {
    report.push(ReportLine {
        step,
        loss,
        mean_r_answer: r.map(|x| x.0),
        mean_r_think: r.map(|x| x.1),
        mean_r_hat: r.map(|x| x.2),
        wall_time: start.elapsed().as_secs_f64(),
    });
}

fn train_router(model: &Transformer, layer: &mut SpecialistLayer, vocab: &Vocabulary, prompts: &[(crate::specialist::TaskKind, String)], seed: u64) -> Result<()> {
    let samples = prompts
        .iter()
        .map(|(t, p)| Ok((model.embed(&vocab.encode(p).ids, None)?, t.group())))
        .collect::<Result<Vec<(Vec<f64>, GroupId)>>>()?;
    layer.router.train(&samples, 30, 0.05, seed)?;
    Ok(())
}

fn pretrain(cfg: &PipelineConfig, model: &mut Transformer, vocab: &Vocabulary, data: &Datasets) -> Result<Option<f64>> {
    let pc = &cfg.pretrain;
    if pc.steps == 0 {
        return Ok(None);
    }
    let docs: Vec<(crate::specialist::TaskKind, Vec<u32>)> = data
        .plain_text()
        .iter()
        .map(|(t, text)| (*t, vocab.encode(&format!("{text}\n")).ids))
        .collect();
    let mut opt = Optimizers::new(pc.lr)?;
    let tail = (pc.steps / 10).max(1);
    let mut tail_loss = 0.0;
    let mut rng = stream(cfg.seed, "pretrain");
    for step in 0..pc.steps {
        // Documents are packed to the full context so every position is trained.
        let batch: Vec<Example> = (0..pc.batch_size)
            .map(|_| {
                let mut target: Vec<u32> = Vec::new();
                let mut task = docs[0].0;
                while target.len() < model.config.max_seq {
                    let (t, ids) = &docs[rng.random_range(0..docs.len())];
                    if target.is_empty() {
                        task = *t;
                    }
                    target.extend(ids);
                }
                target.truncate(model.config.max_seq);
                Example {
                    task,
                    prompt: vec![vocab.bos()],
                    target,
                }
            })
            .collect();
        let o = pretrain_step(model, &mut opt, &batch, cfg.clip)?;
        if step % 100 == 0 {
            log::debug!("pretrain step {step}: loss {:.4}", o.loss);
        }
        if step + tail >= pc.steps {
            tail_loss += o.loss / tail as f64;
        }
    }
    Ok(Some(tail_loss))
}

/// Runs one stage. Stage 1 starts from `init` or a fresh model; stages 2 and
/// 3 require the previous stage's checkpoint.
pub fn run_stage(cfg: &PipelineConfig, stage: StageKind, init: Option<Checkpoint>, data: &Datasets) -> Result<StageResult> {
    cfg.validate()?;
    let expected_prev = stage.number() - 1;
    let mut pretrain_loss = None;
    let mut ck = match (stage, init) {
        (StageKind::InstructionSft, Some(ck)) => ck,
        (StageKind::InstructionSft, None) => {
            let vocab = data.vocabulary(cfg.model.vocab_size)?;
            let mut model = Transformer::new(cfg.model.clone(), cfg.seed)?;
            pretrain_loss = pretrain(cfg, &mut model, &vocab, data)?;
            let mut ck = Checkpoint::new(model, vocab);
            SpecialistLayer::new(&cfg.model, cfg.seed, RouterMode::Oracle)?.store(&mut ck);
            ck
        }
        (_, Some(ck)) if checkpoint_stage(&ck) == Some(expected_prev) => ck,
        (_, Some(ck)) => {
            return Err(CoreError::Config(format!(
                "stage {} needs a stage-{expected_prev} checkpoint, got stage {:?}",
                stage.number(),
                checkpoint_stage(&ck)
            )))
        }
        (_, None) => {
            return Err(CoreError::Config(format!(
                "stage {} needs a stage-{expected_prev} checkpoint",
                stage.number()
            )))
        }
    };
    let sc = cfg.stage(stage).clone();
    let vocab = ck.vocab.clone();
    let mut model = ck.model.clone();
    let mut layer = SpecialistLayer::load(&ck, RouterMode::Oracle)?;
    let mut opt = Optimizers::new(sc.lr)?;
    let step_cfg = StepConfig {
        clip: cfg.clip,
        train_base: false,
    };
    let start = Instant::now();
    let mut report = Vec::new();
    let mut metrics = StageMetrics {
        stage: stage.number(),
        pretrain_loss,
        ..StageMetrics::default()
    };

    match stage {
        StageKind::InstructionSft => {
            let examples: Vec<Example> = data.instruction.iter().map(|r| instruction_example(&vocab, r)).collect();
            let eval = evenly(&examples, cfg.eval_samples.min(examples.len()));
            metrics.initial_loss = Some(batch_loss(&model, &layer, &eval, Phase::Prediction)?);
            for step in 0..sc.steps {
                let idx = batch_indices(cfg.seed, stage, step, examples.len(), sc.batch_size);
                let batch: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
                let o = sft_step(&mut model, &mut layer, &mut opt, &batch, step_cfg)?;
                metrics.skipped += o.skipped;
                emit(&mut report, start, step, o.loss, None);
            }
            metrics.final_loss = Some(batch_loss(&model, &layer, &eval, Phase::Prediction)?);
        }
        StageKind::CotSft => {
            let usable: Vec<CotRecord> = data
                .cot
                .iter()
                .filter(|r| cot_example(&vocab, r).is_ok())
                .cloned()
                .collect();
            metrics.skipped = data.cot.len() - usable.len();
            if usable.is_empty() {
                return Err(CoreError::Data("no usable CoT records".into()));
            }
            let eval_ex: Vec<Example> = evenly(&usable, cfg.eval_samples.min(usable.len()))
                .iter()
                .map(|r| cot_example(&vocab, r))
                .collect::<Result<_>>()?;
            metrics.initial_loss = Some(batch_loss(&model, &layer, &eval_ex, Phase::Inference)?);
            for step in 0..sc.steps {
                let idx = batch_indices(cfg.seed, stage, step, usable.len(), sc.batch_size);
                let batch: Vec<CotRecord> = idx.iter().map(|&i| usable[i].clone()).collect();
                let o = cot_sft_step(&mut model, &mut layer, &mut opt, &vocab, &batch, step_cfg)?;
                emit(&mut report, start, step, o.loss, None);
            }
            metrics.final_loss = Some(batch_loss(&model, &layer, &eval_ex, Phase::Inference)?);
        }
        StageKind::Reinforce => {
            // Each batch draws from a single task so the batch-standardized
            // reward compares trajectories of the same adapter.
            let mut by_task: std::collections::BTreeMap<_, Vec<&TaskRecord>> = std::collections::BTreeMap::new();
            for r in &data.rl {
                by_task.entry(r.task).or_default().push(r);
            }
            let pools: Vec<Vec<&TaskRecord>> = by_task.into_values().collect();
            let mut total_r = 0.0;
            let mut drafts = DraftCache::new();
            for step in 0..sc.steps {
                let pool = &pools[batch_indices(cfg.seed, stage, step, pools.len(), 1)[0]];
                let idx = batch_indices(cfg.seed ^ 1, stage, step, pool.len(), sc.batch_size);
                let batch: Vec<TaskRecord> = idx.iter().map(|&i| pool[i].clone()).collect();
                let sample_seed = cfg.seed.wrapping_mul(31).wrapping_add(step as u64);
                let (o, _) = reinforce_step(&mut model, &mut layer, &mut opt, &vocab, &batch, &cfg.rl, step_cfg, sample_seed, &mut drafts)?;
                total_r += o.mean_r;
                emit(&mut report, start, step, o.loss, Some((o.mean_r_answer, o.mean_r_think, o.mean_r_hat)));
            }
            metrics.mean_reward = Some(if sc.steps == 0 { 0.0 } else { total_r / sc.steps as f64 });
        }
    }

    if sc.trainable == TrainableSet::AdaptersAndRouter {
        let prompts: Vec<_> = data
            .instruction
            .iter()
            .map(|r| (r.task, prediction_prompt(r.task, &r.input)))
            .collect();
        train_router(&model, &mut layer, &vocab, &prompts, cfg.seed)?;
    }

    // Snapshot on fixed prompts so consecutive stages are comparable.
    let eval_records = evenly(&data.rl, cfg.eval_samples.min(data.rl.len()).min(50));
    if stage != StageKind::InstructionSft {
        metrics.well_formed_rate = Some(well_formed_rate(&model, &layer, &vocab, &eval_records, cfg.rl.max_new)?);
        metrics.valid_smiles_fraction = valid_smiles_fraction(
            &model,
            &layer,
            &vocab,
            &data.rl,
            cfg.eval_samples,
            cfg.rl.tau,
            cfg.rl.max_new,
            cfg.seed,
        )
        .ok();
    }

    ck.model = model;
    layer.store(&mut ck);
    ck.metadata = metadata(cfg, stage);
    Ok(StageResult {
        checkpoint: ck,
        metrics,
        report,
    })
}

/// Files written by [`run_pipeline`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub metrics: Vec<StageMetrics>,
}

pub fn checkpoint_path(out: &Path, stage: StageKind) -> PathBuf {
    out.join(format!("stage{}.ckpt", stage.number()))
}

fn write_report(path: &Path, lines: &[ReportLine]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CoreError::io(format!("opening {}", path.display()), e))?;
    for l in lines {
        let s = serde_json::to_string(l)?;
        writeln!(f, "{s}").map_err(|e| CoreError::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// Runs stages `from..=3`. Starting later than stage 1 loads the previous
/// stage's checkpoint from `out`. All datasets are loaded and checked before
/// any stage runs.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, from: StageKind) -> Result<PipelineOutput> {
    run_stages(cfg, out, from, StageKind::Reinforce, None)
}

/// Runs stages `from..=to`. When `from` is after stage 1 the previous
/// checkpoint comes from `init`, or from `out` if `init` is `None`.
pub fn run_stages(cfg: &PipelineConfig, out: &Path, from: StageKind, to: StageKind, init: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    if to < from {
        return Err(CoreError::Config(format!(
            "last stage {} precedes first stage {}",
            to.number(),
            from.number()
        )));
    }
    let data = Datasets::load(&cfg.data)?;
    let mut init = match from {
        StageKind::InstructionSft => None,
        s => {
            let prev = StageKind::from_number(s.number() - 1)?;
            let p = init.map_or_else(|| checkpoint_path(out, prev), Path::to_path_buf);
            if !p.exists() {
                return Err(CoreError::Config(format!(
                    "stage {} needs the stage-{} checkpoint {}",
                    s.number(),
                    prev.number(),
                    p.display()
                )));
            }
            Some(Checkpoint::load(&p)?)
        }
    };
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(format!("creating {}", out.display()), e))?;
    let mut result = PipelineOutput {
        checkpoints: Vec::new(),
        reports: Vec::new(),
        metrics: Vec::new(),
    };
    for stage in [StageKind::InstructionSft, StageKind::CotSft, StageKind::Reinforce] {
        if stage < from || stage > to {
            continue;
        }
        log::info!("running stage {}", stage.number());
        let r = run_stage(cfg, stage, init.take(), &data)?;
        let ck_path = checkpoint_path(out, stage);
        r.checkpoint.save(&ck_path)?;
        let rep = out.join(format!("stage{}_report.jsonl", stage.number()));
        let _ = std::fs::remove_file(&rep);
        write_report(&rep, &r.report)?;
        let mpath = out.join(format!("stage{}_metrics.json", stage.number()));
        std::fs::write(&mpath, serde_json::to_string_pretty(&r.metrics)? + "\n")
            .map_err(|e| CoreError::io(format!("writing {}", mpath.display()), e))?;
        result.checkpoints.push(ck_path);
        result.reports.push(rep);
        result.metrics.push(r.metrics);
        init = Some(r.checkpoint);
    }
    Ok(result)
}
