//! REINFORCE with batch-standardized rewards:
//! `L = -mean_i (sum_t log pi(a_t | s_t)) * r_hat_i`.

use molsyn_autodiff::{Graph, Var};
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::TaskRecord;
use crate::error::{CoreError, Result};
use crate::model::{generate, DecodeMode, Trainable, Transformer};
use crate::rewards::{answer_reward, combine, standardize, think_reward, RewardBreakdown};
use crate::specialist::format::{extract_draft, inference_prompt, parse_cot, prediction_prompt};
use crate::specialist::{adapter_name, Phase, SpecialistLayer, TaskKind};
use crate::tokenizer::Vocabulary;
use crate::training::sft::{accumulate, apply_grads, GradSet, Optimizers, StepConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub prompt: Vec<u32>,
    pub sampled: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub think: String,
    pub answer: String,
    pub reward: RewardBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub max_new: usize,
    /// Condition the inference adapter on a prediction-adapter draft.
    pub paired: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            alpha: crate::rewards::ALPHA,
            beta: crate::rewards::BETA,
            tau: 1.0,
            max_new: 48,
            paired: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub loss: f64,
    pub mean_r_answer: f64,
    pub mean_r_think: f64,
    pub mean_r: f64,
    pub mean_r_hat: f64,
    pub zero_update: bool,
}

/// Adds `sum_t w * (-log pi(sampled_t))` for one trajectory to `g`. With
/// `w = r_hat / B` summing these over a batch gives the REINFORCE loss.
pub fn trajectory_loss(
    g: &mut Graph,
    logits: Var,
    prompt_len: usize,
    sampled: &[u32],
    weight: f64,
) -> Result<Var> {
    let (t, _) = g.value(logits).dims2()?;
    if t + 1 != prompt_len + sampled.len() {
        return Err(CoreError::Config("trajectory does not match logits".into()));
    }
    let mut targets = vec![0usize; t];
    let mut weights = vec![0.0; t];
    for (k, &a) in sampled.iter().enumerate() {
        let pos = prompt_len - 1 + k;
        targets[pos] = a as usize;
        weights[pos] = weight;
    }
    Ok(g.weighted_nll(logits, &targets, &weights)?)
}

/// Greedy prediction-adapter drafts, memoized by query. Only valid while
/// the prediction adapters are unchanged, which holds during REINFORCE.
#[derive(Clone, Debug, Default)]
pub struct DraftCache {
    drafts: HashMap<(TaskKind, String, usize), String>,
}

impl DraftCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &mut self,
        model: &Transformer,
        layer: &SpecialistLayer,
        vocab: &Vocabulary,
        task: TaskKind,
        input: &str,
        max_new: usize,
    ) -> Result<String> {
        let key = (task, input.to_string(), max_new);
        if let Some(d) = self.drafts.get(&key) {
            return Ok(d.clone());
        }
        let adapter = layer.adapter(task.group(), Phase::Prediction)?;
        let prompt = vocab.encode(&prediction_prompt(task, input)).ids;
        let gen = generate(model, Some(adapter), &prompt, DecodeMode::Greedy, max_new, vocab.eos())?;
        let d = fit_draft(vocab, task, input, &extract_draft(&vocab.decode(&gen.tokens)), model.config.max_seq);
        self.drafts.insert(key, d.clone());
        Ok(d)
    }
}

/// Longest prefix of `draft` whose inference prompt leaves room for at least
/// one generated token. Re-encoding decoded text can take more tokens than
/// were generated, e.g. for runs of words with no separators.
pub fn fit_draft(vocab: &Vocabulary, task: TaskKind, input: &str, draft: &str, max_seq: usize) -> String {
    let fits = |n: usize| {
        let d: String = draft.chars().take(n).collect();
        vocab.encode(&inference_prompt(task, input, &d)).ids.len() < max_seq
    };
    let total = draft.chars().count();
    if fits(total) {
        return draft.to_string();
    }
    let (mut lo, mut hi) = (0, total);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    draft.chars().take(lo).collect::<String>().trim_end().to_string()
}

/// Samples one inference-adapter trajectory per record and scores it. Rewards
/// are standardized across the batch.
pub fn sample_trajectories(
    model: &Transformer,
    layer: &SpecialistLayer,
    vocab: &Vocabulary,
    batch: &[TaskRecord],
    cfg: &RlConfig,
    seed: u64,
    drafts: &mut DraftCache,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(batch.len());
    for (i, r) in batch.iter().enumerate() {
        let draft = if cfg.paired {
            drafts.get(model, layer, vocab, r.task, &r.input, cfg.max_new)?
        } else {
            String::new()
        };
        let prompt = vocab.encode(&inference_prompt(r.task, &r.input, &draft)).ids;
        let adapter = layer.adapter(r.task.group(), Phase::Inference)?;
        let mode = DecodeMode::Temperature {
            tau: cfg.tau,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
        };
        let gen = generate(model, Some(adapter), &prompt, mode, cfg.max_new, vocab.eos())?;
        let text = vocab.decode(&gen.tokens);
        let (think, answer, diag) = match parse_cot(&text) {
            Ok(s) => (s.think, s.answer, None),
            Err(_) => (String::new(), String::new(), Some("malformed output".to_string())),
        };
        let a = if diag.is_some() {
            0.0
        } else {
            answer_reward(r.task, &answer, &r.output).value
        };
        let t = think_reward(&think);
        out.push(Trajectory {
            id: r.id.clone(),
            prompt,
            sampled: gen.tokens,
            logprobs: gen.logprobs,
            think,
            answer,
            reward: RewardBreakdown {
                r_answer: a,
                r_think: t,
                alpha: cfg.alpha,
                beta: cfg.beta,
                r: combine(a, t, cfg.alpha, cfg.beta),
                r_hat: 0.0,
                diagnostic: diag,
            },
        });
    }
    let rs: Vec<f64> = out.iter().map(|t| t.reward.r).collect();
    for (t, h) in out.iter_mut().zip(standardize(&rs)) {
        t.reward.r_hat = h;
    }
    Ok(out)
}

/// Loss and inference-adapter gradients for scored trajectories.
pub fn reinforce_grads(
    model: &Transformer,
    layer: &SpecialistLayer,
    batch: &[TaskRecord],
    trajectories: &[Trajectory],
) -> Result<(f64, GradSet)> {
    let b = trajectories.len() as f64;
    let mut grads = GradSet::new();
    let mut loss_total = 0.0;
    for (r, tr) in batch.iter().zip(trajectories) {
        if tr.sampled.is_empty() || tr.reward.r_hat == 0.0 {
            continue;
        }
        let group = r.task.group();
        let seq: Vec<u32> = tr.prompt.iter().chain(&tr.sampled).copied().collect();
        let input = &seq[..seq.len() - 1];
        let mut g = Graph::new();
        let f = model.forward_graph(&mut g, input, Some(layer.adapter(group, Phase::Inference)?), Trainable::Adapter)?;
        let loss = trajectory_loss(&mut g, f.logits, tr.prompt.len(), &tr.sampled, tr.reward.r_hat / b)?;
        loss_total += g.value(loss).data()[0];
        let back = g.backward(loss)?;
        let owner = grads.entry(adapter_name(group, Phase::Inference)).or_default();
        for (name, v) in &f.adapter {
            accumulate(owner, name, back.get_or_zeros(*v), 1.0)?;
        }
    }
    Ok((loss_total, grads))
}

/// One REINFORCE update. A batch whose standardized rewards are all zero
/// (constant rewards, or a single prompt) leaves every parameter untouched.
#[allow(clippy::too_many_arguments)]
pub fn reinforce_step(
    model: &mut Transformer,
    layer: &mut SpecialistLayer,
    opt: &mut Optimizers,
    vocab: &Vocabulary,
    batch: &[TaskRecord],
    cfg: &RlConfig,
    step_cfg: StepConfig,
    seed: u64,
    drafts: &mut DraftCache,
) -> Result<(RlOutcome, Vec<Trajectory>)> {
    if batch.is_empty() {
        return Err(CoreError::Data("empty REINFORCE batch".into()));
    }
    let trajectories = sample_trajectories(model, layer, vocab, batch, cfg, seed, drafts)?;
    let n = trajectories.len() as f64;
    let mut out = RlOutcome {
        mean_r_answer: trajectories.iter().map(|t| t.reward.r_answer).sum::<f64>() / n,
        mean_r_think: trajectories.iter().map(|t| t.reward.r_think).sum::<f64>() / n,
        mean_r: trajectories.iter().map(|t| t.reward.r).sum::<f64>() / n,
        mean_r_hat: trajectories.iter().map(|t| t.reward.r_hat).sum::<f64>() / n,
        ..RlOutcome::default()
    };
    if trajectories.iter().all(|t| t.reward.r_hat == 0.0) {
        if batch.len() == 1 {
            log::warn!("REINFORCE batch of one: standardized reward is zero, skipping update");
        }
        out.zero_update = true;
        return Ok((out, trajectories));
    }
    let (loss, grads) = reinforce_grads(model, layer, batch, &trajectories)?;
    out.loss = loss;
    apply_grads(model, layer, opt, grads, step_cfg.clip)?;
    Ok((out, trajectories))
}
