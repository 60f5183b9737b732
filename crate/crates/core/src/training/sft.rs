//! Supervised steps: instruction SFT on prediction adapters and CoT SFT on
//! inference adapters. Both minimize cross-entropy over target tokens only.

use std::collections::BTreeMap;

use molsyn_autodiff::optim::clip_global_norm;
use molsyn_autodiff::{Adam, Graph, Tensor, Var};

use crate::data::{CotRecord, TaskRecord};
use crate::error::{CoreError, Result};
use crate::model::{Trainable, Transformer};
use crate::specialist::format::{cot_target, inference_prompt, prediction_prompt, prediction_target};
use crate::specialist::{adapter_name, GroupId, Phase, SpecialistLayer, TaskKind};
use crate::tokenizer::Vocabulary;

/// Tokenized prompt/target pair routed to one group.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub task: TaskKind,
    pub prompt: Vec<u32>,
    pub target: Vec<u32>,
}

impl Example {
    pub fn new(vocab: &Vocabulary, task: TaskKind, prompt: &str, target: &str) -> Self {
        Self {
            task,
            prompt: vocab.encode(prompt).ids,
            target: vocab.encode(target).ids,
        }
    }

    /// Model input length: prompt plus target minus the last token.
    pub fn input_len(&self) -> usize {
        self.prompt.len() + self.target.len() - 1
    }

    /// Input ids, next-token labels and the mask selecting target positions.
    pub fn shifted(&self) -> (Vec<u32>, Vec<usize>, Vec<bool>) {
        let seq: Vec<u32> = self.prompt.iter().chain(&self.target).copied().collect();
        let input = seq[..seq.len() - 1].to_vec();
        let labels = seq[1..].iter().map(|&t| t as usize).collect();
        let mask = (0..input.len()).map(|t| t + 1 >= self.prompt.len()).collect();
        (input, labels, mask)
    }
}

/// Stage-1 example: the answer after `⟨answer⟩`.
pub fn instruction_example(vocab: &Vocabulary, r: &TaskRecord) -> Example {
    Example::new(vocab, r.task, &prediction_prompt(r.task, &r.input), &prediction_target(&r.output))
}

/// Stage-2 example: think and answer spans after the draft-bearing prompt.
/// The gold answer serves as the draft during supervised training.
pub fn cot_example(vocab: &Vocabulary, r: &CotRecord) -> Result<Example> {
    if r.think.trim().is_empty() || r.answer.trim().is_empty() {
        log::warn!("rejecting CoT record {}: empty think or answer span", r.id);
        return Err(CoreError::Data(format!("record {} lacks a think or answer span", r.id)));
    }
    Ok(Example::new(
        vocab,
        r.task,
        &inference_prompt(r.task, &r.input, &r.output),
        &cot_target(&r.think, &r.answer),
    ))
}

/// Masked mean cross-entropy of one example.
pub fn example_loss(
    g: &mut Graph,
    model: &Transformer,
    adapter: Option<&crate::model::LoraAdapter>,
    ex: &Example,
    trainable: Trainable,
) -> Result<(Var, crate::model::Forward)> {
    if ex.target.is_empty() {
        return Err(CoreError::Data("empty target".into()));
    }
    let (input, labels, mask) = ex.shifted();
    let f = model.forward_graph(g, &input, adapter, trainable)?;
    let loss = g.cross_entropy(f.logits, &labels, &mask)?;
    Ok((loss, f))
}

/// Per-adapter optimizers (keyed `group{g}.{phase}`) plus one for the base.
pub struct Optimizers {
    lr: f64,
    adam: BTreeMap<String, Adam>,
}

impl Optimizers {
    pub fn new(lr: f64) -> Result<Self> {
        Adam::new(lr)?;
        Ok(Self {
            lr,
            adam: BTreeMap::new(),
        })
    }

    fn get(&mut self, key: &str) -> &mut Adam {
        let lr = self.lr;
        self.adam
            .entry(key.to_string())
            .or_insert_with(|| Adam::new(lr).expect("lr validated"))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub used: usize,
    pub skipped: usize,
    pub grad_norm: f64,
}

/// Gradients keyed by owner (`group{g}.{phase}` or `base`) then tensor name.
pub type GradSet = BTreeMap<String, BTreeMap<String, Tensor>>;

pub(crate) fn accumulate(into: &mut BTreeMap<String, Tensor>, name: &str, g: Tensor, scale: f64) -> Result<()> {
    let g = g.scale(scale);
    match into.get_mut(name) {
        Some(acc) => *acc = acc.add(&g)?,
        None => {
            into.insert(name.to_string(), g);
        }
    }
    Ok(())
}

/// Clips all gradients jointly to global norm `clip`, then applies Adam to
/// each owner's tensors. Returns the pre-clip norm.
pub fn apply_grads(
    model: &mut Transformer,
    layer: &mut SpecialistLayer,
    opt: &mut Optimizers,
    mut grads: GradSet,
    clip: f64,
) -> Result<f64> {
    let mut flat: BTreeMap<String, Tensor> = BTreeMap::new();
    for (owner, gs) in &grads {
        for (n, t) in gs {
            flat.insert(format!("{owner}/{n}"), t.clone());
        }
    }
    let norm = clip_global_norm(&mut flat, clip);
    for (owner, gs) in grads.iter_mut() {
        for (n, t) in gs.iter_mut() {
            *t = flat.remove(&format!("{owner}/{n}")).expect("flattened above");
        }
    }
    for (owner, gs) in grads {
        if owner == "base" {
            opt.get("base").step(&mut model.params, &gs)?;
            continue;
        }
        let (group, phase) = parse_owner(&owner)?;
        let adapter = layer.group_mut(group).adapter_mut(phase)?;
        opt.get(&owner).step(&mut adapter.tensors, &gs)?;
    }
    Ok(norm)
}

fn parse_owner(owner: &str) -> Result<(GroupId, Phase)> {
    let bad = || CoreError::Config(format!("unknown parameter owner {owner}"));
    let (g, p) = owner.split_once('.').ok_or_else(bad)?;
    let id: u8 = g.strip_prefix("group").and_then(|n| n.parse().ok()).ok_or_else(bad)?;
    let group = GroupId::new(id).ok_or_else(bad)?;
    let phase = match p {
        "prediction" => Phase::Prediction,
        "inference" => Phase::Inference,
        _ => return Err(bad()),
    };
    Ok((group, phase))
}

/// Loss and gradients for a batch; each example uses its task's group
/// adapter for `phase`. Overlong examples are skipped and counted.
pub fn batch_grads(
    model: &Transformer,
    layer: &SpecialistLayer,
    batch: &[Example],
    phase: Phase,
    train_base: bool,
) -> Result<(StepOutcome, GradSet)> {
    let usable: Vec<&Example> = batch
        .iter()
        .filter(|ex| ex.input_len() <= model.config.max_seq && !ex.target.is_empty())
        .collect();
    let mut out = StepOutcome {
        skipped: batch.len() - usable.len(),
        used: usable.len(),
        ..StepOutcome::default()
    };
    if out.skipped > 0 {
        log::warn!("skipped {} overlong example(s)", out.skipped);
    }
    let mut grads = GradSet::new();
    if usable.is_empty() {
        return Ok((out, grads));
    }
    let w = 1.0 / usable.len() as f64;
    let trainable = if train_base { Trainable::All } else { Trainable::Adapter };
    for ex in usable {
        let group = ex.task.group();
        let adapter = layer.adapter(group, phase)?;
        let mut g = Graph::new();
        let (loss, f) = example_loss(&mut g, model, Some(adapter), ex, trainable)?;
        out.loss += g.value(loss).data()[0] * w;
        let back = g.backward(loss)?;
        let owner = grads.entry(adapter_name(group, phase)).or_default();
        for (name, v) in &f.adapter {
            accumulate(owner, name, back.get_or_zeros(*v), w)?;
        }
        if train_base {
            let base = grads.entry("base".into()).or_default();
            for (name, v) in &f.base {
                accumulate(base, name, back.get_or_zeros(*v), w)?;
            }
        }
    }
    Ok((out, grads))
}

/// Mean loss of a batch without updating anything.
pub fn batch_loss(model: &Transformer, layer: &SpecialistLayer, batch: &[Example], phase: Phase) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for ex in batch.iter().filter(|ex| ex.input_len() <= model.config.max_seq) {
        let mut g = Graph::inference();
        let (loss, _) = example_loss(&mut g, model, Some(layer.adapter(ex.task.group(), phase)?), ex, Trainable::Nothing)?;
        total += g.value(loss).data()[0];
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::Data("no usable examples".into()));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub clip: f64,
    pub train_base: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            clip: 1.0,
            train_base: false,
        }
    }
}

/// One instruction-SFT update of the routed prediction adapters.
pub fn sft_step(
    model: &mut Transformer,
    layer: &mut SpecialistLayer,
    opt: &mut Optimizers,
    batch: &[Example],
    cfg: StepConfig,
) -> Result<StepOutcome> {
    let (mut out, grads) = batch_grads(model, layer, batch, Phase::Prediction, cfg.train_base)?;
    if out.used > 0 {
        out.grad_norm = apply_grads(model, layer, opt, grads, cfg.clip)?;
    }
    Ok(out)
}

/// One CoT-SFT update of the routed inference adapters. Records without a
/// think or answer span are rejected and counted as skipped.
pub fn cot_sft_step(
    model: &mut Transformer,
    layer: &mut SpecialistLayer,
    opt: &mut Optimizers,
    vocab: &Vocabulary,
    batch: &[CotRecord],
    cfg: StepConfig,
) -> Result<StepOutcome> {
    let mut rejected = 0;
    let examples: Vec<Example> = batch
        .iter()
        .filter_map(|r| match cot_example(vocab, r) {
            Ok(ex) => Some(ex),
            Err(_) => {
                rejected += 1;
                None
            }
        })
        .collect();
    let (mut out, grads) = batch_grads(model, layer, &examples, Phase::Inference, cfg.train_base)?;
    out.skipped += rejected;
    if out.used > 0 {
        out.grad_norm = apply_grads(model, layer, opt, grads, cfg.clip)?;
    }
    Ok(out)
}

/// Language-model update of the base weights alone on plain text sequences,
/// standing in for a pretrained base. Adapters are not involved.
pub fn pretrain_step(model: &mut Transformer, opt: &mut Optimizers, batch: &[Example], clip: f64) -> Result<StepOutcome> {
    let usable: Vec<&Example> = batch
        .iter()
        .filter(|ex| ex.input_len() <= model.config.max_seq && !ex.target.is_empty())
        .collect();
    let mut out = StepOutcome {
        skipped: batch.len() - usable.len(),
        used: usable.len(),
        ..StepOutcome::default()
    };
    if usable.is_empty() {
        return Ok(out);
    }
    let w = 1.0 / usable.len() as f64;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for ex in usable {
        let mut g = Graph::new();
        let (loss, f) = example_loss(&mut g, model, None, ex, Trainable::Base)?;
        out.loss += g.value(loss).data()[0] * w;
        let back = g.backward(loss)?;
        for (name, v) in &f.base {
            accumulate(&mut grads, name, back.get_or_zeros(*v), w)?;
        }
    }
    out.grad_norm = clip_global_norm(&mut grads, clip);
    opt.get("base").step(&mut model.params, &grads)?;
    Ok(out)
}
