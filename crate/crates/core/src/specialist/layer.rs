//! The multi-specialist layer: eight groups of paired adapters, a router and
//! the weighted aggregation `O = sum_i r_i * sg_i(q)` over group outputs.

use std::fmt;

use molsyn_autodiff::rng::stream;
use molsyn_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{generate, Checkpoint, DecodeMode, LoraAdapter, ModelConfig, Transformer};
use crate::specialist::format::{extract_draft, inference_prompt, parse_cot, prediction_prompt};
use crate::specialist::{GroupId, OutputFormat, RouteWeights, Router, RouterMode, TaskKind};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prediction,
    Inference,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Prediction => "prediction",
            Phase::Inference => "inference",
        })
    }
}

/// Registry name of an adapter, e.g. `group5.inference`.
pub fn adapter_name(group: GroupId, phase: Phase) -> String {
    format!("{group}.{phase}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecialistGroup {
    pub id: GroupId,
    pub prediction: Option<LoraAdapter>,
    pub inference: Option<LoraAdapter>,
}

impl SpecialistGroup {
    pub fn tasks(&self) -> Vec<TaskKind> {
        self.id.tasks()
    }

    pub fn output_format(&self) -> OutputFormat {
        self.id.output_format()
    }

    pub fn adapter(&self, phase: Phase) -> Result<&LoraAdapter> {
        match phase {
            Phase::Prediction => self.prediction.as_ref(),
            Phase::Inference => self.inference.as_ref(),
        }
        .ok_or_else(|| CoreError::Checkpoint(format!("{} is missing", adapter_name(self.id, phase))))
    }

    pub fn adapter_mut(&mut self, phase: Phase) -> Result<&mut LoraAdapter> {
        let id = self.id;
        match phase {
            Phase::Prediction => self.prediction.as_mut(),
            Phase::Inference => self.inference.as_mut(),
        }
        .ok_or_else(|| CoreError::Checkpoint(format!("{} is missing", adapter_name(id, phase))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecialistLayer {
    pub groups: Vec<SpecialistGroup>,
    pub router: Router,
}

const ROUTER_GATE: &str = "router.gate";
const ROUTER_BIAS: &str = "router.bias";

impl SpecialistLayer {
    /// Eight groups with freshly initialized (zero-delta) adapters.
    pub fn new(config: &ModelConfig, seed: u64, mode: RouterMode) -> Result<Self> {
        let groups = GroupId::all()
            .map(|id| {
                let mk = |phase: Phase| LoraAdapter::new(config, &mut stream(seed, &adapter_name(id, phase)));
                Ok(SpecialistGroup {
                    id,
                    prediction: Some(mk(Phase::Prediction)?),
                    inference: Some(mk(Phase::Inference)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            groups,
            router: Router::new(mode, config.d_model),
        })
    }

    pub fn group(&self, id: GroupId) -> &SpecialistGroup {
        &self.groups[id.index()]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut SpecialistGroup {
        &mut self.groups[id.index()]
    }

    pub fn adapter(&self, id: GroupId, phase: Phase) -> Result<&LoraAdapter> {
        self.group(id).adapter(phase)
    }

    /// `O = sum_i r_i * sg_i(q)` over logits. Groups with zero weight are
    /// skipped; a weight of exactly one returns that group's output unchanged.
    pub fn forward(&self, model: &Transformer, tokens: &[u32], weights: &RouteWeights, phase: Phase) -> Result<Tensor> {
        if !weights.is_valid() {
            return Err(CoreError::Routing("routing weights are not a distribution".into()));
        }
        let mut acc: Option<Tensor> = None;
        for g in GroupId::all() {
            let r = weights.get(g);
            if r == 0.0 {
                continue;
            }
            let out = model.forward(tokens, Some(self.adapter(g, phase)?))?;
            if r == 1.0 {
                return Ok(out);
            }
            let scaled = out.scale(r);
            acc = Some(match acc {
                None => scaled,
                Some(a) => a.add(&scaled)?,
            });
        }
        acc.ok_or_else(|| CoreError::Routing("all routing weights are zero".into()))
    }

    /// Writes adapters as `group{g}.{phase}` and the router gate into `ck`.
    pub fn store(&self, ck: &mut Checkpoint) {
        for grp in &self.groups {
            for phase in [Phase::Prediction, Phase::Inference] {
                if let Ok(ad) = grp.adapter(phase) {
                    ck.adapters.insert(adapter_name(grp.id, phase), ad.clone());
                }
            }
        }
        ck.extra.insert(ROUTER_GATE.into(), self.router.gate.clone());
        ck.extra.insert(ROUTER_BIAS.into(), self.router.bias.clone());
    }

    /// Reads the layer back. Missing adapters stay `None` and surface as
    /// checkpoint errors when used.
    pub fn load(ck: &Checkpoint, mode: RouterMode) -> Result<Self> {
        let groups = GroupId::all()
            .map(|id| SpecialistGroup {
                id,
                prediction: ck.adapters.get(&adapter_name(id, Phase::Prediction)).cloned(),
                inference: ck.adapters.get(&adapter_name(id, Phase::Inference)).cloned(),
            })
            .collect();
        let mut router = Router::new(mode, ck.model.config.d_model);
        if let (Some(g), Some(b)) = (ck.extra.get(ROUTER_GATE), ck.extra.get(ROUTER_BIAS)) {
            if g.shape() != router.gate.shape() || b.shape() != router.bias.shape() {
                return Err(CoreError::Checkpoint("router tensors have the wrong shape".into()));
            }
            router.gate = g.clone();
            router.bias = b.clone();
        }
        Ok(Self { groups, router })
    }
}

/// Text-in, text-out decoding for one group and phase.
pub trait Decoder {
    fn decode(&self, group: GroupId, phase: Phase, prompt: &str) -> Result<String>;
}

/// Greedy (or seeded) decoding with the model and a specialist layer.
pub struct ModelDecoder<'a> {
    pub model: &'a Transformer,
    pub layer: &'a SpecialistLayer,
    pub vocab: &'a Vocabulary,
    pub mode: DecodeMode,
    pub max_new: usize,
}

impl Decoder for ModelDecoder<'_> {
    fn decode(&self, group: GroupId, phase: Phase, prompt: &str) -> Result<String> {
        let adapter = self.layer.adapter(group, phase)?;
        let ids = self.vocab.encode(prompt).ids;
        let g = generate(self.model, Some(adapter), &ids, self.mode, self.max_new, self.vocab.eos())?;
        Ok(self.vocab.decode(&g.tokens))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutput {
    pub draft_answer: String,
    pub think: String,
    pub final_answer: String,
    pub raw: String,
}

/// Prediction adapter drafts an answer; the inference adapter reasons over
/// the query plus draft and the final answer is read from its answer span.
pub fn paired_inference(decoder: &dyn Decoder, task: TaskKind, query: &str) -> Result<PairedOutput> {
    let group = task.group();
    let draft = extract_draft(&decoder.decode(group, Phase::Prediction, &prediction_prompt(task, query))?);
    let raw = decoder.decode(group, Phase::Inference, &inference_prompt(task, query, &draft))?;
    let spans = parse_cot(&raw)?;
    Ok(PairedOutput {
        draft_answer: draft,
        think: spans.think,
        final_answer: spans.answer,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use molsyn_autodiff::rng::randn;

    fn setup() -> (Transformer, SpecialistLayer) {
        let cfg = ModelConfig::tiny(24);
        let model = Transformer::new(cfg.clone(), 5).unwrap();
        let mut layer = SpecialistLayer::new(&cfg, 5, RouterMode::Oracle).unwrap();
        let mut rng = stream(6, "perturb");
        for grp in &mut layer.groups {
            for phase in [Phase::Prediction, Phase::Inference] {
                for (n, t) in grp.adapter_mut(phase).unwrap().tensors.iter_mut() {
                    if n.ends_with(".b") {
                        *t = randn(&mut rng, t.shape(), 0.2);
                    }
                }
            }
        }
        (model, layer)
    }

    #[test]
    fn one_hot_is_exact() {
        let (m, layer) = setup();
        let toks = [1, 2, 3, 4];
        for g in GroupId::all() {
            let o = layer.forward(&m, &toks, &RouteWeights::one_hot(g), Phase::Inference).unwrap();
            let single = m.forward(&toks, Some(layer.adapter(g, Phase::Inference).unwrap())).unwrap();
            assert_eq!(o, single);
        }
    }

    #[test]
    fn uniform_matches_brute_average() {
        let (m, layer) = setup();
        let toks = [3, 1, 4, 1, 5];
        let o = layer.forward(&m, &toks, &RouteWeights::uniform(), Phase::Prediction).unwrap();
        let mut avg = Tensor::zeros(o.shape());
        for g in GroupId::all() {
            let y = m.forward(&toks, Some(layer.adapter(g, Phase::Prediction).unwrap())).unwrap();
            avg = avg.add(&y).unwrap();
        }
        let avg = avg.scale(1.0 / 8.0);
        assert!(o.max_abs_diff(&avg) < 1e-10);
    }

    #[test]
    fn identical_groups_any_weights() {
        let (m, mut layer) = setup();
        let shared = layer.adapter(GroupId::new(2).unwrap(), Phase::Prediction).unwrap().clone();
        layer.group_mut(GroupId::new(3).unwrap()).prediction = Some(shared.clone());
        let mut w = [0.0; 8];
        w[1] = 0.3;
        w[2] = 0.7;
        let toks = [2, 7, 1];
        let o = layer.forward(&m, &toks, &RouteWeights(w), Phase::Prediction).unwrap();
        let single = m.forward(&toks, Some(&shared)).unwrap();
        assert!(o.max_abs_diff(&single) < 1e-12);
    }

    #[test]
    fn missing_adapter_is_checkpoint_error() {
        let (m, mut layer) = setup();
        let g = GroupId::new(4).unwrap();
        layer.group_mut(g).inference = None;
        let r = layer.forward(&m, &[1, 2], &RouteWeights::one_hot(g), Phase::Inference);
        assert!(matches!(r, Err(CoreError::Checkpoint(_))));
    }

    #[test]
    fn store_and_load() {
        let (m, layer) = setup();
        let mut ck = Checkpoint::new(m, Vocabulary::build(Vec::<&str>::new(), 512));
        ck.model = Transformer::new(ModelConfig::tiny(ck.vocab.len()), 5).unwrap();
        layer.store(&mut ck);
        assert!(ck.adapters.contains_key("group8.inference"));
        let back = SpecialistLayer::load(&ck, RouterMode::Oracle).unwrap();
        assert_eq!(back, layer);
    }

    struct Scripted {
        prediction: String,
        inference: String,
    }

    impl Decoder for Scripted {
        fn decode(&self, _: GroupId, phase: Phase, prompt: &str) -> Result<String> {
            Ok(match phase {
                Phase::Prediction => self.prediction.clone(),
                Phase::Inference => {
                    assert!(prompt.contains("Draft: "));
                    self.inference.clone()
                }
            })
        }
    }

    #[test]
    fn paired_extraction() {
        let d = Scripted {
            prediction: "Yes⟨/answer⟩<eos>".into(),
            inference: "⟨think⟩permeable⟨/think⟩⟨answer⟩No⟨/answer⟩<eos>".into(),
        };
        let out = paired_inference(&d, TaskKind::Bbbp, "CCO").unwrap();
        assert_eq!(out.draft_answer, "Yes");
        assert_eq!(out.final_answer, "No");
        assert_eq!(out.think, "permeable");

        let d = Scripted {
            prediction: "CCO⟨/answer⟩".into(),
            inference: "⟨think⟩⟨/think⟩⟨answer⟩CCO⟨/answer⟩".into(),
        };
        let out = paired_inference(&d, TaskKind::SmilesGeneration, "ethanol").unwrap();
        assert_eq!(out.final_answer, out.draft_answer);

        let d = Scripted {
            prediction: "Yes".into(),
            inference: "⟨think⟩no answer here".into(),
        };
        assert!(matches!(
            paired_inference(&d, TaskKind::Bbbp, "CCO"),
            Err(CoreError::MalformedOutput { .. })
        ));
    }

    #[test]
    fn model_decoder_runs() {
        let vocab = Vocabulary::build(["Yes No"], 512);
        let cfg = ModelConfig::tiny(vocab.len());
        let model = Transformer::new(cfg.clone(), 1).unwrap();
        let layer = SpecialistLayer::new(&cfg, 1, RouterMode::Oracle).unwrap();
        let dec = ModelDecoder {
            model: &model,
            layer: &layer,
            vocab: &vocab,
            mode: DecodeMode::Greedy,
            max_new: 6,
        };
        let a = dec.decode(GroupId::new(5).unwrap(), Phase::Prediction, "<bos>x").unwrap();
        let b = dec.decode(GroupId::new(5).unwrap(), Phase::Prediction, "<bos>x").unwrap();
        assert_eq!(a, b);
    }
}
