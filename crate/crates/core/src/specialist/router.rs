use molsyn_autodiff::rng::stream;
use molsyn_autodiff::{log_softmax_row, Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::specialist::{GroupId, TaskKind};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    /// One-hot at the group owning the query's task tag.
    #[default]
    Oracle,
    /// Softmax of a linear gate over the pooled query embedding.
    Learned,
}

/// Routing weights `r_1..r_8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteWeights(pub [f64; GroupId::COUNT]);

impl RouteWeights {
    pub fn one_hot(g: GroupId) -> Self {
        let mut w = [0.0; GroupId::COUNT];
        w[g.index()] = 1.0;
        Self(w)
    }

    pub fn uniform() -> Self {
        Self([1.0 / GroupId::COUNT as f64; GroupId::COUNT])
    }

    pub fn get(&self, g: GroupId) -> f64 {
        self.0[g.index()]
    }

    pub fn argmax(&self) -> GroupId {
        let mut best = 0;
        for i in 1..GroupId::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        GroupId::new(best as u8 + 1).expect("index below 8")
    }

    /// Non-negative and summing to one within `1e-9`.
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&r| r >= 0.0 && r.is_finite()) && (self.0.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

/// Query-level router. The gate maps a `d_model` embedding to eight scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Router {
    pub mode: RouterMode,
    pub gate: Tensor,
    pub bias: Tensor,
}

/// Task named by the first task-tag token in `tokens`.
pub fn task_of(vocab: &Vocabulary, tokens: &[u32]) -> Option<TaskKind> {
    tokens
        .iter()
        .find_map(|&t| vocab.token(t).and_then(TaskKind::from_tag))
}

impl Router {
    pub fn new(mode: RouterMode, d_model: usize) -> Self {
        Self {
            mode,
            gate: Tensor::zeros(&[GroupId::COUNT, d_model]),
            bias: Tensor::zeros(&[GroupId::COUNT]),
        }
    }

    pub fn learned_weights(&self, embedding: &[f64]) -> Result<RouteWeights> {
        let (_, d) = self.gate.dims2()?;
        if embedding.len() != d {
            return Err(CoreError::Routing(format!(
                "embedding width {} does not match gate width {d}",
                embedding.len()
            )));
        }
        let scores: Vec<f64> = (0..GroupId::COUNT)
            .map(|g| {
                self.gate.row(g).iter().zip(embedding).map(|(w, x)| w * x).sum::<f64>() + self.bias.data()[g]
            })
            .collect();
        let logp = log_softmax_row(&scores);
        let mut w = [0.0; GroupId::COUNT];
        for (o, lp) in w.iter_mut().zip(logp) {
            *o = lp.exp();
        }
        // Renormalize so the sum is one to rounding.
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Ok(RouteWeights(w))
    }

    /// Routes one query. Oracle mode needs a task tag among `tokens`;
    /// learned mode needs the pooled `embedding`.
    pub fn route(&self, vocab: &Vocabulary, tokens: &[u32], embedding: Option<&[f64]>) -> Result<RouteWeights> {
        if tokens.is_empty() {
            return Err(CoreError::Routing("empty query".into()));
        }
        match self.mode {
            RouterMode::Oracle => task_of(vocab, tokens)
                .map(|t| RouteWeights::one_hot(t.group()))
                .ok_or_else(|| CoreError::Routing("query carries no known task tag".into())),
            RouterMode::Learned => {
                let e = embedding.ok_or_else(|| CoreError::Routing("learned routing needs an embedding".into()))?;
                self.learned_weights(e)
            }
        }
    }

    /// Fits the gate with cross-entropy against group labels. Returns the
    /// final epoch's mean loss.
    pub fn train(&mut self, samples: &[(Vec<f64>, GroupId)], epochs: usize, lr: f64, seed: u64) -> Result<f64> {
        if samples.is_empty() {
            return Err(CoreError::Data("no router training samples".into()));
        }
        let mut opt = Adam::new(lr)?;
        let mut rng = stream(seed, "router-train");
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last = 0.0;
        const BATCH: usize = 16;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(BATCH) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| samples[i].0.clone()).collect();
                let targets: Vec<usize> = chunk.iter().map(|&i| samples[i].1.index()).collect();
                let mut g = Graph::new();
                let x = g.constant(Tensor::from_rows(&rows)?)?;
                let w = g.param(self.gate.clone())?;
                let b = g.param(self.bias.clone())?;
                let s = g.matmul_nt(x, w)?;
                let s = g.add_row(s, b)?;
                let loss = g.cross_entropy(s, &targets, &vec![true; targets.len()])?;
                total += g.value(loss).data()[0] * chunk.len() as f64;
                let grads = g.backward(loss)?;
                let mut params = std::collections::BTreeMap::from([
                    ("gate".to_string(), self.gate.clone()),
                    ("bias".to_string(), self.bias.clone()),
                ]);
                let gr = std::collections::BTreeMap::from([
                    ("gate".to_string(), grads.get_or_zeros(w)),
                    ("bias".to_string(), grads.get_or_zeros(b)),
                ]);
                opt.step(&mut params, &gr)?;
                self.gate = params.remove("gate").expect("present");
                self.bias = params.remove("bias").expect("present");
            }
            last = total / samples.len() as f64;
        }
        Ok(last)
    }
}
