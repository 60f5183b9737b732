//! Two-armed bandit solved with the REINFORCE loss: actions `A` (index 0)
//! and `B` (index 1), reward 1 iff `A`.

use molsyn_autodiff::rng::stream;
use molsyn_autodiff::{log_softmax_row, Adam, Graph, Tensor};
use rand::Rng;
use std::collections::BTreeMap;

use crate::error::Result;
use crate::rewards::standardize;

pub struct Bandit {
    pub logits: Tensor,
    opt: Adam,
    rng: molsyn_autodiff::rng::SeededRng,
}

impl Bandit {
    pub fn new(seed: u64, lr: f64) -> Result<Self> {
        Ok(Self {
            logits: Tensor::zeros(&[1, 2]),
            opt: Adam::new(lr)?,
            rng: stream(seed, "bandit"),
        })
    }

    pub fn prob_a(&self) -> f64 {
        log_softmax_row(self.logits.data())[0].exp()
    }

    pub fn sample(&mut self, n: usize) -> Vec<usize> {
        let p = self.prob_a();
        (0..n).map(|_| usize::from(self.rng.random::<f64>() >= p)).collect()
    }

    /// REINFORCE gradient of the logits for a fixed batch of actions and
    /// rewards, plus the loss value.
    pub fn gradient(&self, actions: &[usize], rewards: &[f64]) -> Result<(f64, Tensor)> {
        let r_hat = standardize(rewards);
        let b = actions.len() as f64;
        let mut g = Graph::new();
        let ones = g.constant(Tensor::full(&[actions.len(), 1], 1.0))?;
        let w = g.param(self.logits.clone())?;
        let logits = g.matmul(ones, w)?;
        let weights: Vec<f64> = r_hat.iter().map(|r| r / b).collect();
        let loss = g.weighted_nll(logits, actions, &weights)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).data()[0], grads.get_or_zeros(w)))
    }

    /// Samples `batch` pulls and applies one update. Returns the mean reward.
    pub fn step(&mut self, batch: usize) -> Result<f64> {
        let actions = self.sample(batch);
        let rewards: Vec<f64> = actions.iter().map(|&a| if a == 0 { 1.0 } else { 0.0 }).collect();
        let (_, grad) = self.gradient(&actions, &rewards)?;
        let mut params = BTreeMap::from([("logits".to_string(), self.logits.clone())]);
        self.opt.step(&mut params, &BTreeMap::from([("logits".to_string(), grad)]))?;
        self.logits = params.remove("logits").expect("present");
        Ok(rewards.iter().sum::<f64>() / batch as f64)
    }
}

/// Runs until `P(A) > threshold` or `max_steps`; returns the steps taken
/// and the final `P(A)`.
pub fn solve(seed: u64, max_steps: usize, batch: usize, lr: f64, threshold: f64) -> Result<(usize, f64)> {
    let mut b = Bandit::new(seed, lr)?;
    for s in 0..max_steps {
        if b.prob_a() > threshold {
            return Ok((s, b.prob_a()));
        }
        b.step(batch)?;
    }
    Ok((max_steps, b.prob_a()))
}
