//! Low-rank adapters: `W' = W + s * B A` with `A: r x k`, `B: d x r`.

use std::collections::BTreeMap;

use molsyn_autodiff::rng::{randn, SeededRng};
use molsyn_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::ModelConfig;

/// One adapted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    pub a: Tensor,
    pub b: Tensor,
    pub scale: f64,
}

impl LoraPair {
    /// Random `A`, zero `B`, so the initial delta is exactly zero.
    pub fn init(rng: &mut SeededRng, d: usize, k: usize, rank: usize, scale: f64) -> Result<Self> {
        if rank == 0 || rank > d.min(k) {
            return Err(CoreError::Config(format!(
                "LoRA rank {rank} is outside 1..={} for a {d}x{k} matrix",
                d.min(k)
            )));
        }
        Ok(Self {
            a: randn(rng, &[rank, k], 1.0 / (k as f64).sqrt()),
            b: Tensor::zeros(&[d, rank]),
            scale,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    /// `s * B A`, shaped like the adapted matrix.
    pub fn delta(&self) -> Result<Tensor> {
        Ok(self.b.matmul(&self.a)?.scale(self.scale))
    }

    pub fn merge(&self, w: &Tensor) -> Result<Tensor> {
        Ok(w.add(&self.delta()?)?)
    }
}

/// `(W + s B A) x` for each row `x` of `xs`, computed without forming `W'`.
pub fn lora_apply(w: &Tensor, pair: Option<&LoraPair>, xs: &Tensor) -> Result<Tensor> {
    let base = xs.matmul(&w.transpose()?)?;
    match pair {
        None => Ok(base),
        Some(p) => {
            let low = xs.matmul(&p.a.transpose()?)?;
            let up = low.matmul(&p.b.transpose()?)?.scale(p.scale);
            Ok(base.add(&up)?)
        }
    }
}

/// Adapter set for one specialist: a pair per targeted matrix.
///
/// Tensors are stored flat as `{target}.a` / `{target}.b` so an optimizer can
/// update them in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub scale: f64,
    #[serde(skip)]
    pub tensors: BTreeMap<String, Tensor>,
}

/// Matrices adapted in each layer.
pub const LORA_TARGETS: [&str; 2] = ["wq", "wv"];

impl LoraAdapter {
    /// Fresh adapter over the query and value projections of every layer.
    pub fn new(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for l in 0..config.n_layers {
            for t in LORA_TARGETS {
                let p = LoraPair::init(rng, config.d_model, config.d_model, config.lora_rank, config.lora_scale)?;
                tensors.insert(format!("layer{l}.{t}.a"), p.a);
                tensors.insert(format!("layer{l}.{t}.b"), p.b);
            }
        }
        Ok(Self {
            rank: config.lora_rank,
            scale: config.lora_scale,
            tensors,
        })
    }

    /// Names of adapted matrices, e.g. `layer0.wq`.
    pub fn targets(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter_map(|k| k.strip_suffix(".a").map(str::to_string))
            .collect()
    }

    pub fn pair(&self, target: &str) -> Option<LoraPair> {
        let a = self.tensors.get(&format!("{target}.a"))?;
        let b = self.tensors.get(&format!("{target}.b"))?;
        Some(LoraPair {
            a: a.clone(),
            b: b.clone(),
            scale: self.scale,
        })
    }

    /// Checks shapes against the model and the `r <= min(d, k) / 2` bound.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        for target in self.targets() {
            let p = self
                .pair(&target)
                .ok_or_else(|| CoreError::Checkpoint(format!("adapter target {target} is incomplete")))?;
            let (r, k) = p.a.dims2()?;
            let (d, rb) = p.b.dims2()?;
            if r != rb || r != self.rank {
                return Err(CoreError::Config(format!("adapter {target} has inconsistent rank")));
            }
            if d != config.d_model || k != config.d_model {
                return Err(CoreError::Config(format!("adapter {target} does not match d_model")));
            }
            if 2 * r > d.min(k) {
                return Err(CoreError::Config(format!(
                    "adapter {target} rank {r} exceeds min(d, k)/2"
                )));
            }
        }
        Ok(())
    }

    /// True when every `B` is zero, i.e. the adapter is the identity.
    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .filter(|(k, _)| k.ends_with(".b"))
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use molsyn_autodiff::rng::stream;
    use nalgebra::DMatrix;

    fn to_na(t: &Tensor) -> DMatrix<f64> {
        let (r, c) = t.dims2().unwrap();
        DMatrix::from_row_slice(r, c, t.data())
    }

    #[test]
    fn zero_init_is_identity() {
        let mut rng = stream(1, "lora");
        let w = randn(&mut rng, &[6, 5], 1.0);
        let x = randn(&mut rng, &[3, 5], 1.0);
        let p = LoraPair::init(&mut rng, 6, 5, 2, 2.0).unwrap();
        assert_eq!(lora_apply(&w, Some(&p), &x).unwrap(), lora_apply(&w, None, &x).unwrap());
    }

    #[test]
    fn merged_matches_unmerged() {
        let mut rng = stream(2, "lora");
        for _ in 0..20 {
            let w = randn(&mut rng, &[8, 6], 1.0);
            let mut p = LoraPair::init(&mut rng, 8, 6, 3, 2.0).unwrap();
            p.b = randn(&mut rng, &[8, 3], 1.0);
            let x = randn(&mut rng, &[4, 6], 1.0);
            let merged = x.matmul(&p.merge(&w).unwrap().transpose().unwrap()).unwrap();
            let unmerged = lora_apply(&w, Some(&p), &x).unwrap();
            assert!(merged.max_abs_diff(&unmerged) < 1e-10);
        }
    }

    #[test]
    fn full_rank_reproduces_any_delta() {
        // Fit B A = target / s by least squares on B with A fixed and invertible.
        let mut rng = stream(3, "lora");
        let (d, k) = (5, 4);
        let target = randn(&mut rng, &[d, k], 1.0);
        let mut p = LoraPair::init(&mut rng, d, k, d.min(k), 2.0).unwrap();
        let a = to_na(&p.a);
        let rhs = to_na(&target) / p.scale;
        // Solve B A = rhs  <=>  A^T B^T = rhs^T.
        let bt = a.transpose().svd(true, true).solve(&rhs.transpose(), 1e-14).unwrap();
        let b = bt.transpose();
        // nalgebra is column-major; rebuild row-major explicitly.
        let mut rows = vec![0.0; d * d.min(k)];
        for i in 0..d {
            for j in 0..d.min(k) {
                rows[i * d.min(k) + j] = b[(i, j)];
            }
        }
        p.b = Tensor::new(vec![d, d.min(k)], rows).unwrap();
        let residual = p.delta().unwrap().max_abs_diff(&target);
        assert!(residual < 1e-8, "residual {residual}");
        assert!(LoraPair::init(&mut rng, d, k, 5, 2.0).is_err());
    }

    #[test]
    fn adapter_rank_bound() {
        let cfg = ModelConfig::tiny(40);
        let mut rng = stream(4, "lora");
        let ad = LoraAdapter::new(&cfg, &mut rng).unwrap();
        ad.check(&cfg).unwrap();
        assert!(ad.is_zero());
        assert_eq!(ad.targets().len(), 2 * cfg.n_layers);
        let mut bad = cfg.clone();
        bad.lora_rank = 17;
        assert!(LoraAdapter::new(&bad, &mut rng).is_err());
    }
}
