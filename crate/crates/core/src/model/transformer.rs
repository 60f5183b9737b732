//! Decoder-only pre-norm transformer.
//!
//! Weights are stored `[out x in]` and applied as `x W^T`. Each block is
//! `h += Wo attn(norm(h))`, `h += W2 gelu(W1 norm(h))`; the final hidden
//! state is normalized and projected onto the vocabulary.

use std::collections::BTreeMap;

use molsyn_autodiff::rng::{randn, stream};
use molsyn_autodiff::{Graph, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::model::{LoraAdapter, ModelConfig};

const NORM_EPS: f64 = 1e-6;

/// Which tensors get gradients in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    Adapter,
    Base,
    All,
}

impl Trainable {
    fn adapter(self) -> bool {
        matches!(self, Trainable::Adapter | Trainable::All)
    }
    fn base(self) -> bool {
        matches!(self, Trainable::Base | Trainable::All)
    }
}

/// Vars of one forward pass. `base` and `adapter` hold the trainable leaves
/// keyed like the tensors they came from.
pub struct Forward {
    pub logits: Var,
    pub hidden: Var,
    pub base: BTreeMap<String, Var>,
    pub adapter: BTreeMap<String, Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

/// Causal scaled dot-product attention on plain tensors.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let (q, k, v) = (g.constant(q.clone())?, g.constant(k.clone())?, g.constant(v.clone())?);
    let out = attend(&mut g, q, k, v)?;
    Ok(g.value(out).clone())
}

fn attend(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (tq, dq) = g.value(q).dims2()?;
    let (tk, dk) = g.value(k).dims2()?;
    let (tv, _) = g.value(v).dims2()?;
    if dq != dk || tq != tk || tk != tv {
        return Err(CoreError::Tensor(molsyn_autodiff::TensorError::ShapeMismatch {
            op: "attention",
            lhs: vec![tq, dq],
            rhs: vec![tk, dk],
        }));
    }
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let p = g.causal_softmax(scores)?;
    Ok(g.matmul(p, v)?)
}

impl Transformer {
    /// Randomly initialized base model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "model-init");
        let d = config.d_model;
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let resid = 1.0 / ((2 * config.n_layers) as f64).sqrt();
        let mut params = BTreeMap::new();
        params.insert("tok_emb".into(), randn(&mut rng, &[config.vocab_size, d], 1.0));
        params.insert("pos_emb".into(), randn(&mut rng, &[config.max_seq, d], 0.5));
        for l in 0..config.n_layers {
            let p = |n: &str| format!("layer{l}.{n}");
            params.insert(p("attn_norm"), Tensor::full(&[d], 1.0));
            params.insert(p("ffn_norm"), Tensor::full(&[d], 1.0));
            for n in ["wq", "wk", "wv"] {
                params.insert(p(n), randn(&mut rng, &[d, d], lin(d)));
            }
            params.insert(p("wo"), randn(&mut rng, &[d, d], lin(d) * resid));
            params.insert(p("w1"), randn(&mut rng, &[config.d_ff, d], lin(d)));
            params.insert(p("w2"), randn(&mut rng, &[d, config.d_ff], lin(config.d_ff) * resid));
        }
        params.insert("final_norm".into(), Tensor::full(&[d], 1.0));
        params.insert("lm_head".into(), randn(&mut rng, &[config.vocab_size, d], lin(d)));
        Ok(Self { config, params })
    }

    /// Checks that `params` has exactly the expected names and shapes.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        let fresh = Transformer::new(self.config.clone(), 0)?;
        if fresh.params.len() != self.params.len() {
            return Err(CoreError::Checkpoint("unexpected base parameter set".into()));
        }
        for (name, t) in &fresh.params {
            match self.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(CoreError::Checkpoint(format!("base parameter {name} missing or misshapen"))),
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(CoreError::Config("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_seq {
            return Err(CoreError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(CoreError::Config(format!("token id {t} outside the vocabulary")));
        }
        Ok(())
    }

    /// Builds the forward pass on `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        tokens: &[u32],
        adapter: Option<&LoraAdapter>,
        trainable: Trainable,
    ) -> Result<Forward> {
        self.check_tokens(tokens)?;
        let mut base = BTreeMap::new();
        let mut adapter_vars = BTreeMap::new();
        let mut leaf = |g: &mut Graph, name: &str| -> Result<Var> {
            let t = self.params[name].clone();
            if trainable.base() {
                let v = g.param(t)?;
                base.insert(name.to_string(), v);
                Ok(v)
            } else {
                Ok(g.constant(t)?)
            }
        };
        let mut lora_leaf = |g: &mut Graph, ad: &LoraAdapter, name: &str| -> Result<Option<Var>> {
            let Some(t) = ad.tensors.get(name) else {
                return Ok(None);
            };
            let v = if trainable.adapter() {
                let v = g.param(t.clone())?;
                adapter_vars.insert(name.to_string(), v);
                v
            } else {
                g.constant(t.clone())?
            };
            Ok(Some(v))
        };

        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok_emb = leaf(g, "tok_emb")?;
        let pos_emb = leaf(g, "pos_emb")?;
        let te = g.gather(tok_emb, &ids)?;
        let pe = g.gather(pos_emb, &positions)?;
        let mut h = g.add(te, pe)?;

        let (n_heads, dk) = (self.config.n_heads, self.config.d_k());
        for l in 0..self.config.n_layers {
            let p = |n: &str| format!("layer{l}.{n}");
            let gain = leaf(g, &p("attn_norm"))?;
            let x = g.rms_norm(h, gain, NORM_EPS)?;
            let mut proj = |g: &mut Graph, n: &str| -> Result<Var> {
                let w = leaf(g, &p(n))?;
                let mut y = g.matmul_nt(x, w)?;
                if let Some(ad) = adapter {
                    let a = lora_leaf(g, ad, &format!("{}.a", p(n)))?;
                    let b = lora_leaf(g, ad, &format!("{}.b", p(n)))?;
                    if let (Some(a), Some(b)) = (a, b) {
                        let low = g.matmul_nt(x, a)?;
                        let up = g.matmul_nt(low, b)?;
                        let up = g.scale(up, ad.scale)?;
                        y = g.add(y, up)?;
                    }
                }
                Ok(y)
            };
            let q = proj(g, "wq")?;
            let k = proj(g, "wk")?;
            let v = proj(g, "wv")?;
            let mut heads = Vec::with_capacity(n_heads);
            for hd in 0..n_heads {
                let qh = g.slice_cols(q, hd * dk, dk)?;
                let kh = g.slice_cols(k, hd * dk, dk)?;
                let vh = g.slice_cols(v, hd * dk, dk)?;
                heads.push(attend(g, qh, kh, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let wo = leaf(g, &p("wo"))?;
            let attn = g.matmul_nt(cat, wo)?;
            h = g.add(h, attn)?;

            let gain = leaf(g, &p("ffn_norm"))?;
            let x = g.rms_norm(h, gain, NORM_EPS)?;
            let w1 = leaf(g, &p("w1"))?;
            let w2 = leaf(g, &p("w2"))?;
            let u = g.matmul_nt(x, w1)?;
            let u = g.gelu(u)?;
            let f = g.matmul_nt(u, w2)?;
            h = g.add(h, f)?;
        }
        let gain = leaf(g, "final_norm")?;
        let hidden = g.rms_norm(h, gain, NORM_EPS)?;
        let head = leaf(g, "lm_head")?;
        let logits = g.matmul_nt(hidden, head)?;
        Ok(Forward {
            logits,
            hidden,
            base,
            adapter: adapter_vars,
        })
    }

    /// Logits `[T x V]` without recording gradients.
    pub fn forward(&self, tokens: &[u32], adapter: Option<&LoraAdapter>) -> Result<Tensor> {
        let mut g = Graph::inference();
        let f = self.forward_graph(&mut g, tokens, adapter, Trainable::Nothing)?;
        let logits = g.value(f.logits).clone();
        logits.ensure_finite()?;
        Ok(logits)
    }

    /// Mean-pooled final hidden states, width `d_model`.
    pub fn embed(&self, tokens: &[u32], adapter: Option<&LoraAdapter>) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let f = self.forward_graph(&mut g, tokens, adapter, Trainable::Nothing)?;
        let pooled = g.mean_rows(f.hidden)?;
        Ok(g.value(pooled).data().to_vec())
    }

    /// Copy with every adapter target merged into the base weights.
    pub fn merged(&self, adapter: &LoraAdapter) -> Result<Transformer> {
        let mut out = self.clone();
        for target in adapter.targets() {
            let pair = adapter.pair(&target).expect("target listed by adapter");
            let w = out
                .params
                .get_mut(&target)
                .ok_or_else(|| CoreError::Checkpoint(format!("adapter targets unknown matrix {target}")))?;
            *w = pair.merge(w)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use molsyn_autodiff::rng::stream;

    fn model() -> Transformer {
        Transformer::new(ModelConfig::tiny(30), 7).unwrap()
    }

    fn brute_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<Vec<f64>> {
        let (t, d) = q.dims2().unwrap();
        let dv = v.dims2().unwrap().1;
        (0..t)
            .map(|i| {
                let s: Vec<f64> = (0..=i)
                    .map(|j| (0..d).map(|c| q.get2(i, c) * k.get2(j, c)).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..dv)
                    .map(|c| (0..=i).map(|j| e[j] / z * v.get2(j, c)).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn attention_cases() {
        let mut rng = stream(1, "attn");
        let q = randn(&mut rng, &[1, 4], 1.0);
        let k = randn(&mut rng, &[1, 4], 1.0);
        let v = randn(&mut rng, &[1, 3], 1.0);
        assert_eq!(attention(&q, &k, &v).unwrap(), v);

        let q = randn(&mut rng, &[3, 4], 1.0);
        let k = Tensor::from_rows(&vec![vec![0.3, -1.0, 0.2, 0.5]; 3]).unwrap();
        let v = randn(&mut rng, &[3, 2], 1.0);
        let out = attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                let mean = (0..=i).map(|j| v.get2(j, c)).sum::<f64>() / (i + 1) as f64;
                assert!((out.get2(i, c) - mean).abs() < 1e-12);
            }
        }

        let k = randn(&mut rng, &[3, 4], 1.0);
        let out = attention(&q, &k, &v).unwrap();
        let brute = brute_attention(&q, &k, &v);
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.get2(i, c) - brute[i][c]).abs() < 1e-12);
            }
        }
        assert!(attention(&q, &randn(&mut rng, &[3, 5], 1.0), &v).is_err());
    }

    #[test]
    fn causal_prefix_invariance() {
        let m = model();
        let full = m.forward(&[1, 5, 9, 2, 7], None).unwrap();
        let edited = m.forward(&[1, 5, 9, 20, 3], None).unwrap();
        let prefix = m.forward(&[1, 5, 9], None).unwrap();
        for t in 0..3 {
            assert_eq!(full.row(t), prefix.row(t));
            assert_eq!(full.row(t), edited.row(t));
        }
        assert_ne!(full.row(3), edited.row(3));
    }

    #[test]
    fn zero_adapter_and_determinism() {
        let m = model();
        let mut rng = stream(3, "adapter");
        let ad = LoraAdapter::new(&m.config, &mut rng).unwrap();
        let toks = [3, 4, 5, 6];
        assert_eq!(m.forward(&toks, None).unwrap(), m.forward(&toks, Some(&ad)).unwrap());
        assert_eq!(m, model());
        assert_eq!(m.forward(&toks, None).unwrap(), model().forward(&toks, None).unwrap());
        assert!(m.forward(&toks, None).unwrap().is_finite());
    }

    #[test]
    fn merged_forward_matches() {
        let m = model();
        let mut rng = stream(4, "adapter");
        let mut ad = LoraAdapter::new(&m.config, &mut rng).unwrap();
        for (name, t) in ad.tensors.iter_mut() {
            if name.ends_with(".b") {
                *t = randn(&mut rng, t.shape(), 0.1);
            }
        }
        let merged = m.merged(&ad).unwrap();
        let toks = [1, 2, 3, 4, 5, 6];
        let a = m.forward(&toks, Some(&ad)).unwrap();
        let b = merged.forward(&toks, None).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn overlong_and_bad_tokens() {
        let m = model();
        let long = vec![1u32; m.config.max_seq + 1];
        assert!(matches!(m.forward(&long, None), Err(CoreError::SequenceTooLong { .. })));
        assert!(m.forward(&[], None).is_err());
        assert!(m.forward(&[30], None).is_err());
    }

    #[test]
    fn embedding_shape() {
        let m = model();
        assert_eq!(m.embed(&[1, 2, 3], None).unwrap().len(), m.config.d_model);
        assert_eq!(m.embed(&[1, 2, 3], None).unwrap(), m.embed(&[1, 2, 3], None).unwrap());
        assert_ne!(m.embed(&[1, 2, 3], None).unwrap(), m.embed(&[1, 2, 4], None).unwrap());
    }
}
