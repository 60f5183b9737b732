//! Incremental decoding with per-layer key/value caches. Mirrors
//! `Transformer::forward_graph` one position at a time.

use molsyn_autodiff::gelu;

use crate::error::{CoreError, Result};
use crate::model::{LoraAdapter, Transformer};

const NORM_EPS: f64 = 1e-6;

fn rms_norm(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64 + NORM_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v / rms * g).collect()
}

/// `W x` for `W` stored `[out x in]`.
fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn add_into(acc: &mut [f64], y: &[f64]) {
    acc.iter_mut().zip(y).for_each(|(a, b)| *a += b);
}

pub struct DecodeState<'a> {
    model: &'a Transformer,
    adapter: Option<&'a LoraAdapter>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl<'a> DecodeState<'a> {
    pub fn new(model: &'a Transformer, adapter: Option<&'a LoraAdapter>) -> Self {
        let n = model.config.n_layers;
        Self {
            model,
            adapter,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn proj(&self, l: usize, name: &str, x: &[f64]) -> Vec<f64> {
        let key = format!("layer{l}.{name}");
        let mut y = matvec(self.model.params[&key].data(), x);
        if let Some(ad) = self.adapter {
            if let (Some(a), Some(b)) = (ad.tensors.get(&format!("{key}.a")), ad.tensors.get(&format!("{key}.b"))) {
                let up = matvec(b.data(), &matvec(a.data(), x));
                y.iter_mut().zip(up).for_each(|(v, u)| *v += u * ad.scale);
            }
        }
        y
    }

    /// Consumes one token and returns the next-token logits.
    pub fn push(&mut self, token: u32) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let pos = self.len();
        if pos >= cfg.max_seq {
            return Err(CoreError::SequenceTooLong {
                len: pos + 1,
                max: cfg.max_seq,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(CoreError::Config(format!("token id {token} outside the vocabulary")));
        }
        let p = &self.model.params;
        let d = cfg.d_model;
        let mut h: Vec<f64> = p["tok_emb"].row(token as usize).to_vec();
        add_into(&mut h, p["pos_emb"].row(pos));
        let (n_heads, dk) = (cfg.n_heads, cfg.d_k());
        let scale = 1.0 / (dk as f64).sqrt();
        for l in 0..cfg.n_layers {
            let x = rms_norm(&h, p[&format!("layer{l}.attn_norm")].data());
            let q = self.proj(l, "wq", &x);
            let k = self.proj(l, "wk", &x);
            self.keys[l].push(k);
            let v = self.proj(l, "wv", &x);
            self.values[l].push(v);
            let mut cat = vec![0.0; d];
            for hd in 0..n_heads {
                let r = hd * dk..(hd + 1) * dk;
                let scores: Vec<f64> = self.keys[l]
                    .iter()
                    .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for (w, v) in e.iter().zip(&self.values[l]) {
                    for (c, vv) in cat[r.clone()].iter_mut().zip(&v[r.clone()]) {
                        *c += w / z * vv;
                    }
                }
            }
            add_into(&mut h, &matvec(p[&format!("layer{l}.wo")].data(), &cat));
            let x = rms_norm(&h, p[&format!("layer{l}.ffn_norm")].data());
            let u: Vec<f64> = matvec(p[&format!("layer{l}.w1")].data(), &x).into_iter().map(gelu).collect();
            add_into(&mut h, &matvec(p[&format!("layer{l}.w2")].data(), &u));
        }
        let hidden = rms_norm(&h, p["final_norm"].data());
        let logits = matvec(p["lm_head"].data(), &hidden);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Tensor(molsyn_autodiff::TensorError::NonFinite));
        }
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use molsyn_autodiff::rng::{randn, stream};

    #[test]
    fn matches_full_forward() {
        let cfg = ModelConfig::tiny(23);
        let model = Transformer::new(cfg.clone(), 5).unwrap();
        let mut ad = LoraAdapter::new(&cfg, &mut stream(1, "a")).unwrap();
        let mut rng = stream(2, "b");
        for t in ad.tensors.values_mut() {
            *t = randn(&mut rng, t.shape(), 0.2);
        }
        let tokens: Vec<u32> = (0..20).map(|i| (i * 7 % 23) as u32).collect();
        for adapter in [None, Some(&ad)] {
            let full = model.forward(&tokens, adapter).unwrap();
            let mut st = DecodeState::new(&model, adapter);
            for (i, &t) in tokens.iter().enumerate() {
                let row = st.push(t).unwrap();
                let diff = row.iter().zip(full.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-10, "position {i}: {diff}");
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let mut cfg = ModelConfig::tiny(5);
        cfg.max_seq = 3;
        let model = Transformer::new(cfg, 0).unwrap();
        let mut st = DecodeState::new(&model, None);
        for _ in 0..3 {
            st.push(1).unwrap();
        }
        assert!(matches!(st.push(1), Err(CoreError::SequenceTooLong { .. })));
        assert!(st.push(9).is_err());
    }
}
