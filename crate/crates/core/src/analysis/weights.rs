//! L2-norm deltas and per-layer density histograms of LoRA weights.

use std::collections::BTreeMap;
use std::path::Path;

use molsyn_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::LoraAdapter;

pub const RANGE: (f64, f64) = (-0.05, 0.05);
pub const BIN_WIDTH: f64 = 0.002;
pub const BINS: usize = 50;

pub fn l2_norm(w: &Tensor) -> f64 {
    w.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `max(‖W_s‖ − ‖W_i‖, 0)`.
pub fn l2_delta(specialist: &Tensor, init: &Tensor) -> Result<f64> {
    if specialist.shape() != init.shape() {
        return Err(CoreError::Config(format!(
            "shape mismatch: {:?} vs {:?}",
            specialist.shape(),
            init.shape()
        )));
    }
    Ok((l2_norm(specialist) - l2_norm(init)).max(0.0))
}

/// Per adapted matrix (e.g. `layer0.wq`), the clamped growth of the merged
/// update `s·BA` relative to `init`.
pub fn adapter_l2_deltas(specialist: &LoraAdapter, init: &LoraAdapter) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for t in specialist.targets() {
        let (s, i) = match (specialist.pair(&t), init.pair(&t)) {
            (Some(s), Some(i)) => (s, i),
            _ => return Err(CoreError::Config(format!("adapter target {t} missing from the reference"))),
        };
        out.insert(t, l2_delta(&s.delta()?, &i.delta()?)?);
    }
    Ok(out)
}

/// How a layer's A and B are flattened into one weight list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Entries of A followed by entries of B.
    #[default]
    Concat,
    /// Entries of `s·BA`.
    Product,
}

impl std::str::FromStr for MergeMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(MergeMode::Concat),
            "product" => Ok(MergeMode::Product),
            _ => Err(CoreError::Config(format!("merge mode must be concat or product, got {s:?}"))),
        }
    }
}

/// `layer0.wq` -> `Layer_0_q`.
fn layer_label(target: &str) -> String {
    let (layer, m) = target.split_once('.').unwrap_or((target, ""));
    let n = layer.strip_prefix("layer").unwrap_or(layer);
    format!("Layer_{n}_{}", m.strip_prefix('w').unwrap_or(m))
}

/// Flattened weights per adapted matrix, keyed by labels like `Layer_3_q`.
pub fn adapter_layer_weights(adapter: &LoraAdapter, merge: MergeMode) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for t in adapter.targets() {
        let p = adapter
            .pair(&t)
            .ok_or_else(|| CoreError::Checkpoint(format!("adapter target {t} is incomplete")))?;
        let w = match merge {
            MergeMode::Concat => p.a.data().iter().chain(p.b.data()).copied().collect(),
            MergeMode::Product => p.delta()?.into_data(),
        };
        out.insert(layer_label(&t), w);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub layer: String,
    /// Densities `n_b / (N Δb)` over in-range weights.
    pub rho: Vec<f64>,
    pub in_range: usize,
    pub out_of_range: usize,
}

impl LayerHistogram {
    pub fn bin_left(b: usize) -> f64 {
        RANGE.0 + b as f64 * BIN_WIDTH
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().map(|r| r * BIN_WIDTH).sum()
    }

    pub fn out_of_range_fraction(&self) -> f64 {
        self.out_of_range as f64 / (self.in_range + self.out_of_range) as f64
    }
}

fn bin_of(w: f64) -> Option<usize> {
    if !(RANGE.0..=RANGE.1).contains(&w) {
        return None;
    }
    Some((((w - RANGE.0) / BIN_WIDTH).floor() as usize).min(BINS - 1))
}

/// Density histogram over `RANGE`; weights outside it are counted but left
/// out of `N`.
pub fn layer_histogram(layer: &str, weights: &[f64]) -> Result<LayerHistogram> {
    let mut counts = vec![0usize; BINS];
    let mut out_of_range = 0;
    for &w in weights {
        match bin_of(w) {
            Some(b) => counts[b] += 1,
            None => out_of_range += 1,
        }
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(CoreError::Data(format!("layer {layer} has no weights in range")));
    }
    Ok(LayerHistogram {
        layer: layer.to_string(),
        rho: counts.iter().map(|&c| c as f64 / (n as f64 * BIN_WIDTH)).collect(),
        in_range: n,
        out_of_range,
    })
}

pub fn adapter_histograms(adapter: &LoraAdapter, merge: MergeMode) -> Result<Vec<LayerHistogram>> {
    adapter_layer_weights(adapter, merge)?
        .iter()
        .map(|(l, w)| layer_histogram(l, w))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityDiff {
    pub layers: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    /// `raw` divided by its largest magnitude, so the extreme cell is ±1.
    pub normalized: Vec<Vec<f64>>,
}

/// `ρ_specialist − ρ_reference` per layer and bin.
pub fn density_diff(specialist: &[LayerHistogram], reference: &[LayerHistogram]) -> Result<DensityDiff> {
    if specialist.len() != reference.len() {
        return Err(CoreError::Config("histogram sets have different layer counts".into()));
    }
    let mut layers = Vec::new();
    let mut raw = Vec::new();
    for (s, r) in specialist.iter().zip(reference) {
        if s.layer != r.layer || s.rho.len() != r.rho.len() {
            return Err(CoreError::Config(format!("layer grids differ: {} vs {}", s.layer, r.layer)));
        }
        layers.push(s.layer.clone());
        raw.push(s.rho.iter().zip(&r.rho).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let peak = raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let normalized = raw
        .iter()
        .map(|row| row.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect())
        .collect();
    Ok(DensityDiff { layers, raw, normalized })
}

#[derive(Serialize)]
struct HistRow<'a> {
    specialist: &'a str,
    layer: &'a str,
    bin_left: f64,
    rho: f64,
    delta_rho: f64,
}

/// One row per specialist, layer and bin. `delta_rho` is the normalized
/// difference against the reference specialist.
pub fn write_histograms_csv(path: &Path, rows: &[(String, Vec<LayerHistogram>, DensityDiff)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (name, hists, diff) in rows {
        for (h, d) in hists.iter().zip(&diff.normalized) {
            for (b, (&rho, &delta_rho)) in h.rho.iter().zip(d).enumerate() {
                w.serialize(HistRow {
                    specialist: name,
                    layer: &h.layer,
                    bin_left: LayerHistogram::bin_left(b),
                    rho,
                    delta_rho,
                })?;
            }
        }
    }
    w.flush().map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}
