//! Specialist-evolution and reasoning-chain analysis.

pub mod chains;
pub mod projection;
pub mod weights;

pub use chains::{chain_distribution, segment_steps, write_chains_csv, ChainTaxonomy, StepLabel, OTHER_LABEL};
pub use projection::{dispersion, project_embeddings, project_representations, Projection};
pub use weights::{
    adapter_histograms, adapter_l2_deltas, adapter_layer_weights, density_diff, l2_delta, l2_norm, layer_histogram,
    write_histograms_csv, DensityDiff, LayerHistogram, MergeMode, BINS, BIN_WIDTH, RANGE,
};
