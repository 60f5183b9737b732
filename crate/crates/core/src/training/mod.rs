pub mod bandit;
pub mod micro;
mod pipeline;
mod reinforce;
mod sft;

pub use pipeline::{
    checkpoint_path, run_pipeline, run_stage, run_stages, valid_smiles_fraction, well_formed_rate, DataPaths, Datasets,
    PipelineConfig, PipelineOutput, ReportLine, StageConfig, StageKind, StageMetrics, StageResult, TrainableSet,
};
pub use reinforce::{
    fit_draft, reinforce_grads, reinforce_step, DraftCache, sample_trajectories, trajectory_loss, RlConfig, RlOutcome, Trajectory,
};
pub use sft::{
    apply_grads, batch_grads, batch_loss, cot_example, cot_sft_step, example_loss, instruction_example, pretrain_step, sft_step,
    Example, GradSet, Optimizers, StepConfig, StepOutcome,
};
