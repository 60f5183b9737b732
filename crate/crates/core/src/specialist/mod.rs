pub mod format;
mod layer;
mod router;
mod task;

pub use layer::{
    adapter_name, paired_inference, Decoder, ModelDecoder, PairedOutput, Phase, SpecialistGroup, SpecialistLayer,
};
pub use router::{task_of, RouteWeights, Router, RouterMode};
pub use task::{assign_group, GroupId, OutputFormat, TaskKind};
