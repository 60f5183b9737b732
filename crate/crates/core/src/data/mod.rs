pub mod annotate;
pub mod denoise;
pub mod manifest;
mod records;
pub mod sampling;

pub use annotate::{annotate_cot, AnnotateConfig, Annotation, ChatClient, ChatConfig, HttpChatClient, MockChatClient, SkipEntry};
pub use denoise::{denoise, Denoiser, DEFAULT_ANCHORS};
pub use manifest::{validation_sample, DatasetManifest, ReviewRow};
pub use records::{read_jsonl, write_jsonl, CotFlags, CotRecord, TaskRecord};
pub use sampling::{aggregate_and_split, embed_records, reduce_2d, stratified_sample, Reducer, SamplePlan, Splits};
