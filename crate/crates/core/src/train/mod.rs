//! Batch composition, the training loop, metric history and checkpoints.

mod checkpoint;
mod config;
mod history;
mod sampler;
mod trainer;

pub use checkpoint::{
    load_model, model_from_checkpoint, model_to_checkpoint, read_meta, save_model, CheckpointMeta, CHECKPOINT_FORMAT,
};
pub use config::{
    GraphConfig, OptimizerConfig, Precision, PrototypeConfig, RunConfig, TeacherConfig, TrainConfig, CONFIG_VERSION,
};
pub use history::{read_history, render_history, write_history, EpochRecord};
pub use sampler::{BatchComposer, BatchPlan};
pub use trainer::{train, PreparedData, TrainOutcome, TrainedModel};
