//! The neural post-filter and its variants.

pub mod checkpoint;
pub mod conditioning;
pub mod config;
pub mod ftlstm;
pub mod network;
pub mod stage;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind};
pub use conditioning::SpeakerInputs;
pub use config::{GlobalFusion, ModelVariantConfig, OutputMode, SpeakerConfig, Stage1Target, StageConfig, Variant};
pub use network::{count_params, model_forward, Enhanced, Model, ModelInputs, ModelOutputs};
pub use stage::Stage;
