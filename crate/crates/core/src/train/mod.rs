//! Losses, stage pretraining and full-model training strategies.

pub mod data;
pub mod loss;
pub mod pretrain;
pub mod runner;
pub mod strategy;

pub use data::{build_example, load_examples, Example, ExampleOptions};
pub use loss::{plcpa_loss, variant_loss, LossSpec, LossTerms, StageSpectra, TargetSpectra};
pub use pretrain::{pretrain_stage, stage_from_checkpoint, stage_loss, PretrainOutcome, PretrainSpec, PretrainTask};
pub use runner::{read_log, LogEntry, RunIo, TrainOptions};
pub use strategy::{dataset_loss, init_model, load_stage, train, StrategyKind, TrainOutcome, TrainStrategy};

#[cfg(test)]
mod tests;
