//! Full-model training under the pretraining strategies.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{require_nonempty, Example};
use super::loss::{stage_targets, variant_loss_grad, LossSpec, LossTerms};
use super::pretrain::STAGE_PREFIX;
use super::runner::{average_terms, new_adam, LogEntry, Loop, RunIo, RunState, TrainOptions};
use crate::error::{PaecError, Result};
use crate::model::checkpoint::{assign_weights, load_checkpoint};
use crate::model::{Checkpoint, CheckpointKind, Model, ModelVariantConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Every stage from random initialization.
    Scratch,
    /// Pretrained first stage, random second stage, both trained.
    Joint,
    /// Pretrained first stage kept fixed, random second stage trained.
    JointFreeze,
    /// Both stages pretrained, both trained.
    Finetune,
    /// Both stages pretrained, only the second trained.
    FinetuneFreeze,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Scratch,
        StrategyKind::Joint,
        StrategyKind::JointFreeze,
        StrategyKind::Finetune,
        StrategyKind::FinetuneFreeze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Scratch => "scratch",
            StrategyKind::Joint => "joint",
            StrategyKind::JointFreeze => "joint_freeze",
            StrategyKind::Finetune => "finetune",
            StrategyKind::FinetuneFreeze => "finetune_freeze",
        }
    }

    pub fn freezes_stage1(self) -> bool {
        matches!(self, StrategyKind::JointFreeze | StrategyKind::FinetuneFreeze)
    }

    /// Default learning rate: pretrained starts use the smaller one.
    pub fn default_lr(self) -> f64 {
        match self {
            StrategyKind::Scratch | StrategyKind::Joint | StrategyKind::JointFreeze => 1e-3,
            StrategyKind::Finetune | StrategyKind::FinetuneFreeze => 3e-4,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = PaecError;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
            PaecError::Config(format!("unknown strategy {s:?}; valid: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStrategy {
    pub kind: StrategyKind,
    /// Pretrained first stage (stage or model checkpoint directory).
    pub stage1: Option<PathBuf>,
    /// Pretrained second stage.
    pub stage2: Option<PathBuf>,
}

impl TrainStrategy {
    pub fn scratch() -> Self {
        Self {
            kind: StrategyKind::Scratch,
            stage1: None,
            stage2: None,
        }
    }

    /// Checks that the checkpoints the strategy needs for `cfg` were given
    /// and exist, and that it loads nothing else.
    pub fn validate(&self, cfg: &ModelVariantConfig) -> Result<()> {
        let v = cfg.variant;
        let err = |m: String| Err(PaecError::Strategy(m));
        let has1 = cfg.stage1.is_some();
        let has2 = cfg.stage2.is_some();
        let (need1, need2) = match self.kind {
            StrategyKind::Scratch => (false, false),
            StrategyKind::Joint | StrategyKind::JointFreeze => {
                if !has1 || !has2 {
                    return err(format!("{} needs a two-stage variant, {v} has one stage", self.kind));
                }
                (true, false)
            }
            StrategyKind::Finetune => (has1, has2),
            StrategyKind::FinetuneFreeze => {
                if !has1 || !has2 {
                    return err(format!("{} needs a two-stage variant, {v} has one stage", self.kind));
                }
                (true, true)
            }
        };
        for (stage, need, path) in [(1, need1, &self.stage1), (2, need2, &self.stage2)] {
            match (need, path) {
                (true, None) => return err(format!("{} needs a pretrained stage-{stage} checkpoint", self.kind)),
                (true, Some(p)) if !p.is_dir() => {
                    return err(format!("pretrained stage-{stage} checkpoint {} does not exist", p.display()))
                }
                (false, Some(p)) => {
                    return err(format!(
                        "{} does not load a stage-{stage} checkpoint (got {})",
                        self.kind,
                        p.display()
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Copies the weights of a pretrained stage into stage `slot` (1 or 2) of
/// `model`. Accepts a stage checkpoint or a full-model checkpoint whose
/// stage in the same slot has the same configuration.
pub fn load_stage(model: &mut Model, slot: u8, ck: &Checkpoint) -> Result<()> {
    let want = match slot {
        1 => model.cfg.stage1.as_ref(),
        2 => model.cfg.stage2.as_ref(),
        _ => None,
    }
    .ok_or_else(|| PaecError::Strategy(format!("{} has no stage {slot}", model.variant())))?
    .clone();
    let to = format!("stage{slot}.");
    let (have, from) = match &ck.kind {
        CheckpointKind::Stage { stage, compress_p, .. } => {
            if *compress_p != model.cfg.compress_p {
                return Err(PaecError::Strategy(format!(
                    "stage checkpoint uses compression {compress_p}, model uses {}",
                    model.cfg.compress_p
                )));
            }
            (Some(stage.clone()), STAGE_PREFIX.to_string())
        }
        CheckpointKind::Model { model: m } => {
            let s = if slot == 1 { m.stage1.clone() } else { m.stage2.clone() };
            (s, to.clone())
        }
    };
    if have.as_ref() != Some(&want) {
        return Err(PaecError::Strategy(format!(
            "checkpoint stage does not match stage {slot} of {}",
            model.variant()
        )));
    }
    assign_weights(model, &ck.weights, &from, &to)?;
    Ok(())
}

fn load_stage_from(model: &mut Model, slot: u8, dir: &Path) -> Result<()> {
    let ck = load_checkpoint(dir).map_err(|e| PaecError::Strategy(format!("loading {}: {e}", dir.display())))?;
    load_stage(model, slot, &ck)
}

/// The model a strategy starts from: random weights seeded by `seed`, with
/// the pretrained stages the strategy loads.
pub fn init_model(cfg: &ModelVariantConfig, strategy: &TrainStrategy, seed: u64) -> Result<Model> {
    strategy.validate(cfg)?;
    let mut model = Model::new(cfg, seed)?;
    if let Some(p) = &strategy.stage1 {
        load_stage_from(&mut model, 1, p)?;
    }
    if let Some(p) = &strategy.stage2 {
        load_stage_from(&mut model, 2, p)?;
    }
    Ok(model)
}

/// Loss and, with `backprop`, accumulated gradients on one example.
pub fn model_step(model: &mut Model, ex: &Example, loss: &LossSpec, backprop: bool, freeze_stage1: bool) -> Result<LossTerms> {
    let targets = stage_targets(model.variant(), &ex.targets)?;
    let p = model.cfg.compress_p;
    if backprop {
        let (out, cache) = model.forward_train(&ex.inputs)?;
        let (terms, g1, g2) = variant_loss_grad(&targets, out.s1.as_ref(), out.s2.as_ref(), loss, p)?;
        model.backward(&cache, g1.as_ref(), g2.as_ref(), freeze_stage1);
        Ok(terms)
    } else {
        let out = model.forward(&ex.inputs)?;
        Ok(variant_loss_grad(&targets, out.s1.as_ref(), out.s2.as_ref(), loss, p)?.0)
    }
}

/// Mean loss terms of `model` over `examples`.
pub fn dataset_loss(model: &Model, examples: &[Example], loss: &LossSpec) -> Result<LossTerms> {
    require_nonempty(examples, "evaluation")?;
    let mut m = model.clone();
    let terms = examples
        .iter()
        .map(|ex| model_step(&mut m, ex, loss, false, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_terms(&terms))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogEntry>,
}

fn model_checkpoint(model: &Model, adam: &crate::nn::Adam, seed: u64) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.optimizer = adam.export_moments();
    ck.state = Some(RunState { step: adam.step, seed }.to_json());
    ck
}

/// Trains `cfg` under `strategy`. With a freezing strategy the first-stage
/// parameters receive no gradient and are never updated.
pub fn train(
    cfg: &ModelVariantConfig,
    strategy: &TrainStrategy,
    examples: &[Example],
    opts: &TrainOptions,
    io: &RunIo,
) -> Result<TrainOutcome> {
    opts.validate()?;
    require_nonempty(examples, "training")?;
    if cfg.variant.is_personalized() && examples.iter().any(|e| e.inputs.speaker.is_none()) {
        return Err(PaecError::Conditioning(format!("{} needs enrollment features on every clip", cfg.variant)));
    }
    let mut adam = new_adam(opts);
    let resumed = match io.checkpoint_dir.as_ref().filter(|d| io.resume && d.exists()) {
        Some(dir) => {
            let ck = load_checkpoint(dir)?;
            match &ck.kind {
                CheckpointKind::Model { model } if model == cfg => {}
                _ => {
                    return Err(PaecError::Config(format!(
                        "{} does not hold a checkpoint of this model",
                        dir.display()
                    )))
                }
            }
            let step = RunState::from_checkpoint(&ck).map_or(0, |s| s.step);
            adam.import_moments(step, &ck.optimizer);
            Some(Model::from_checkpoint(&ck)?)
        }
        None => None,
    };
    let mut model = match resumed {
        Some(m) => m,
        None => init_model(cfg, strategy, opts.seed)?,
    };
    let freeze = strategy.kind.freezes_stage1();
    let trainable = move |name: &str| !(freeze && name.starts_with("stage1."));
    let lp = Loop {
        opts,
        io,
        n_examples: examples.len(),
        trainable: &trainable,
    };
    let log = lp.run(
        &mut model,
        &mut adam,
        |m, idx| model_step(m, &examples[idx], &opts.loss, true, freeze),
        |m, a| model_checkpoint(m, a, opts.seed),
    )?;
    Ok(TrainOutcome { model, log })
}
