//! Pretraining of a single stage on its own task.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{compress_grid, require_nonempty, Example};
use super::loss::{plcpa_grad_compressed, LossSpec, LossTerms};
use super::runner::{new_adam, LogEntry, Loop, RunIo, RunState, TrainOptions};
use crate::error::{PaecError, Result};
use crate::model::checkpoint::{assign_weights, collect_weights, load_checkpoint};
use crate::model::stage::stack_channels;
use crate::model::{Checkpoint, CheckpointKind, ModelVariantConfig, OutputMode, Stage, Stage1Target, StageConfig, Variant};

/// Weight-path prefix of a stage checkpoint.
pub const STAGE_PREFIX: &str = "stage.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainTask {
    /// Map to the echo `y`; trained on clips with echo.
    EchoMap,
    /// Mask to speech plus interference `s + z`.
    AecNs,
    /// Speaker-conditioned extraction of `s`; trained on echo-free clips.
    Pse,
}

impl PretrainTask {
    pub const ALL: [PretrainTask; 3] = [PretrainTask::EchoMap, PretrainTask::AecNs, PretrainTask::Pse];

    pub fn name(self) -> &'static str {
        match self {
            PretrainTask::EchoMap => "echo_map",
            PretrainTask::AecNs => "aec_ns",
            PretrainTask::Pse => "pse",
        }
    }

    fn accepts(self, ex: &Example) -> bool {
        match self {
            PretrainTask::EchoMap => ex.scenario.has_echo(),
            PretrainTask::AecNs => true,
            PretrainTask::Pse => !ex.scenario.has_echo(),
        }
    }
}

impl fmt::Display for PretrainTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretrainTask {
    type Err = PaecError;

    fn from_str(s: &str) -> Result<Self> {
        PretrainTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| PaecError::Config(format!("unknown task {s:?}; valid: echo_map, aec_ns, pse")))
    }
}

/// What to pretrain.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSpec {
    pub task: PretrainTask,
    pub stage: StageConfig,
    pub compress_p: f64,
    /// For the pse task, the third input signal: the first-stage target of
    /// the variant the stage will be loaded into (an oracle first stage), or
    /// the linear echo estimate when `None`.
    pub pse_oracle: Option<Stage1Target>,
}

impl PretrainSpec {
    /// The stage of `model` that `task` pretrains.
    pub fn for_variant(model: &ModelVariantConfig, task: PretrainTask) -> Result<Self> {
        let v = model.variant;
        let stage = match task {
            PretrainTask::EchoMap if v == Variant::Tdpf2 => model.stage1.clone(),
            PretrainTask::AecNs if matches!(v, Variant::Tdpf3 | Variant::GftnnAec) => model.stage1.clone(),
            PretrainTask::Pse => model.stage2.clone(),
            _ => None,
        }
        .ok_or_else(|| PaecError::Config(format!("{v} has no stage trained by the {task} task")))?;
        Ok(Self {
            task,
            stage,
            compress_p: model.compress_p,
            pse_oracle: if task == PretrainTask::Pse { v.stage1_target() } else { None },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.stage.validate()?;
        let (mode, speaker) = match self.task {
            PretrainTask::EchoMap => (OutputMode::Map, false),
            PretrainTask::AecNs => (OutputMode::Mask, false),
            PretrainTask::Pse => (OutputMode::Mask, true),
        };
        if self.stage.output_mode != mode || self.stage.speaker.is_some() != speaker {
            return Err(PaecError::Config(format!(
                "the {} task needs a stage with {mode:?} output{}",
                self.task,
                if speaker { " and speaker conditioning" } else { " and no speaker conditioning" }
            )));
        }
        Ok(())
    }

    fn target(&self, ex: &Example) -> Result<Array2<Complex64>> {
        let t = &ex.targets;
        let get = |o: &Option<Array2<Complex64>>, name: &str| {
            o.clone()
                .ok_or_else(|| PaecError::Target(format!("clip {} lacks the {name} component", ex.id)))
        };
        match self.task {
            PretrainTask::EchoMap => get(&t.y, "y"),
            PretrainTask::AecNs => Ok(get(&t.s, "s")? + get(&t.z, "z")?),
            PretrainTask::Pse => get(&t.s, "s"),
        }
    }

    fn input(&self, ex: &Example) -> Result<ndarray::Array3<f64>> {
        let i = &ex.inputs;
        let third = match (self.task, self.pse_oracle) {
            (PretrainTask::Pse, Some(Stage1Target::Echo)) => compress_grid(
                ex.targets.y.as_ref().ok_or_else(|| PaecError::Target("oracle needs y".into()))?,
                self.compress_p,
            )?,
            (PretrainTask::Pse, Some(Stage1Target::SpeechPlusInterference)) => {
                let (s, z) = (ex.targets.s.as_ref(), ex.targets.z.as_ref());
                let (Some(s), Some(z)) = (s, z) else {
                    return Err(PaecError::Target("oracle needs s and z".into()));
                };
                compress_grid(&(s + z), self.compress_p)?
            }
            _ => i.y_lin.clone(),
        };
        Ok(stack_channels(&[&i.d, &i.e, &third]))
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub stage: Stage,
    pub log: Vec<LogEntry>,
}

impl PretrainOutcome {
    pub fn checkpoint(&self, spec: &PretrainSpec) -> Checkpoint {
        stage_checkpoint(&self.stage, spec, None)
    }
}

fn stage_checkpoint(stage: &Stage, spec: &PretrainSpec, extra: Option<(&crate::nn::Adam, u64)>) -> Checkpoint {
    Checkpoint {
        kind: CheckpointKind::Stage {
            task: spec.task.name().to_string(),
            compress_p: spec.compress_p,
            stage: spec.stage.clone(),
        },
        weights: collect_weights(stage, STAGE_PREFIX),
        optimizer: extra.map(|(a, _)| a.export_moments()).unwrap_or_default(),
        state: extra.map(|(a, seed)| RunState { step: a.step, seed }.to_json()),
    }
}

/// Examples usable by the task.
pub fn task_examples<'a>(task: PretrainTask, examples: &'a [Example]) -> Vec<&'a Example> {
    examples.iter().filter(|e| task.accepts(e)).collect()
}

/// Loss and, with `backprop`, accumulated gradients of `stage` on one example.
fn stage_step(stage: &mut Stage, spec: &PretrainSpec, ex: &Example, loss: &LossSpec, backprop: bool) -> Result<f64> {
    let x = spec.input(ex)?;
    let target = spec.target(ex)?;
    let (out, cache) = stage.forward(x.view(), ex.inputs.speaker.as_ref(), backprop)?;
    let (l, g) = plcpa_grad_compressed(&target, &out, loss, spec.compress_p)?;
    if let Some(c) = cache {
        stage.backward(&c, &g);
    }
    Ok(l)
}

/// Mean task loss of `stage` over the usable examples.
pub fn stage_loss(stage: &Stage, spec: &PretrainSpec, examples: &[Example], loss: &LossSpec) -> Result<f64> {
    let usable = task_examples(spec.task, examples);
    require_nonempty_refs(&usable, spec.task)?;
    let mut st = stage.clone();
    let mut sum = 0.0;
    for ex in &usable {
        sum += stage_step(&mut st, spec, ex, loss, false)?;
    }
    Ok(sum / usable.len() as f64)
}

fn require_nonempty_refs(usable: &[&Example], task: PretrainTask) -> Result<()> {
    if usable.is_empty() {
        return Err(PaecError::Config(format!(
            "the dataset has no clips usable by the {task} task{}",
            match task {
                PretrainTask::EchoMap => " (it needs clips with echo)",
                PretrainTask::Pse => " (it needs echo-free clips)",
                PretrainTask::AecNs => "",
            }
        )));
    }
    Ok(())
}

/// Fresh stage with the weights of a stage checkpoint.
pub fn stage_from_checkpoint(ck: &Checkpoint) -> Result<Stage> {
    let CheckpointKind::Stage { stage, .. } = &ck.kind else {
        return Err(PaecError::Config("checkpoint holds a full model, not a stage".into()));
    };
    let mut s = Stage::new(stage, &mut ChaCha8Rng::seed_from_u64(0))?;
    assign_weights(&mut s, &ck.weights, STAGE_PREFIX, "")?;
    Ok(s)
}

/// Trains one stage on its task. Deterministic for fixed options and data.
pub fn pretrain_stage(spec: &PretrainSpec, examples: &[Example], opts: &TrainOptions, io: &RunIo) -> Result<PretrainOutcome> {
    spec.validate()?;
    opts.validate()?;
    require_nonempty(examples, spec.task.name())?;
    let usable = task_examples(spec.task, examples);
    require_nonempty_refs(&usable, spec.task)?;
    if spec.task == PretrainTask::Pse && usable.iter().any(|e| e.inputs.speaker.is_none()) {
        return Err(PaecError::Conditioning("pse pretraining needs enrollment features on every clip".into()));
    }

    let mut adam = new_adam(opts);
    let mut stage = Stage::new(&spec.stage, &mut ChaCha8Rng::seed_from_u64(opts.seed))?;
    if io.resume {
        if let Some(dir) = io.checkpoint_dir.as_ref().filter(|d| d.exists()) {
            let ck = load_checkpoint(dir)?;
            match &ck.kind {
                CheckpointKind::Stage { stage: cfg, task, .. } if *cfg == spec.stage && task == spec.task.name() => {}
                _ => {
                    return Err(PaecError::Config(format!(
                        "{} does not hold a {} checkpoint of this stage",
                        dir.display(),
                        spec.task
                    )))
                }
            }
            stage = stage_from_checkpoint(&ck)?;
            let step = RunState::from_checkpoint(&ck).map_or(0, |s| s.step);
            adam.import_moments(step, &ck.optimizer);
        }
    }
    let all = |_: &str| true;
    let lp = Loop {
        opts,
        io,
        n_examples: usable.len(),
        trainable: &all,
    };
    let log = lp.run(
        &mut stage,
        &mut adam,
        |st, idx| {
            let l = stage_step(st, spec, usable[idx], &opts.loss, true)?;
            Ok(LossTerms {
                term1: Some(l),
                term2: None,
                total: l,
            })
        },
        |st, a| stage_checkpoint(st, spec, Some((a, opts.seed))),
    )?;
    Ok(PretrainOutcome { stage, log })
}
