//! The optimization loop shared by stage pretraining and full-model
//! training: deterministic data order, gradient accumulation, Adam, loss log
//! and periodic checkpoints.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossSpec, LossTerms};
use crate::error::{PaecError, Result};
use crate::model::Checkpoint;
use crate::nn::{Adam, AdamConfig, Module};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: u64,
    /// Clips per update; gradients are averaged.
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossSpec,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 1,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossSpec::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(PaecError::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(PaecError::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        self.loss.validate()
    }
}

/// Where a run writes. Everything is optional so library callers can train
/// purely in memory.
#[derive(Debug, Clone, Default)]
pub struct RunIo {
    /// Checkpoint directory, replaced atomically on every save.
    pub checkpoint_dir: Option<PathBuf>,
    /// Line-delimited loss log.
    pub log_path: Option<PathBuf>,
    /// Continue from the checkpoint in `checkpoint_dir` if there is one.
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub term1: Option<f64>,
    pub term2: Option<f64>,
    pub total: f64,
}

/// Saved alongside checkpoints to resume a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RunState {
    pub step: u64,
    pub seed: u64,
}

impl RunState {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("state serializes")
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Option<Self> {
        ck.state.as_ref().and_then(|s| serde_json::from_value(s.clone()).ok())
    }
}

/// Index of the `count`-th example drawn: every epoch is a fresh
/// permutation seeded by `(seed, epoch)`.
pub fn sample_index(seed: u64, n: usize, count: u64) -> usize {
    let epoch = count / n as u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order[(count % n as u64) as usize]
}

/// Mean loss terms over a set of per-example results.
pub fn average_terms(terms: &[LossTerms]) -> LossTerms {
    let n = terms.len().max(1) as f64;
    let avg = |f: &dyn Fn(&LossTerms) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = terms.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    LossTerms {
        term1: avg(&|t| t.term1),
        term2: avg(&|t| t.term2),
        total: terms.iter().map(|t| t.total).sum::<f64>() / n,
    }
}

/// Keeps only log lines up to `step` (used when resuming).
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .map_while(|l| l.ok())
        .filter(|l| {
            serde_json::from_str::<LogEntry>(l)
                .map(|e| e.step <= step)
                .unwrap_or(false)
        })
        .collect();
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>> {
    BufReader::new(File::open(path)?)
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| PaecError::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub(crate) struct Loop<'a> {
    pub opts: &'a TrainOptions,
    pub io: &'a RunIo,
    pub n_examples: usize,
    pub trainable: &'a dyn Fn(&str) -> bool,
}

impl Loop<'_> {
    /// Runs steps `adam.step + 1 ..= opts.steps`. `step_fn` does forward and
    /// backward for one example, accumulating gradients; `snapshot` builds
    /// the checkpoint to save.
    pub fn run<M: Module>(
        &self,
        model: &mut M,
        adam: &mut Adam,
        mut step_fn: impl FnMut(&mut M, usize) -> Result<LossTerms>,
        snapshot: impl Fn(&M, &Adam) -> Checkpoint,
    ) -> Result<Vec<LogEntry>> {
        let opts = self.opts;
        let mut log_file = match &self.io.log_path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                if adam.step > 0 {
                    truncate_log(p, adam.step)?;
                    Some(fs::OpenOptions::new().create(true).append(true).open(p)?)
                } else {
                    Some(File::create(p)?)
                }
            }
            None => None,
        };
        let mut entries = Vec::new();
        let batch = opts.batch_size as u64;
        while adam.step < opts.steps {
            model.zero_grad();
            let mut terms = Vec::with_capacity(opts.batch_size);
            for b in 0..batch {
                let idx = sample_index(opts.seed, self.n_examples, adam.step * batch + b);
                terms.push(step_fn(model, idx)?);
            }
            if batch > 1 {
                let scale = 1.0 / batch as f64;
                model.visit_mut(&mut |_, p| p.grad.mapv_inplace(|g| g * scale));
            }
            let t = average_terms(&terms);
            if !t.total.is_finite() {
                return Err(PaecError::Config(format!(
                    "loss diverged at step {} (total {})",
                    adam.step + 1,
                    t.total
                )));
            }
            adam.update(model, self.trainable);
            let entry = LogEntry {
                step: adam.step,
                term1: t.term1,
                term2: t.term2,
                total: t.total,
            };
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &entry).map_err(std::io::Error::other)?;
                f.write_all(b"\n")?;
            }
            entries.push(entry);
            let due = opts.checkpoint_every > 0 && adam.step % opts.checkpoint_every == 0;
            if let Some(dir) = &self.io.checkpoint_dir {
                if due || adam.step == opts.steps {
                    crate::model::save_checkpoint(dir, &snapshot(model, adam))?;
                }
            }
        }
        if let Some(f) = log_file.as_mut() {
            f.flush()?;
        }
        Ok(entries)
    }
}

pub(crate) fn new_adam(opts: &TrainOptions) -> Adam {
    Adam::new(opts.adam)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_order_is_a_permutation_per_epoch() {
        let n = 7;
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..n as u64).map(|i| sample_index(5, n, epoch * n as u64 + i)).collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
        let a: Vec<usize> = (0..20).map(|c| sample_index(5, n, c)).collect();
        let b: Vec<usize> = (0..20).map(|c| sample_index(5, n, c)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn averaging_skips_absent_terms() {
        let t = average_terms(&[
            LossTerms { term1: None, term2: Some(1.0), total: 1.0 },
            LossTerms { term1: None, term2: Some(3.0), total: 3.0 },
        ]);
        assert_eq!(t.term1, None);
        assert_eq!(t.term2, Some(2.0));
        assert_eq!(t.total, 2.0);
    }
}
