//! Per-scenario evaluation in the layout of the comparison table: ERLE on
//! far-end single talk, quality scores on double talk and near-end single
//! talk, SI-SNR on near-end single talk.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::dsp::DspConfig;
use crate::error::{PaecError, Result};
use crate::metrics::{erle, si_snr, ScoreHook};
use crate::model::{Model, SpeakerInputs};
use crate::nn::Module;
use crate::pipeline::run_pipeline;
use crate::signal::wav::write_wav_f32;
use crate::signal::Waveform;
use crate::speaker::{embed_speaker, EmbeddingProvider};
use crate::synth::{Scenario, ScenarioClip};

/// Anything that turns a clip into an enhanced waveform.
pub trait Enhancer: Sync {
    fn name(&self) -> String;
    /// Parameter count in millions, if it is a network.
    fn params_m(&self) -> Option<f64> {
        None
    }
    fn enhance(&self, clip: &ScenarioClip, ctx: &EvalContext) -> Result<Waveform>;
}

/// Passes the microphone signal through; the "input" row.
pub struct Identity;

impl Enhancer for Identity {
    fn name(&self) -> String {
        "identity".into()
    }
    fn enhance(&self, clip: &ScenarioClip, _: &EvalContext) -> Result<Waveform> {
        Ok(clip.d.clone())
    }
}

/// Returns the clean near-end speech.
pub struct Oracle;

impl Enhancer for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn enhance(&self, clip: &ScenarioClip, _: &EvalContext) -> Result<Waveform> {
        Ok(clip.s.clone())
    }
}

/// Linear front-end followed by a trained post-filter.
pub struct Neural {
    pub name: String,
    pub model: Model,
}

impl Enhancer for Neural {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn params_m(&self) -> Option<f64> {
        Some(self.model.param_count() as f64 / 1e6)
    }
    fn enhance(&self, clip: &ScenarioClip, ctx: &EvalContext) -> Result<Waveform> {
        let speaker = if self.model.variant().is_personalized() {
            let emb = embed_speaker(&clip.enrollment, Some(&clip.spec.near_speaker), ctx.provider)?;
            Some(SpeakerInputs::from_enrollment(&clip.enrollment, &emb, self.model.cfg.compress_p)?)
        } else {
            None
        };
        Ok(run_pipeline(&self.model, &clip.d, &clip.far, speaker, &ctx.dsp)?.enhanced.s_hat)
    }
}

pub struct EvalContext<'a> {
    pub dsp: DspConfig,
    pub provider: &'a dyn EmbeddingProvider,
    /// External quality scorer and the directory for its temporary files.
    pub scorer: Option<(ScoreHook, PathBuf)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClipScores {
    pub id: String,
    pub scenario: Option<Scenario>,
    pub erle_db: Option<f64>,
    pub si_snr_db: Option<f64>,
    pub quality: Option<f64>,
}

/// Mean of one metric over the clips of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub scenario: Scenario,
    pub metric: &'static str,
    /// False when the metric needs an external scorer that is not configured.
    pub available: bool,
    pub mean: Option<f64>,
    pub clips: usize,
    pub skipped: usize,
}

impl MetricSummary {
    fn cell(&self) -> String {
        match self.mean {
            Some(m) if self.available => format!("{m:.3}"),
            _ => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub system: String,
    pub params_m: Option<f64>,
    pub fest_erle: MetricSummary,
    pub dt_quality: MetricSummary,
    pub nest_quality: MetricSummary,
    pub nest_si_snr: MetricSummary,
    pub per_clip: Vec<ClipScores>,
}

impl EvalRow {
    fn metrics(&self) -> [&MetricSummary; 4] {
        [&self.fest_erle, &self.dt_quality, &self.nest_quality, &self.nest_si_snr]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

const HEADER: [&str; 4] = ["ST-FE ERLE (dB)", "DT PESQ", "ST-NE PESQ", "ST-NE SI-SNR (dB)"];

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "system,params_m,fest_erle_db,fest_erle_clips,dt_pesq,dt_pesq_clips,nest_pesq,nest_pesq_clips,nest_si_snr_db,nest_si_snr_clips\n",
        );
        for r in &self.rows {
            let params = r.params_m.map_or("n/a".into(), |p| format!("{p:.3}"));
            let cells: Vec<String> = r.metrics().iter().map(|m| format!("{},{}", m.cell(), m.clips)).collect();
            let _ = writeln!(out, "{},{params},{}", r.system, cells.join(","));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table for the terminal.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:width$}  {:>9}", "system", "Para. (M)");
        for h in HEADER {
            let _ = write!(out, "  {h:>18}");
        }
        out.push('\n');
        for r in &self.rows {
            let params = r.params_m.map_or("-".into(), |p| format!("{p:.2}"));
            let _ = write!(out, "{:width$}  {params:>9}", r.system);
            for m in r.metrics() {
                let _ = write!(out, "  {:>18}", format!("{} ({})", m.cell(), m.clips));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&csv, self.to_csv())?;
        fs::write(&json, self.to_json())?;
        Ok((csv, json))
    }
}

fn trimmed<'a>(a: &'a Waveform, b: &'a Waveform) -> (&'a [f64], &'a [f64]) {
    let n = a.len().min(b.len());
    (&a.samples[..n], &b.samples[..n])
}

fn score_clip(system: &dyn Enhancer, clip: &ScenarioClip, ctx: &EvalContext) -> ClipScores {
    let id = &clip.spec.id;
    let scenario = clip.spec.scenario;
    let mut scores = ClipScores {
        id: id.clone(),
        scenario: Some(scenario),
        ..ClipScores::default()
    };
    let out = match system.enhance(clip, ctx) {
        Ok(w) => w,
        Err(e) => {
            warn!("{}: clip {id} skipped: {e}", system.name());
            return scores;
        }
    };
    let note = |metric: &str, e: PaecError| warn!("{}: clip {id}: {metric} skipped: {e}", system.name());
    match scenario {
        Scenario::Fest => {
            let (d, o) = trimmed(&clip.d, &out);
            scores.erle_db = erle(d, o).map_err(|e| note("ERLE", e)).ok();
        }
        Scenario::Nest => {
            let (o, s) = trimmed(&out, &clip.s);
            scores.si_snr_db = si_snr(o, s).map_err(|e| note("SI-SNR", e)).ok();
        }
        Scenario::Dt => {}
    }
    if let (Some((hook, dir)), Scenario::Dt | Scenario::Nest) = (&ctx.scorer, scenario) {
        scores.quality = run_scorer(hook, dir, &system.name(), clip, &out)
            .map_err(|e| note("quality score", e))
            .ok();
    }
    scores
}

fn run_scorer(hook: &ScoreHook, dir: &Path, system: &str, clip: &ScenarioClip, out: &Waveform) -> Result<f64> {
    fs::create_dir_all(dir)?;
    let tag: String = format!("{system}_{}", clip.spec.id)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let (o, s) = trimmed(out, &clip.s);
    let reference = dir.join(format!("{tag}_ref.wav"));
    let degraded = dir.join(format!("{tag}_deg.wav"));
    write_wav_f32(&reference, &Waveform::from_samples(s.to_vec()))?;
    write_wav_f32(&degraded, &Waveform::from_samples(o.to_vec()))?;
    let score = hook.score(&reference, &degraded);
    let _ = fs::remove_file(&reference);
    let _ = fs::remove_file(&degraded);
    score
}

fn summarize(scores: &[ClipScores], scenario: Scenario, metric: &'static str, available: bool, get: fn(&ClipScores) -> Option<f64>) -> MetricSummary {
    let of_scenario: Vec<&ClipScores> = scores.iter().filter(|c| c.scenario == Some(scenario)).collect();
    let vals: Vec<f64> = of_scenario.iter().filter_map(|c| get(c)).collect();
    MetricSummary {
        scenario,
        metric,
        available,
        mean: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
        clips: if available { vals.len() } else { 0 },
        skipped: if available { of_scenario.len() - vals.len() } else { 0 },
    }
}

/// Scores every system on every clip. Clips whose metric cannot be computed
/// are skipped with a warning and left out of the counts.
pub fn evaluate(systems: &[&dyn Enhancer], clips: &[ScenarioClip], ctx: &EvalContext) -> EvalReport {
    let has_scorer = ctx.scorer.is_some();
    let rows = systems
        .iter()
        .map(|sys| {
            let per_clip: Vec<ClipScores> = clips.par_iter().map(|c| score_clip(*sys, c, ctx)).collect();
            EvalRow {
                system: sys.name(),
                params_m: sys.params_m(),
                fest_erle: summarize(&per_clip, Scenario::Fest, "erle_db", true, |c| c.erle_db),
                dt_quality: summarize(&per_clip, Scenario::Dt, "pesq", has_scorer, |c| c.quality),
                nest_quality: summarize(&per_clip, Scenario::Nest, "pesq", has_scorer, |c| c.quality),
                nest_si_snr: summarize(&per_clip, Scenario::Nest, "si_snr_db", true, |c| c.si_snr_db),
                per_clip,
            }
        })
        .collect();
    EvalReport { rows }
}
