//! Training examples: front-end outputs, speaker inputs and clean targets of
//! one clip, ready for the network.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use super::loss::TargetSpectra;
use crate::dsp::DspConfig;
use crate::error::{PaecError, Result};
use crate::model::{ModelInputs, SpeakerInputs};
use crate::pipeline::run_frontend;
use crate::signal::{power_compress, Spectrogram};
use crate::speaker::{embed_speaker, EmbeddingProvider};
use crate::synth::{manifest_root, read_manifest, Scenario, ScenarioClip};

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub scenario: Scenario,
    pub inputs: ModelInputs,
    /// Uncompressed clean components.
    pub targets: TargetSpectra,
}

#[derive(Debug, Clone)]
pub struct ExampleOptions {
    pub dsp: DspConfig,
    pub compress_p: f64,
    /// Compute enrollment features for speaker-conditioned stages.
    pub with_speaker: bool,
}

impl Default for ExampleOptions {
    fn default() -> Self {
        Self {
            dsp: DspConfig::default(),
            compress_p: 0.5,
            with_speaker: true,
        }
    }
}

pub fn build_example(clip: &ScenarioClip, provider: &dyn EmbeddingProvider, opts: &ExampleOptions) -> Result<Example> {
    let fe = run_frontend(&clip.d, &clip.far, &opts.dsp)?;
    let speaker = if opts.with_speaker {
        let emb = embed_speaker(&clip.enrollment, Some(&clip.spec.near_speaker), provider)?;
        Some(SpeakerInputs::from_enrollment(&clip.enrollment, &emb, opts.compress_p)?)
    } else {
        None
    };
    let inputs = ModelInputs::from_waveforms(&clip.d, &fe.e, &fe.y_lin, opts.compress_p, speaker)?;
    let targets = TargetSpectra::from_waveforms(Some(&clip.s), Some(&clip.y), Some(&clip.z))?;
    Ok(Example {
        id: clip.spec.id.clone(),
        scenario: clip.spec.scenario,
        inputs,
        targets,
    })
}

/// Loads every clip of a manifest. Relative audio paths resolve against the
/// manifest's directory.
pub fn load_examples(manifest: &Path, provider: &dyn EmbeddingProvider, opts: &ExampleOptions) -> Result<Vec<Example>> {
    let root = manifest_root(manifest);
    read_manifest(manifest)?
        .iter()
        .map(|rec| build_example(&rec.load(&root)?, provider, opts))
        .collect()
}

/// Magnitude compression of a bare grid.
pub fn compress_grid(bins: &Array2<Complex64>, p: f64) -> Result<Array2<Complex64>> {
    Ok(power_compress(&Spectrogram::from_bins(bins.clone()), p)?.spec.bins)
}

pub(crate) fn require_nonempty(examples: &[Example], what: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(PaecError::Config(format!("{what}: no usable training examples")));
    }
    Ok(())
}
