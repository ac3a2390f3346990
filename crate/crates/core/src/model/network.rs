use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conditioning::SpeakerInputs;
use super::config::{ModelVariantConfig, Variant};
use super::stage::{channel_pair, stack_channels, Stage, StageCache};
use crate::error::{PaecError, Result};
use crate::nn::param::{visit_scoped, visit_scoped_mut};
use crate::nn::{Module, Param};
use crate::signal::{istft, power_compress, power_decompress, stft_default, CompressedSpectrogram, Spectrogram, Waveform};
use crate::speaker::{compute_fbank_stats, ProviderEmbedding};

/// Compressed spectra of the front-end signals, `(frames, bins)` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub d: Array2<Complex64>,
    pub e: Array2<Complex64>,
    /// Linear echo estimate from the adaptive filter.
    pub y_lin: Array2<Complex64>,
    pub speaker: Option<SpeakerInputs>,
}

impl ModelInputs {
    pub fn frames(&self) -> usize {
        self.d.nrows()
    }

    fn check(&self) -> Result<()> {
        if self.e.dim() != self.d.dim() || self.y_lin.dim() != self.d.dim() {
            return Err(PaecError::shape(format!(
                "input spectra differ in shape: d {:?}, e {:?}, y {:?}",
                self.d.dim(),
                self.e.dim(),
                self.y_lin.dim()
            )));
        }
        Ok(())
    }
}

/// Compressed stage outputs. `s1` is the first-stage estimate (echo for
/// TDPF-2, speech plus interference for TDPF-3, unconstrained for TDPF-1).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    pub s1: Option<Array2<Complex64>>,
    pub s2: Option<Array2<Complex64>>,
}

impl ModelOutputs {
    /// The model's final estimate.
    pub fn final_output(&self) -> &Array2<Complex64> {
        self.s2.as_ref().or(self.s1.as_ref()).expect("at least one stage")
    }
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    s1: Option<StageCache>,
    s2: Option<StageCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelVariantConfig,
    pub stage1: Option<Stage>,
    pub stage2: Option<Stage>,
}

impl Model {
    pub fn new(cfg: &ModelVariantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stage1 = cfg.stage1.as_ref().map(|c| Stage::new(c, &mut rng)).transpose()?;
        let stage2 = cfg.stage2.as_ref().map(|c| Stage::new(c, &mut rng)).transpose()?;
        Ok(Self {
            cfg: cfg.clone(),
            stage1,
            stage2,
        })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn forward(&self, inp: &ModelInputs) -> Result<ModelOutputs> {
        Ok(self.run(inp, false)?.0)
    }

    pub fn forward_train(&self, inp: &ModelInputs) -> Result<(ModelOutputs, ModelCache)> {
        let (o, c) = self.run(inp, true)?;
        Ok((o, c.expect("train mode keeps caches")))
    }

    fn run(&self, inp: &ModelInputs, train: bool) -> Result<(ModelOutputs, Option<ModelCache>)> {
        inp.check()?;
        if self.variant().is_personalized() && inp.speaker.is_none() {
            return Err(PaecError::Conditioning(format!(
                "{} is personalized and needs an enrollment",
                self.variant()
            )));
        }
        let (s1, c1) = match &self.stage1 {
            Some(st) => {
                let x = stack_channels(&[&inp.d, &inp.e, &inp.y_lin]);
                let (o, c) = st.forward(x.view(), None, train)?;
                (Some(o), c)
            }
            None => (None, None),
        };
        let (s2, c2) = match &self.stage2 {
            Some(st) => {
                let third = s1.as_ref().unwrap_or(&inp.y_lin);
                let x = stack_channels(&[&inp.d, &inp.e, third]);
                let (o, c) = st.forward(x.view(), inp.speaker.as_ref(), train)?;
                (Some(o), c)
            }
            None => (None, None),
        };
        let cache = train.then_some(ModelCache { s1: c1, s2: c2 });
        Ok((ModelOutputs { s1, s2 }, cache))
    }

    /// Accumulates gradients for the given output gradients. With
    /// `freeze_stage1` nothing is propagated into the first stage, so its
    /// gradients stay exactly as they were.
    pub fn backward(
        &mut self,
        cache: &ModelCache,
        g1: Option<&Array2<Complex64>>,
        g2: Option<&Array2<Complex64>>,
        freeze_stage1: bool,
    ) {
        let mut g1_total = g1.cloned();
        if let (Some(st), Some(c), Some(g)) = (self.stage2.as_mut(), cache.s2.as_ref(), g2) {
            let dx = st.backward(c, g);
            if self.stage1.is_some() {
                let via_s2 = channel_pair(dx.view(), 4);
                g1_total = Some(match g1_total {
                    Some(g) => g + via_s2,
                    None => via_s2,
                });
            }
        }
        if freeze_stage1 {
            return;
        }
        if let (Some(st), Some(c), Some(g)) = (self.stage1.as_mut(), cache.s1.as_ref(), g1_total) {
            st.backward(c, &g);
        }
    }
}

impl Module for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_scoped(&self.stage1, "stage1", f);
        visit_scoped(&self.stage2, "stage2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_scoped_mut(&mut self.stage1, "stage1", f);
        visit_scoped_mut(&mut self.stage2, "stage2", f);
    }
}

/// Exact trainable-parameter count of a configuration.
pub fn count_params(cfg: &ModelVariantConfig) -> Result<usize> {
    Ok(Model::new(cfg, 0)?.param_count())
}

pub fn compress_bins(spec: &Spectrogram, p: f64) -> Result<Array2<Complex64>> {
    Ok(power_compress(spec, p)?.spec.bins)
}

pub fn decompress_bins(bins: &Array2<Complex64>, p: f64) -> Result<Spectrogram> {
    power_decompress(&CompressedSpectrogram {
        spec: Spectrogram::from_bins(bins.clone()),
        p,
    })
}

impl SpeakerInputs {
    /// Enrollment features: compressed spectrum, FBank statistics and the
    /// provider embedding.
    pub fn from_enrollment(enrollment: &Waveform, embedding: &ProviderEmbedding, p: f64) -> Result<Self> {
        let spec = compress_bins(&stft_default(enrollment)?, p)?;
        let enroll = stack_channels(&[&spec]);
        Ok(Self {
            enroll,
            fbank: Array1::from(compute_fbank_stats(enrollment)?.0),
            embedding: Array1::from(embedding.as_slice().to_vec()),
        })
    }
}

impl ModelInputs {
    pub fn from_waveforms(d: &Waveform, e: &Waveform, y_lin: &Waveform, p: f64, speaker: Option<SpeakerInputs>) -> Result<Self> {
        Ok(Self {
            d: compress_bins(&stft_default(d)?, p)?,
            e: compress_bins(&stft_default(e)?, p)?,
            y_lin: compress_bins(&stft_default(y_lin)?, p)?,
            speaker,
        })
    }
}

/// Time-domain result of a model run.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub s_hat: Waveform,
    /// Uncompressed stage outputs.
    pub s1: Option<Spectrogram>,
    pub s2: Option<Spectrogram>,
}

/// Runs the post-filter on front-end waveforms. The output covers every
/// full analysis frame of the input.
pub fn model_forward(
    model: &Model,
    d: &Waveform,
    e: &Waveform,
    y_lin: &Waveform,
    speaker: Option<SpeakerInputs>,
) -> Result<Enhanced> {
    let p = model.cfg.compress_p;
    let speaker = if model.variant().is_personalized() { speaker } else { None };
    let inp = ModelInputs::from_waveforms(d, e, y_lin, p, speaker)?;
    let out = model.forward(&inp)?;
    let s1 = out.s1.as_ref().map(|b| decompress_bins(b, p)).transpose()?;
    let s2 = out.s2.as_ref().map(|b| decompress_bins(b, p)).transpose()?;
    let s_hat = istft(&decompress_bins(out.final_output(), p)?)?;
    Ok(Enhanced { s_hat, s1, s2 })
}

