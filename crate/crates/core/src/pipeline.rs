//! The full signal path: delay estimation and alignment of the far-end
//! reference, subband NLMS, then the neural post-filter.

use crate::dsp::{align_reference, estimate_delay_with, nlms_run, DelayEstimate, DspConfig};
use crate::error::Result;
use crate::model::{model_forward, Enhanced, Model, SpeakerInputs};
use crate::signal::Waveform;

#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub delay: DelayEstimate,
    pub aligned_ref: Waveform,
    /// Linear echo estimate.
    pub y_lin: Waveform,
    /// Error signal, `mic - y_lin`.
    pub e: Waveform,
}

/// Runs the linear stage. A reference of different length is cut or
/// zero-padded to the microphone length first.
pub fn run_frontend(mic: &Waveform, reference: &Waveform, cfg: &DspConfig) -> Result<FrontEnd> {
    let reference = reference.fit_to(mic.len());
    let delay = estimate_delay_with(mic, &reference, cfg)?;
    let aligned_ref = align_reference(&reference, &delay);
    let out = nlms_run(mic, &aligned_ref, cfg)?;
    Ok(FrontEnd {
        delay,
        aligned_ref,
        y_lin: out.y_lin,
        e: out.e,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub frontend: FrontEnd,
    pub enhanced: Enhanced,
}

pub fn run_pipeline(
    model: &Model,
    mic: &Waveform,
    reference: &Waveform,
    speaker: Option<SpeakerInputs>,
    cfg: &DspConfig,
) -> Result<PipelineOutput> {
    let frontend = run_frontend(mic, reference, cfg)?;
    let enhanced = model_forward(model, mic, &frontend.e, &frontend.y_lin, speaker)?;
    Ok(PipelineOutput { frontend, enhanced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelVariantConfig, Variant};
    use crate::signal::frame_count;

    #[test]
    fn output_covers_full_frames() {
        let n = 16_000 + 77;
        let mic = Waveform::from_samples((0..n).map(|i| (i as f64 * 0.01).sin() * 0.1).collect());
        let reference = Waveform::from_samples((0..n).map(|i| (i as f64 * 0.013).cos() * 0.1).collect());
        let model = Model::new(&ModelVariantConfig::toy(Variant::GftnnAec), 1).unwrap();
        let out = run_pipeline(&model, &mic, &reference, None, &DspConfig::default()).unwrap();
        let frames = frame_count(n);
        assert_eq!(out.enhanced.s_hat.len(), (frames - 1) * 160 + 320);
        let recon: Vec<f64> = out
            .frontend
            .e
            .samples
            .iter()
            .zip(&out.frontend.y_lin.samples)
            .map(|(a, b)| a + b)
            .collect();
        for (a, b) in recon.iter().zip(&mic.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
