use super::Waveform;
use crate::error::{PaecError, Result};

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_gain(signal: &Waveform, other: &Waveform, target_db: f64, what: &'static str) -> Result<f64> {
    let es = signal.energy();
    let eo = other.energy();
    if es <= 0.0 || eo <= 0.0 {
        return Err(PaecError::DegenerateEnergy(what));
    }
    Ok((es / (eo * 10f64.powf(target_db / 10.0))).sqrt())
}

/// Gain `g` for the echo `y` such that `10 log10(Σs² / Σ(g·y)²)` equals
/// `target_ser_db`.
pub fn gain_for_ser(s: &Waveform, y: &Waveform, target_ser_db: f64) -> Result<f64> {
    ratio_gain(s, y, target_ser_db, "near-end speech or echo is silent")
}

/// Gain for the noise or interfering speech `v` relative to `s`.
pub fn gain_for_snr(s: &Waveform, v: &Waveform, target_snr_db: f64) -> Result<f64> {
    ratio_gain(s, v, target_snr_db, "signal or noise is silent")
}

/// Signal-to-echo ratio as `10 log10(Σs² / Σd²)` with `d` the full
/// microphone signal. Scene mixing uses the echo energy instead; see
/// [`gain_for_ser`].
pub fn compute_ser(s: &Waveform, d: &Waveform) -> Result<f64> {
    let ed = d.energy();
    if ed <= 0.0 {
        return Err(PaecError::DegenerateEnergy("microphone signal is silent"));
    }
    Ok(10.0 * (s.energy() / ed).log10())
}
