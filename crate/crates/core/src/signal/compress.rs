use num_complex::Complex64;

use super::Spectrogram;
use crate::error::{PaecError, Result};

/// A spectrogram whose magnitudes were raised to `p`, phases untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSpectrogram {
    pub spec: Spectrogram,
    pub p: f64,
}

/// `z * |z|^(q - 1)`, with zero mapped to zero.
#[inline]
pub(crate) fn pow_magnitude(z: Complex64, q: f64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * r.powf(q - 1.0)
    }
}

pub fn power_compress(spec: &Spectrogram, p: f64) -> Result<CompressedSpectrogram> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(PaecError::param(format!("compression exponent {p} outside (0, 1]")));
    }
    let mut out = spec.clone();
    out.bins.mapv_inplace(|z| pow_magnitude(z, p));
    Ok(CompressedSpectrogram { spec: out, p })
}

pub fn power_decompress(spec: &CompressedSpectrogram) -> Result<Spectrogram> {
    if !(spec.p > 0.0 && spec.p <= 1.0) {
        return Err(PaecError::param(format!(
            "compression exponent {} outside (0, 1]",
            spec.p
        )));
    }
    let q = 1.0 / spec.p;
    let mut out = spec.spec.clone();
    out.bins.mapv_inplace(|z| pow_magnitude(z, q));
    Ok(out)
}
