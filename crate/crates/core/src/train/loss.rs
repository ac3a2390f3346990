//! Power-law compressed phase-aware (PLCPA) loss and its per-variant
//! bindings.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PaecError, Result};
use crate::model::Variant;
use crate::signal::compress::pow_magnitude;
use crate::signal::{stft_default, Spectrogram, Waveform};

/// Added to `|X|^2` before the power law so the loss stays differentiable at
/// zero-magnitude bins.
pub const PLCPA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    /// Compression exponent.
    pub p: f64,
    /// Weight of the magnitude term; the complex term gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { p: 0.5, alpha: 0.5 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(PaecError::Config(format!("loss p {} outside (0, 1]", self.p)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PaecError::Config(format!("loss alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Compressed magnitude and compressed complex value of one bin.
fn compress(x: Complex64, p: f64) -> (f64, Complex64) {
    let s = x.norm_sqr() + PLCPA_EPS;
    (s.powf(p / 2.0), x * s.powf((p - 1.0) / 2.0))
}

fn check_shapes(t: &Array2<Complex64>, e: &Array2<Complex64>) -> Result<()> {
    if t.dim() != e.dim() {
        return Err(PaecError::shape(format!(
            "target {:?} and estimate {:?} differ in shape",
            t.dim(),
            e.dim()
        )));
    }
    Ok(())
}

/// PLCPA between uncompressed complex grids.
pub fn plcpa_bins(target: &Array2<Complex64>, estimate: &Array2<Complex64>, spec: &LossSpec) -> Result<f64> {
    check_shapes(target, estimate)?;
    let n = target.len().max(1) as f64;
    let (mut mag, mut cpx) = (0.0, 0.0);
    for (t, e) in target.iter().zip(estimate) {
        let (mt, ct) = compress(*t, spec.p);
        let (me, ce) = compress(*e, spec.p);
        mag += (mt - me).powi(2);
        cpx += (ct - ce).norm_sqr();
    }
    Ok((spec.alpha * mag + (1.0 - spec.alpha) * cpx) / n)
}

pub fn plcpa_loss(target: &Spectrogram, estimate: &Spectrogram, spec: &LossSpec) -> Result<f64> {
    if !target.same_layout(estimate) {
        return Err(PaecError::shape("target and estimate use different analysis settings"));
    }
    plcpa_bins(&target.bins, &estimate.bins, spec)
}

/// Loss and its gradient with respect to the estimate, packed per bin as
/// `dL/dRe + i dL/dIm`.
pub fn plcpa_grad(
    target: &Array2<Complex64>,
    estimate: &Array2<Complex64>,
    spec: &LossSpec,
) -> Result<(f64, Array2<Complex64>)> {
    check_shapes(target, estimate)?;
    let n = target.len().max(1) as f64;
    let p = spec.p;
    let k = (p - 1.0) / 2.0;
    let (mut mag, mut cpx) = (0.0, 0.0);
    let mut grad = Array2::zeros(estimate.raw_dim());
    for ((t, e), g) in target.iter().zip(estimate).zip(grad.iter_mut()) {
        let (mt, ct) = compress(*t, p);
        let s = e.norm_sqr() + PLCPA_EPS;
        let me = s.powf(p / 2.0);
        let sk = s.powf(k);
        let ce = e * sk;
        mag += (mt - me).powi(2);
        let diff = ce - ct;
        cpx += diff.norm_sqr();

        // d|E|^p/dRe = p Re s^(p/2 - 1); dC/dRe = s^k + 2k Re E s^(k-1).
        let dm = 2.0 * (me - mt) * p * s.powf(p / 2.0 - 1.0);
        let skm1 = 2.0 * k * s.powf(k - 1.0);
        let dc_dre = Complex64::new(sk, 0.0) + e * (e.re * skm1);
        let dc_dim = Complex64::new(0.0, sk) + e * (e.im * skm1);
        let gr = spec.alpha * dm * e.re + (1.0 - spec.alpha) * 2.0 * (diff.conj() * dc_dre).re;
        let gi = spec.alpha * dm * e.im + (1.0 - spec.alpha) * 2.0 * (diff.conj() * dc_dim).re;
        *g = Complex64::new(gr, gi) / n;
    }
    Ok(((spec.alpha * mag + (1.0 - spec.alpha) * cpx) / n, grad))
}

/// Undoes the network's magnitude compression, `z |z|^(1/p - 1)`.
pub fn decompress_value(z: Complex64, p: f64) -> Complex64 {
    pow_magnitude(z, 1.0 / p)
}

/// PLCPA of a compressed network output against an uncompressed target:
/// the output is decompressed first, and the gradient is taken with respect
/// to the compressed output.
pub fn plcpa_grad_compressed(
    target: &Array2<Complex64>,
    compressed: &Array2<Complex64>,
    spec: &LossSpec,
    p_out: f64,
) -> Result<(f64, Array2<Complex64>)> {
    let estimate = compressed.mapv(|z| decompress_value(z, p_out));
    let (loss, g_e) = plcpa_grad(target, &estimate, spec)?;
    let q = 1.0 / p_out - 1.0;
    let mut g = Array2::zeros(compressed.raw_dim());
    for ((z, ge), out) in compressed.iter().zip(&g_e).zip(g.iter_mut()) {
        let r = z.norm();
        // dE/dRe(z) = r^q + q r^(q-2) Re(z) z, likewise for the imaginary part.
        let (dre, dim) = if r < 1e-150 {
            let base = if q == 0.0 { 1.0 } else { 0.0 };
            (Complex64::new(base, 0.0), Complex64::new(0.0, base))
        } else {
            let rq = r.powf(q);
            let c = q * r.powf(q - 2.0);
            (
                Complex64::new(rq, 0.0) + z * (c * z.re),
                Complex64::new(0.0, rq) + z * (c * z.im),
            )
        };
        *out = Complex64::new((ge.conj() * dre).re, (ge.conj() * dim).re);
    }
    Ok((loss, g))
}

/// The loss terms of one variant. `term1` is the first-stage term, `term2`
/// the second-stage term; single-stage variants fill only the term of the
/// stage they have.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub term1: Option<f64>,
    pub term2: Option<f64>,
    pub total: f64,
}

impl LossTerms {
    fn new(term1: Option<f64>, term2: Option<f64>) -> Self {
        Self {
            term1,
            term2,
            total: term1.unwrap_or(0.0) + term2.unwrap_or(0.0),
        }
    }
}

/// Clean components of a clip, as uncompressed spectra.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetSpectra {
    pub s: Option<Array2<Complex64>>,
    pub y: Option<Array2<Complex64>>,
    pub z: Option<Array2<Complex64>>,
}

impl TargetSpectra {
    pub fn from_waveforms(s: Option<&Waveform>, y: Option<&Waveform>, z: Option<&Waveform>) -> Result<Self> {
        let spec = |w: Option<&Waveform>| w.map(|w| stft_default(w).map(|s| s.bins)).transpose();
        Ok(Self {
            s: spec(s)?,
            y: spec(y)?,
            z: spec(z)?,
        })
    }
}

fn need<'a>(t: &'a Option<Array2<Complex64>>, name: &str, variant: Variant) -> Result<&'a Array2<Complex64>> {
    t.as_ref()
        .ok_or_else(|| PaecError::Target(format!("{variant} needs the {name} component")))
}

/// Targets of the two stages of `variant`, uncompressed.
pub fn stage_targets(
    variant: Variant,
    t: &TargetSpectra,
) -> Result<(Option<Array2<Complex64>>, Option<Array2<Complex64>>)> {
    let speech_plus_interference = || -> Result<Array2<Complex64>> {
        Ok(need(&t.s, "s", variant)? + need(&t.z, "z", variant)?)
    };
    Ok(match variant {
        Variant::GftnnAec => (Some(speech_plus_interference()?), None),
        Variant::GftnnPse | Variant::GftnnL | Variant::Tdpf1 => (None, Some(need(&t.s, "s", variant)?.clone())),
        Variant::Tdpf2 => (Some(need(&t.y, "y", variant)?.clone()), Some(need(&t.s, "s", variant)?.clone())),
        Variant::Tdpf3 => (Some(speech_plus_interference()?), Some(need(&t.s, "s", variant)?.clone())),
    })
}

/// Stage outputs as uncompressed spectra.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageSpectra {
    pub s1: Option<Array2<Complex64>>,
    pub s2: Option<Array2<Complex64>>,
}

fn output<'a>(o: &'a Option<Array2<Complex64>>, stage: u8, variant: Variant) -> Result<&'a Array2<Complex64>> {
    o.as_ref()
        .ok_or_else(|| PaecError::shape(format!("{variant} output is missing stage {stage}")))
}

/// Loss of a variant on uncompressed targets and outputs.
pub fn variant_loss(variant: Variant, targets: &TargetSpectra, outputs: &StageSpectra, spec: &LossSpec) -> Result<LossTerms> {
    spec.validate()?;
    let (t1, t2) = stage_targets(variant, targets)?;
    let term1 = t1
        .map(|t| plcpa_bins(&t, output(&outputs.s1, 1, variant)?, spec))
        .transpose()?;
    let term2 = t2
        .map(|t| plcpa_bins(&t, output(&outputs.s2, 2, variant)?, spec))
        .transpose()?;
    Ok(LossTerms::new(term1, term2))
}

/// Loss and gradients of a variant with respect to the compressed stage
/// outputs. `targets` are the stage targets from [`stage_targets`].
pub fn variant_loss_grad(
    targets: &(Option<Array2<Complex64>>, Option<Array2<Complex64>>),
    s1: Option<&Array2<Complex64>>,
    s2: Option<&Array2<Complex64>>,
    spec: &LossSpec,
    p_out: f64,
) -> Result<(LossTerms, Option<Array2<Complex64>>, Option<Array2<Complex64>>)> {
    let run = |t: &Option<Array2<Complex64>>, o: Option<&Array2<Complex64>>, stage: u8| {
        match (t, o) {
            (Some(t), Some(o)) => plcpa_grad_compressed(t, o, spec, p_out).map(Some),
            (Some(_), None) => Err(PaecError::shape(format!("stage {stage} output is missing"))),
            (None, _) => Ok(None),
        }
    };
    let r1 = run(&targets.0, s1, 1)?;
    let r2 = run(&targets.1, s2, 2)?;
    let terms = LossTerms::new(r1.as_ref().map(|r| r.0), r2.as_ref().map(|r| r.0));
    Ok((terms, r1.map(|r| r.1), r2.map(|r| r.1)))
}
