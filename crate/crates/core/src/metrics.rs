//! Evaluation metrics and the external speech-quality scorer hook.

use std::path::Path;
use std::process::Command;

use crate::error::{PaecError, Result};

/// Reported metrics are clamped to `±METRIC_CAP_DB`. Perfect suppression or
/// reconstruction returns the cap instead of infinity.
pub const METRIC_CAP_DB: f64 = 80.0;

fn db_ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return METRIC_CAP_DB;
    }
    if num <= 0.0 {
        return -METRIC_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CAP_DB, METRIC_CAP_DB)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(PaecError::shape(format!("signals of {} and {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(PaecError::EmptySignal("metric input"));
    }
    Ok(())
}

/// Echo return loss enhancement `10 log10(Σd² / Σŝ²)` in dB.
pub fn erle(d: &[f64], s_hat: &[f64]) -> Result<f64> {
    same_len(d, s_hat)?;
    let ed: f64 = d.iter().map(|x| x * x).sum();
    if ed <= 0.0 {
        return Err(PaecError::DegenerateEnergy("microphone signal has zero energy"));
    }
    Ok(db_ratio(ed, s_hat.iter().map(|x| x * x).sum()))
}

/// Scale-invariant SNR of `s_hat` against the reference `s`, in dB.
pub fn si_snr(s_hat: &[f64], s: &[f64]) -> Result<f64> {
    same_len(s_hat, s)?;
    let zero_mean = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (est, reference) = (zero_mean(s_hat), zero_mean(s));
    let es: f64 = reference.iter().map(|x| x * x).sum();
    let ee: f64 = est.iter().map(|x| x * x).sum();
    if es <= 0.0 {
        return Err(PaecError::DegenerateEnergy("reference has zero energy"));
    }
    if ee <= 0.0 {
        return Err(PaecError::DegenerateEnergy("estimate has zero energy"));
    }
    let alpha = est.iter().zip(&reference).map(|(a, b)| a * b).sum::<f64>() / es;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (e, r) in est.iter().zip(&reference) {
        let t = alpha * r;
        target += t * t;
        resid += (e - t) * (e - t);
    }
    // Residuals at rounding level count as a perfect match.
    if resid <= ee * 1e-20 {
        resid = 0.0;
    }
    Ok(db_ratio(target, resid))
}

/// Shell command scoring a degraded file against a reference, e.g.
/// `pesq +16000 {ref} {deg}`. The last non-empty line of its standard output
/// must be a number.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHook {
    pub template: String,
}

impl ScoreHook {
    pub fn new(template: &str) -> Result<Self> {
        if !template.contains("{ref}") || !template.contains("{deg}") {
            return Err(PaecError::Config(format!(
                "scorer command {template:?} must contain {{ref}} and {{deg}}"
            )));
        }
        Ok(Self {
            template: template.to_string(),
        })
    }

    pub fn command_line(&self, reference: &Path, degraded: &Path) -> String {
        self.template
            .replace("{ref}", &quote(reference))
            .replace("{deg}", &quote(degraded))
    }

    pub fn score(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        let line = self.command_line(reference, degraded);
        let out = Command::new("sh")
            .arg("-c")
            .arg(&line)
            .output()
            .map_err(|e| PaecError::Hook(format!("{line}: {e}")))?;
        if !out.status.success() {
            return Err(PaecError::Hook(format!(
                "{line}: exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let last = stdout.lines().map(str::trim).rfind(|l| !l.is_empty()).unwrap_or("");
        last.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PaecError::Hook(format!("{line}: expected a number, got {last:?}")))
    }
}

fn quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}
