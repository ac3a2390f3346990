//! Linear echo cancellation front-end: reference alignment by subband
//! cross-correlation followed by a subband NLMS filter.

mod nlms;
mod tde;

use serde::{Deserialize, Serialize};

pub use nlms::{nlms_run, NlmsOutput, NlmsState};
pub use tde::{align_reference, estimate_delay, estimate_delay_with, DelayEstimate};

/// Front-end settings, as exposed in the experiment config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub taps_per_bin: usize,
    pub mu: f64,
    pub epsilon: f64,
    /// Largest delay searched by the TDE, in milliseconds.
    pub tde_search_ms: f64,
    pub tde_bands: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            taps_per_bin: 10,
            mu: 0.5,
            epsilon: 1e-6,
            tde_search_ms: 500.0,
            tde_bands: 8,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        let bad = |m: String| Err(crate::error::PaecError::Config(m));
        if self.taps_per_bin == 0 || self.tde_bands == 0 {
            return bad("taps_per_bin and tde_bands must be positive".into());
        }
        if !(self.mu > 0.0 && self.mu < 2.0) {
            return bad(format!("mu {} outside (0, 2)", self.mu));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.tde_search_ms > 0.0 && self.tde_search_ms <= 2000.0) {
            return bad(format!("tde_search_ms {} outside (0, 2000]", self.tde_search_ms));
        }
        Ok(())
    }
}
