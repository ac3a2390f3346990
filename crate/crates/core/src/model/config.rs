use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PaecError, Result};

pub const N_ENC_LAYERS: usize = 5;
pub const KERNEL: [usize; 2] = [2, 3];
pub const STRIDE: [usize; 2] = [1, 2];
/// Channels per stacked input signal (real and imaginary part).
pub const CHANNELS_PER_SIGNAL: usize = 2;
/// Stage input is always three stacked signals.
pub const STAGE_INPUT_CHANNELS: usize = 3 * CHANNELS_PER_SIGNAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The head emits the compressed complex spectrum directly.
    Map,
    /// The head emits a bounded complex mask applied to the compressed error
    /// spectrum.
    Mask,
}

/// How the utterance-level speaker representation conditions the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalFusion {
    /// Cross-attention over an FBank token and a provider-embedding token.
    Mca,
    /// Cross-attention over the provider-embedding token only.
    McaProviderOnly,
    /// The 416-dim concatenation of both, linearly projected.
    Concat,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerConfig {
    /// Hidden units per direction of the frequency-axis enrollment BiLSTM.
    pub lstm_hidden: usize,
    /// Parallel speaker encoder plus the broadcast enrollment vector.
    pub local: bool,
    pub fusion: GlobalFusion,
    pub attn_dim: usize,
    pub heads: usize,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 160,
            local: true,
            fusion: GlobalFusion::Mca,
            attn_dim: 128,
            heads: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub n_enc_layers: usize,
    /// (time, frequency).
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub channels: usize,
    pub ftlstm_hidden: usize,
    pub ftlstm_blocks: usize,
    pub output_mode: OutputMode,
    pub speaker: Option<SpeakerConfig>,
}

impl StageConfig {
    pub fn new(channels: usize, output_mode: OutputMode, speaker: Option<SpeakerConfig>) -> Self {
        Self {
            n_enc_layers: N_ENC_LAYERS,
            kernel: KERNEL,
            stride: STRIDE,
            channels,
            ftlstm_hidden: 128,
            ftlstm_blocks: 3,
            output_mode,
            speaker,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PaecError::Config(m));
        if self.n_enc_layers != N_ENC_LAYERS {
            return bad(format!("n_enc_layers must be {N_ENC_LAYERS}, got {}", self.n_enc_layers));
        }
        if self.kernel != KERNEL || self.stride != STRIDE {
            return bad(format!(
                "only kernel {KERNEL:?} with stride {STRIDE:?} is supported, got {:?} / {:?}",
                self.kernel, self.stride
            ));
        }
        if self.channels == 0 || self.ftlstm_hidden == 0 || self.ftlstm_blocks == 0 {
            return bad("channels, ftlstm_hidden and ftlstm_blocks must be positive".into());
        }
        if let Some(s) = &self.speaker {
            if s.lstm_hidden == 0 {
                return bad("speaker lstm_hidden must be positive".into());
            }
            if s.fusion != GlobalFusion::None && s.fusion != GlobalFusion::Concat {
                if s.heads == 0 || s.attn_dim % s.heads != 0 {
                    return bad(format!(
                        "attention dim {} must be a positive multiple of heads {}",
                        s.attn_dim, s.heads
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "gftnn-aec")]
    GftnnAec,
    #[serde(rename = "gftnn-pse")]
    GftnnPse,
    #[serde(rename = "gftnn-l")]
    GftnnL,
    #[serde(rename = "tdpf1")]
    Tdpf1,
    #[serde(rename = "tdpf2")]
    Tdpf2,
    #[serde(rename = "tdpf3")]
    Tdpf3,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::GftnnAec,
        Variant::GftnnPse,
        Variant::GftnnL,
        Variant::Tdpf1,
        Variant::Tdpf2,
        Variant::Tdpf3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::GftnnAec => "gftnn-aec",
            Variant::GftnnPse => "gftnn-pse",
            Variant::GftnnL => "gftnn-l",
            Variant::Tdpf1 => "tdpf1",
            Variant::Tdpf2 => "tdpf2",
            Variant::Tdpf3 => "tdpf3",
        }
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, Variant::Tdpf1 | Variant::Tdpf2 | Variant::Tdpf3)
    }

    pub fn is_personalized(self) -> bool {
        self != Variant::GftnnAec
    }

    /// What the first stage is trained to produce, if it has its own target.
    pub fn stage1_target(self) -> Option<Stage1Target> {
        match self {
            Variant::Tdpf2 => Some(Stage1Target::Echo),
            Variant::Tdpf3 | Variant::GftnnAec => Some(Stage1Target::SpeechPlusInterference),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PaecError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                PaecError::Config(format!("unknown variant {s:?}; valid: {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Target {
    /// The echo component y at the microphone.
    Echo,
    /// Near-end speech plus interfering talkers, s + z.
    SpeechPlusInterference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelVariantConfig {
    pub variant: Variant,
    /// Magnitude compression exponent of all network inputs and outputs.
    pub compress_p: f64,
    /// The echo-side stage. Fed with (d, e, y_lin).
    pub stage1: Option<StageConfig>,
    /// The speaker-conditioned stage. Fed with (d, e, s1) after a first
    /// stage, otherwise with (d, e, y_lin).
    pub stage2: Option<StageConfig>,
}

/// Channel widths of the default configurations, tuned so that the
/// parameter counts land near the reference budgets.
pub const TDPF_WIDTH: usize = 94;
pub const GFTNN_L_WIDTH: usize = 160;

impl ModelVariantConfig {
    pub fn default_for(variant: Variant) -> Self {
        Self::with_widths(variant, TDPF_WIDTH, GFTNN_L_WIDTH, SpeakerConfig::default(), 128, 3)
    }

    /// A small configuration for tests and quick experiments.
    pub fn toy(variant: Variant) -> Self {
        let spk = SpeakerConfig {
            lstm_hidden: 8,
            local: true,
            fusion: GlobalFusion::Mca,
            attn_dim: 16,
            heads: 8,
        };
        Self::with_widths(variant, 12, 16, spk, 16, 1)
    }

    fn with_widths(
        variant: Variant,
        width: usize,
        wide: usize,
        spk: SpeakerConfig,
        hidden: usize,
        blocks: usize,
    ) -> Self {
        let stage = |channels, mode, speaker: Option<SpeakerConfig>| StageConfig {
            ftlstm_hidden: hidden,
            ftlstm_blocks: blocks,
            ..StageConfig::new(channels, mode, speaker)
        };
        let (stage1, stage2) = match variant {
            Variant::GftnnAec => (Some(stage(width, OutputMode::Mask, None)), None),
            Variant::GftnnPse => (None, Some(stage(width, OutputMode::Mask, Some(spk)))),
            Variant::GftnnL => (None, Some(stage(wide, OutputMode::Mask, Some(spk)))),
            Variant::Tdpf1 | Variant::Tdpf3 => (
                Some(stage(width, OutputMode::Mask, None)),
                Some(stage(width, OutputMode::Mask, Some(spk))),
            ),
            Variant::Tdpf2 => (
                Some(stage(width, OutputMode::Map, None)),
                Some(stage(width, OutputMode::Mask, Some(spk))),
            ),
        };
        Self {
            variant,
            compress_p: 0.5,
            stage1,
            stage2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compress_p > 0.0 && self.compress_p <= 1.0) {
            return Err(PaecError::Config(format!(
                "compress_p {} outside (0, 1]",
                self.compress_p
            )));
        }
        let v = self.variant;
        let shape_ok = match v {
            Variant::GftnnAec => self.stage1.is_some() && self.stage2.is_none(),
            Variant::GftnnPse | Variant::GftnnL => self.stage1.is_none() && self.stage2.is_some(),
            _ => self.stage1.is_some() && self.stage2.is_some(),
        };
        if !shape_ok {
            return Err(PaecError::Config(format!("stage layout does not match variant {v}")));
        }
        if let Some(s1) = &self.stage1 {
            s1.validate()?;
            if s1.speaker.is_some() {
                return Err(PaecError::Config("stage 1 takes no speaker conditioning".into()));
            }
            let want = if v == Variant::Tdpf2 { OutputMode::Map } else { OutputMode::Mask };
            if s1.output_mode != want {
                return Err(PaecError::Config(format!(
                    "stage 1 of {v} must use {want:?} output"
                )));
            }
        }
        if let Some(s2) = &self.stage2 {
            s2.validate()?;
            if s2.output_mode != OutputMode::Mask {
                return Err(PaecError::Config("stage 2 must use mask output".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PaecError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
