//! Experiment configuration file (TOML). Every section is optional; missing
//! keys take their defaults and unknown keys are rejected.
//!
//! ```toml
//! [paths]
//! output_root = "runs/exp1"   # PAEC_OUTPUT_ROOT overrides this
//! corpus = "corpus"
//! data = "data"               # relative to output_root
//! checkpoints = "checkpoints"
//! reports = "reports"
//!
//! [model]
//! variant = "tdpf2"
//! preset = "default"          # or "toy"; `config` points at a full model file instead
//!
//! [strategy]
//! kind = "finetune"
//! stage1 = "checkpoints/echo_map"
//! stage2 = "checkpoints/pse"
//!
//! [dsp]
//! taps_per_bin = 10
//!
//! [train]
//! steps = 2000
//! seed = 0
//! [train.adam]
//! lr = 3e-4
//! [train.loss]
//! alpha = 0.5
//!
//! [data]
//! seed = 7
//! train_hours = 2.0
//!
//! [speaker]
//! provider = "stub"
//!
//! [eval]
//! pesq_cmd = "pesq +16000 {ref} {deg}"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::DspConfig;
use crate::error::{PaecError, Result};
use crate::metrics::ScoreHook;
use crate::model::{ModelVariantConfig, Variant};
use crate::speaker::{EmbeddingProvider, FileProvider, StubProvider};
use crate::synth::DatasetSizes;
use crate::train::{StrategyKind, TrainOptions, TrainStrategy};

pub const OUTPUT_ROOT_ENV: &str = "PAEC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub output_root: PathBuf,
    pub corpus: PathBuf,
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_root: PathBuf::from("out"),
            corpus: PathBuf::from("corpus"),
            data: PathBuf::from("data"),
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub preset: Preset,
    /// Full model configuration file; overrides `variant` and `preset`.
    pub config: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Tdpf2,
            preset: Preset::Default,
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    pub stage1: Option<PathBuf>,
    pub stage2: Option<PathBuf>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Scratch,
            stage1: None,
            stage2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    #[serde(flatten)]
    pub sizes: DatasetSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerSection {
    pub provider: ProviderKind,
    /// Embedding table for the file provider.
    pub file: Option<PathBuf>,
    /// Seed of the stub provider's projection.
    pub stub_seed: u64,
}

impl SpeakerSection {
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match (self.provider, &self.file) {
            (ProviderKind::Stub, None) => Ok(Box::new(StubProvider::new(self.stub_seed))),
            (ProviderKind::Stub, Some(_)) => Err(PaecError::Config("an embedding file needs provider = \"file\"".into())),
            (ProviderKind::File, Some(p)) => Ok(Box::new(FileProvider::open(p)?)),
            (ProviderKind::File, None) => Err(PaecError::Config("the file provider needs an embedding file".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Quality scorer command with `{ref}` and `{deg}` placeholders.
    pub pesq_cmd: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub strategy: StrategySection,
    pub dsp: DspConfig,
    pub train: TrainOptions,
    pub data: DataSection,
    pub speaker: SpeakerSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PaecError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PaecError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| PaecError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces the output root with `$PAEC_OUTPUT_ROOT` when it is set.
    pub fn apply_env(&mut self) {
        if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            self.paths.output_root = PathBuf::from(root);
        }
    }

    /// `p` under the output root, unless absolute.
    pub fn output_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.output_root.join(p)
        }
    }

    pub fn model_config(&self) -> Result<ModelVariantConfig> {
        let cfg = match &self.model.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| PaecError::Config(format!("reading {}: {e}", p.display())))?;
                ModelVariantConfig::from_toml(&text)?
            }
            None => match self.model.preset {
                Preset::Default => ModelVariantConfig::default_for(self.model.variant),
                Preset::Toy => ModelVariantConfig::toy(self.model.variant),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn strategy(&self) -> TrainStrategy {
        TrainStrategy {
            kind: self.strategy.kind,
            stage1: self.strategy.stage1.clone(),
            stage2: self.strategy.stage2.clone(),
        }
    }

    pub fn score_hook(&self) -> Result<Option<ScoreHook>> {
        self.eval.pesq_cmd.as_deref().map(ScoreHook::new).transpose()
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.train.validate()?;
        self.data.sizes.validate()?;
        self.model_config()?;
        self.score_hook()?;
        match (self.speaker.provider, &self.speaker.file) {
            (ProviderKind::File, None) => Err(PaecError::Config("the file provider needs an embedding file".into())),
            (ProviderKind::Stub, Some(_)) => Err(PaecError::Config("an embedding file needs provider = \"file\"".into())),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn documented_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.model.variant, Variant::Tdpf2);
        assert_eq!(cfg.strategy.kind, StrategyKind::Finetune);
        assert_eq!(cfg.train.adam.lr, 3e-4);
        assert_eq!(cfg.data.sizes.train_hours, 2.0);
        assert_eq!(cfg.output_path(Path::new("data")), Path::new("runs/exp1/data"));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[dsp]\ntaps = 3").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nvariant = \"tdpf9\"").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nhours = 1.0").is_err());
        let cfg = ExperimentConfig::from_toml("[dsp]\nmu = 3.0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml("[eval]\npesq_cmd = \"pesq {ref}\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml("[speaker]\nprovider = \"file\"").unwrap();
        assert!(cfg.validate().is_err());
    }
}
