//! Scene synthesis: room impulse responses, echo generation, SER/SNR
//! mixing, scenario sampling and dataset manifests.

pub mod corpus;
pub mod dataset;
pub mod echo;
pub mod manifest;
pub mod rir;
pub mod sampler;
pub mod scene;
pub mod talker;

pub use corpus::{Corpus, DirCorpus, MemCorpus};
pub use dataset::{format_summary, generate_dataset, DatasetSizes, SplitSummary};
pub use echo::{synth_echo, Distortion};
pub use manifest::{manifest_root, read_manifest, write_clip_audio, write_manifest, ManifestRecord};
pub use rir::{ImageSourceRir, RirProvider, RoomSpec};
pub use sampler::{sample_specs, split_speakers};
pub use scene::{build_scene, Scenario, ScenarioClip, SceneConfig, SceneSpec};

use crate::error::Result;

/// `n` clips from a small in-memory corpus of synthetic talkers, for tests
/// and quick experiments.
pub fn toy_clips(n: usize, clip_seconds: f64, seed: u64) -> Result<Vec<ScenarioClip>> {
    let corpus = MemCorpus::synthetic(6, 4, clip_seconds.max(1.0), seed);
    let cfg = SceneConfig { clip_seconds };
    sample_specs(n, seed, &corpus.speakers(), "toy")?
        .iter()
        .map(|spec| build_scene(spec, &corpus, &ImageSourceRir, &cfg))
        .collect()
}
