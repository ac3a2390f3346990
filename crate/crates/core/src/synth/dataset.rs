//! Train/validation/test dataset generation on disjoint speaker pools.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::manifest::{write_clip_audio, write_manifest, ManifestRecord};
use super::rir::ImageSourceRir;
use super::sampler::{sample_specs, split_speakers};
use super::scene::{build_scene, Scenario, SceneConfig};
use crate::error::{PaecError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSizes {
    pub train_hours: f64,
    pub val_minutes: f64,
    pub test_clips: usize,
    pub clip_seconds: f64,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            train_hours: 2.0,
            val_minutes: 10.0,
            test_clips: 200,
            clip_seconds: 10.0,
        }
    }
}

impl DatasetSizes {
    /// The default proportions scaled to `hours` of training audio.
    pub fn scaled(hours: f64) -> Self {
        let d = Self::default();
        let k = hours / d.train_hours;
        Self {
            train_hours: hours,
            val_minutes: d.val_minutes * k,
            test_clips: ((d.test_clips as f64 * k).ceil() as usize).max(1),
            clip_seconds: d.clip_seconds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds >= 1.0) {
            return Err(PaecError::Config(format!("clip_seconds {} must be at least 1", self.clip_seconds)));
        }
        if !(self.train_hours > 0.0) || !(self.val_minutes > 0.0) || self.test_clips == 0 {
            return Err(PaecError::Config("dataset sizes must be positive".into()));
        }
        Ok(())
    }

    /// Clip counts of the train, val and test splits.
    pub fn counts(&self) -> [usize; 3] {
        let clips = |seconds: f64| ((seconds / self.clip_seconds).ceil() as usize).max(1);
        [clips(self.train_hours * 3600.0), clips(self.val_minutes * 60.0), self.test_clips]
    }
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub name: String,
    pub manifest: PathBuf,
    pub clips: usize,
    pub speakers: usize,
    pub dt: usize,
    pub fest: usize,
    pub nest: usize,
    /// Counts of realized SER in 5 dB bins starting at -20 dB.
    pub ser_hist: Vec<usize>,
    /// Counts of realized SNR in 5 dB bins starting at -10 dB.
    pub snr_hist: Vec<usize>,
}

fn histogram(values: impl Iterator<Item = f64>, start: f64, bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for v in values {
        let i = ((v - start) / 5.0).floor().clamp(0.0, (bins - 1) as f64) as usize;
        h[i] += 1;
    }
    h
}

impl SplitSummary {
    fn new(name: &str, manifest: PathBuf, speakers: usize, records: &[ManifestRecord]) -> Self {
        let count = |s| records.iter().filter(|r| r.scenario == s).count();
        Self {
            name: name.into(),
            manifest,
            clips: records.len(),
            speakers,
            dt: count(Scenario::Dt),
            fest: count(Scenario::Fest),
            nest: count(Scenario::Nest),
            ser_hist: histogram(records.iter().filter_map(|r| r.realized_ser_db), -20.0, 8),
            snr_hist: histogram(records.iter().filter_map(|r| r.realized_snr_db), -10.0, 8),
        }
    }

    pub fn dt_fraction(&self) -> f64 {
        self.dt as f64 / self.clips.max(1) as f64
    }
}

pub fn format_summary(splits: &[SplitSummary]) -> String {
    let mut out = String::new();
    for s in splits {
        let _ = writeln!(
            out,
            "{}: {} clips from {} speakers, DT {:.3} FEST {:.3} NEST {:.3}",
            s.name,
            s.clips,
            s.speakers,
            s.dt_fraction(),
            s.fest as f64 / s.clips.max(1) as f64,
            s.nest as f64 / s.clips.max(1) as f64
        );
        let _ = writeln!(out, "  realized SER [-20:5:20] dB {:?}", s.ser_hist);
        let _ = writeln!(out, "  realized SNR [-10:5:30] dB {:?}", s.snr_hist);
    }
    out
}

/// Synthesizes the three splits into `out`: audio under `out/audio/<split>`
/// and one manifest `out/<split>.jsonl` per split. Everything is checked
/// before the first file is written. Deterministic in `(corpus, sizes, seed)`.
pub fn generate_dataset(corpus: &dyn Corpus, out: &Path, sizes: &DatasetSizes, seed: u64) -> Result<Vec<SplitSummary>> {
    sizes.validate()?;
    let pools = split_speakers(&corpus.speakers(), seed)?;
    let counts = sizes.counts();
    let mut plans = Vec::new();
    for (k, name) in SPLITS.iter().enumerate() {
        let split_seed = seed.wrapping_add(1 + k as u64).wrapping_mul(0x2545_f491_4f6c_dd1d);
        plans.push(sample_specs(counts[k], split_seed, &pools[k], name)?);
    }
    let cfg = SceneConfig {
        clip_seconds: sizes.clip_seconds,
    };
    let mut summaries = Vec::new();
    for ((name, specs), pool) in SPLITS.iter().zip(&plans).zip(&pools) {
        let audio_dir = Path::new("audio").join(name);
        let records = specs
            .par_iter()
            .map(|spec| {
                let clip = build_scene(spec, corpus, &ImageSourceRir, &cfg)
                    .map_err(|e| PaecError::Corpus(format!("clip {}: {e}", spec.id)))?;
                write_clip_audio(&clip, out, &audio_dir)
                    .map_err(|e| PaecError::Corpus(format!("clip {}: {e}", spec.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        fs::create_dir_all(out)?;
        let manifest = out.join(format!("{name}.jsonl"));
        write_manifest(&records, &manifest)?;
        summaries.push(SplitSummary::new(name, manifest, pool.len(), &records));
    }
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::corpus::MemCorpus;
    use crate::synth::manifest::read_manifest;
    use std::collections::BTreeSet;

    fn small() -> DatasetSizes {
        DatasetSizes {
            train_hours: 8.0 / 3600.0,
            val_minutes: 3.0 / 60.0,
            test_clips: 3,
            clip_seconds: 1.0,
        }
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let corpus = MemCorpus::synthetic(10, 3, 1.0, 4);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate_dataset(&corpus, a.path(), &small(), 7).unwrap();
        generate_dataset(&corpus, b.path(), &small(), 7).unwrap();
        assert_eq!(sa.iter().map(|s| s.clips).collect::<Vec<_>>(), vec![8, 3, 3]);
        let mut seen: Vec<BTreeSet<String>> = Vec::new();
        for name in SPLITS {
            let ma = fs::read_to_string(a.path().join(format!("{name}.jsonl"))).unwrap();
            let mb = fs::read_to_string(b.path().join(format!("{name}.jsonl"))).unwrap();
            assert_eq!(ma, mb);
            let recs = read_manifest(&a.path().join(format!("{name}.jsonl"))).unwrap();
            seen.push(recs.iter().flat_map(|r| [r.near_speaker.clone(), r.far_speaker.clone()]).collect());
        }
        assert!(seen[0].is_disjoint(&seen[1]) && seen[0].is_disjoint(&seen[2]) && seen[1].is_disjoint(&seen[2]));
        assert!(format_summary(&sa).contains("train: 8 clips"));
    }

    #[test]
    fn too_few_speakers_writes_nothing() {
        let corpus = MemCorpus::synthetic(4, 2, 1.0, 1);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(generate_dataset(&corpus, &out, &small(), 1).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn scaled_sizes_keep_proportions() {
        let s = DatasetSizes::scaled(0.1);
        assert_eq!(s.counts(), [36, 3, 10]);
    }
}
