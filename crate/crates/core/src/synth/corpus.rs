//! Speech and noise sources for scene synthesis.
//!
//! On disk a corpus is a directory of per-speaker subdirectories of WAV
//! files. A subdirectory named `_noise` holds noise recordings; any other
//! name starting with `_` is ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{PaecError, Result};
use crate::signal::wav::{read_wav, write_wav_pcm16};
use crate::signal::Waveform;

use super::talker::{colored_noise, Talker};

pub const NOISE_DIR: &str = "_noise";

pub trait Corpus: Sync {
    /// Speaker ids in a stable order.
    fn speakers(&self) -> Vec<String>;
    fn utterance_count(&self, speaker: &str) -> usize;
    fn utterance(&self, speaker: &str, index: usize) -> Result<Waveform>;
    fn noise_count(&self) -> usize;
    fn noise(&self, index: usize) -> Result<Waveform>;
}

#[derive(Debug, Clone)]
pub struct DirCorpus {
    root: PathBuf,
    speakers: BTreeMap<String, Vec<PathBuf>>,
    noises: Vec<PathBuf>,
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

impl DirCorpus {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(PaecError::Corpus(format!("{} is not a directory", root.display())));
        }
        let mut speakers = BTreeMap::new();
        let mut noises = Vec::new();
        for entry in fs::read_dir(root)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
            if name == NOISE_DIR {
                noises = wav_files(&path)?;
            } else if !name.starts_with('_') {
                let files = wav_files(&path)?;
                if !files.is_empty() {
                    speakers.insert(name, files);
                }
            }
        }
        if speakers.is_empty() {
            return Err(PaecError::Corpus(format!(
                "{} contains no speaker directories with WAV files",
                root.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            speakers,
            noises,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Corpus for DirCorpus {
    fn speakers(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    fn utterance_count(&self, speaker: &str) -> usize {
        self.speakers.get(speaker).map_or(0, Vec::len)
    }

    fn utterance(&self, speaker: &str, index: usize) -> Result<Waveform> {
        let files = self
            .speakers
            .get(speaker)
            .ok_or_else(|| PaecError::Corpus(format!("unknown speaker {speaker}")))?;
        let path = files
            .get(index)
            .ok_or_else(|| PaecError::Corpus(format!("speaker {speaker} has no utterance {index}")))?;
        read_wav(path)
    }

    fn noise_count(&self) -> usize {
        self.noises.len()
    }

    fn noise(&self, index: usize) -> Result<Waveform> {
        let path = self
            .noises
            .get(index)
            .ok_or_else(|| PaecError::Corpus(format!("no noise file {index}")))?;
        read_wav(path)
    }
}

/// In-memory corpus.
#[derive(Debug, Clone, Default)]
pub struct MemCorpus {
    pub speakers: BTreeMap<String, Vec<Waveform>>,
    pub noises: Vec<Waveform>,
}

impl MemCorpus {
    /// `n_speakers` synthetic talkers with `n_utts` utterances each, plus a
    /// few noise clips.
    pub fn synthetic(n_speakers: usize, n_utts: usize, utt_seconds: f64, seed: u64) -> Self {
        let mut speakers = BTreeMap::new();
        for i in 0..n_speakers {
            let talker = Talker::from_seed(seed.wrapping_mul(1000).wrapping_add(i as u64));
            let utts = (0..n_utts)
                .map(|j| talker.utterance(utt_seconds, seed ^ ((i as u64) << 20) ^ j as u64))
                .collect();
            speakers.insert(format!("spk{i:03}"), utts);
        }
        let noises = (0..4)
            .map(|k| colored_noise((utt_seconds * 16000.0) as usize, seed.wrapping_add(77 + k)))
            .collect();
        Self { speakers, noises }
    }

    /// Writes the corpus in the on-disk layout.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        for (spk, utts) in &self.speakers {
            let dir = root.join(spk);
            fs::create_dir_all(&dir)?;
            for (j, u) in utts.iter().enumerate() {
                write_wav_pcm16(&dir.join(format!("utt{j:03}.wav")), u)?;
            }
        }
        if !self.noises.is_empty() {
            let dir = root.join(NOISE_DIR);
            fs::create_dir_all(&dir)?;
            for (k, n) in self.noises.iter().enumerate() {
                write_wav_pcm16(&dir.join(format!("noise{k:03}.wav")), n)?;
            }
        }
        Ok(())
    }
}

impl Corpus for MemCorpus {
    fn speakers(&self) -> Vec<String> {
        self.speakers.keys().cloned().collect()
    }

    fn utterance_count(&self, speaker: &str) -> usize {
        self.speakers.get(speaker).map_or(0, Vec::len)
    }

    fn utterance(&self, speaker: &str, index: usize) -> Result<Waveform> {
        self.speakers
            .get(speaker)
            .and_then(|u| u.get(index))
            .cloned()
            .ok_or_else(|| PaecError::Corpus(format!("missing utterance {speaker}/{index}")))
    }

    fn noise_count(&self) -> usize {
        self.noises.len()
    }

    fn noise(&self, index: usize) -> Result<Waveform> {
        self.noises
            .get(index)
            .cloned()
            .ok_or_else(|| PaecError::Corpus(format!("no noise clip {index}")))
    }
}
