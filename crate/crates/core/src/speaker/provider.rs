//! Utterance-level speaker embeddings from pluggable providers.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fbank::{compute_fbank_stats, FBANK_DIM, N_MELS};
use crate::error::{PaecError, Result};
use crate::signal::Waveform;

pub const EMBEDDING_DIM: usize = 256;

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderEmbedding(Vec<f64>);

impl ProviderEmbedding {
    /// Normalizes `v` to unit L2 norm.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() != EMBEDDING_DIM {
            return Err(PaecError::Provider(format!(
                "embedding has {} dims, expected {EMBEDDING_DIM}",
                v.len()
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(PaecError::Provider("embedding has zero or non-finite norm".into()));
        }
        Ok(Self(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Raw embedding for an enrollment utterance. `speaker` is the corpus id
    /// when known.
    fn raw_embedding(&self, enrollment: &Waveform, speaker: Option<&str>) -> Result<Vec<f64>>;
}

pub fn embed_speaker(
    enrollment: &Waveform,
    speaker: Option<&str>,
    provider: &dyn EmbeddingProvider,
) -> Result<ProviderEmbedding> {
    ProviderEmbedding::new(provider.raw_embedding(enrollment, speaker)?)
}

/// Fixed Gaussian random projection of the FBank statistics.
#[derive(Debug, Clone)]
pub struct StubProvider {
    projection: Vec<Vec<f64>>,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..EMBEDDING_DIM)
            .map(|_| (0..FBANK_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self { projection }
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::new(0x5eed)
    }
}

impl EmbeddingProvider for StubProvider {
    fn raw_embedding(&self, enrollment: &Waveform, _speaker: Option<&str>) -> Result<Vec<f64>> {
        let mut stats = compute_fbank_stats(enrollment)?.0;
        // Remove the overall level so the projection sees spectral shape.
        let level = stats[..N_MELS].iter().sum::<f64>() / N_MELS as f64;
        stats[..N_MELS].iter_mut().for_each(|v| *v -= level);
        Ok(self
            .projection
            .iter()
            .map(|row| row.iter().zip(&stats).map(|(w, x)| w * x).sum())
            .collect())
    }
}

/// Precomputed embeddings keyed by speaker id.
///
/// Text format: one speaker per line, the id followed by 256 numbers, all
/// whitespace separated. Blank lines and lines starting with `#` are skipped.
#[derive(Debug, Clone, Default)]
pub struct FileProvider {
    table: HashMap<String, Vec<f64>>,
}

impl FileProvider {
    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PaecError::Provider(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| PaecError::Provider(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let id = it.next().unwrap_or_default().to_string();
            let v = it
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            if v.len() != EMBEDDING_DIM {
                return Err(format!("line {}: {} values, expected {EMBEDDING_DIM}", i + 1, v.len()));
            }
            table.insert(id, v);
        }
        Ok(Self { table })
    }

    pub fn insert(&mut self, speaker: &str, v: Vec<f64>) {
        self.table.insert(speaker.to_string(), v);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn raw_embedding(&self, _enrollment: &Waveform, speaker: Option<&str>) -> Result<Vec<f64>> {
        let id = speaker.ok_or_else(|| PaecError::Provider("file provider needs a speaker id".into()))?;
        self.table
            .get(id)
            .cloned()
            .ok_or_else(|| PaecError::Provider(format!("no embedding for speaker {id:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speaker::fbank::cosine;
    use crate::synth::talker::Talker;

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let w = Talker::from_seed(1).utterance(2.0, 4);
        let p = StubProvider::default();
        let a = embed_speaker(&w, None, &p).unwrap();
        let b = embed_speaker(&w, None, &p).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.as_slice().iter().map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stub_separates_envelopes() {
        let p = StubProvider::default();
        let a = embed_speaker(&Talker::from_seed(3).utterance(2.0, 1), None, &p).unwrap();
        let b = embed_speaker(&Talker::from_seed(4).utterance(2.0, 1), None, &p).unwrap();
        assert!(cosine(a.as_slice(), b.as_slice()) < 0.999);
    }

    #[test]
    fn file_provider_normalizes_on_ingestion() {
        let row: Vec<String> = (0..EMBEDDING_DIM).map(|i| format!("{}", i as f64 * 0.5)).collect();
        let text = format!("# header\nalice {}\n", row.join(" "));
        let p = FileProvider::parse(&text).unwrap();
        let e = embed_speaker(&Waveform::zeros(10), Some("alice"), &p).unwrap();
        let n: f64 = e.as_slice().iter().map(|x| x * x).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
        assert!(matches!(
            embed_speaker(&Waveform::zeros(10), Some("bob"), &p),
            Err(PaecError::Provider(_))
        ));
    }

    #[test]
    fn file_provider_rejects_bad_rows() {
        assert!(FileProvider::parse("x 1 2 3\n").unwrap_err().contains("line 1"));
        assert!(FileProvider::parse("x 1 y\n").is_err());
    }

    #[test]
    fn zero_embedding_is_a_provider_error() {
        assert!(ProviderEmbedding::new(vec![0.0; EMBEDDING_DIM]).is_err());
        assert!(ProviderEmbedding::new(vec![1.0; 3]).is_err());
    }
}
