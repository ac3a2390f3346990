//! Speaker representations computed from an enrollment utterance.

pub mod fbank;
pub mod provider;

pub use fbank::{compute_fbank_stats, FBankStats, FBANK_DIM, N_MELS};
pub use provider::{embed_speaker, EmbeddingProvider, FileProvider, ProviderEmbedding, StubProvider, EMBEDDING_DIM};
