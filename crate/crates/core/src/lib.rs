//! Semi-supervised cross-modal hashing with adversarial hard-example selection.
//!
//! Two two-pathway hashing networks (one per player) map image and text
//! features into a shared Hamming space. The *generator* scores unlabeled
//! items of the opposite modality for a given query and samples hard
//! candidates; the *discriminator* learns hash functions from triplet
//! ranking losses over true pairs and those sampled candidates. The two are
//! trained in alternation, the generator by REINFORCE with the
//! discriminator's score as reward. Retrieval and evaluation always use the
//! discriminator's hash functions.
//!
//! The crate ships:
//! - a minimal dense linear-algebra core with hand-derived gradients
//!   ([`tensor`]),
//! - the two-pathway hashing model with bit-packed codes ([`model`]),
//! - generator and discriminator objectives ([`generator`],
//!   [`discriminator`]),
//! - the alternating training loop ([`trainer`]),
//! - dataset loading, a bit-exact on-disk format, and a synthetic
//!   two-modality generator ([`data`]),
//! - a Hamming-ranking evaluation harness: MAP, PR curve, topK precision
//!   ([`eval`]),
//! - checkpointing ([`checkpoint`]) and the `schgan` CLI ([`cli`]).
//!
//! Everything is deterministic under a fixed seed: same config + seed gives
//! bit-identical logs, checkpoints and metric reports.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod eval;
pub mod generator;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use config::ExperimentConfig;
pub use data::{Dataset, SynthConfig};
pub use eval::MetricsReport;
pub use model::{HashCode, Modality, ModelConfig, TwoPathwayNet};
pub use trainer::{GanModel, TrainConfig, Trainer};

use thiserror::Error;

/// Crate-wide error type. The [`ErrorCategory`] drives CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Json(_) => ErrorCategory::Data,
            _ => ErrorCategory::Runtime,
        }
    }
}

/// Coarse error class, mapped to distinct process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Runtime => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// FNV-1a over a byte stream. Used for parameter checksums in train logs,
/// where a stable, dependency-free hash matters more than collision
/// resistance.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_distinguishes_inputs() {
        assert_ne!(fnv1a64([1u8, 2, 3]), fnv1a64([1u8, 2, 4]));
        assert_eq!(fnv1a64([]), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            ErrorCategory::Config.exit_code(),
            ErrorCategory::Data.exit_code(),
            ErrorCategory::Runtime.exit_code(),
        ];
        assert!(codes.iter().all(|&c| c != 0));
        assert_eq!(
            codes.len(),
            codes.iter().collect::<std::collections::HashSet<_>>().len()
        );
    }
}
