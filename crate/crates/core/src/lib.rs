//! Secret and private key construction from correlated binary sources.
//!
//! Terminals observing correlated i.i.d. binary sequences agree on a key by
//! publishing syndromes of a binary linear code: the receiving side recovers
//! the sender's sequence with a coset-leader (maximum likelihood) decoder,
//! and both sides read the key off a common standard array, or off a table
//! of equiprobable "regular subsets" when the source is not uniform.
//!
//! The crate is organised bottom-up:
//!
//! * [`bits`] and [`code`]: GF(2) vectors, matrices and the code catalog.
//! * [`source`]: the four correlated source models, typicality, capacities.
//! * [`keys`]: mapping reconstructed sequences to key values.
//! * [`protocol`]: end-to-end runs producing transcripts and keys.
//! * [`analysis`]: exact and Monte-Carlo evaluation of agreement, secrecy
//!   and uniformity.
//! * [`config`], [`report`], [`runner`], [`acceptance`]: experiment plumbing
//!   used by the `swkey` command-line tool.

pub mod acceptance;
pub mod analysis;
pub mod bits;
pub mod code;
pub mod config;
pub mod keys;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod seed;
pub mod source;

pub use bits::{BitMatrix, BitVector};
pub use code::{CodeSpec, LinearCode, StandardArrayIndex};
pub use keys::{ExtractionParams, KeyRange, KeyValue, Provenance, RegularSubsetTable};
pub use protocol::{ProtocolOutcome, Transcript};
pub use source::{Model1Params, Model2Params, Model3Params, Model4Params, SequenceTuple, SourceModel};

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parity-check matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("{what} exceeds the enumeration cap ({detail}); use the empirical (Monte-Carlo) path instead")]
    CapExceeded { what: String, detail: String },
    #[error("no key: {0}")]
    NoKey(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn cap(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::CapExceeded {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
