//! Post-hoc vision-language alignment with recycled classifier heads.
//!
//! The rows of a supervised classifier head `W x + b` behave like class
//! prototypes in the image feature space. This crate pairs those rows with
//! text embeddings of the class names and uses the resulting datasets to fit
//! lightweight aligners (a two-layer GELU MLP, a single linear map, and a
//! CCA-based shared space), then scores the result with retrieval,
//! classification and modality-gap statistics.
//!
//! Everything here operates on precomputed embeddings held in memory. The
//! crate is `#![no_std]` and only needs `alloc`; file formats, reports and the
//! command-line driver live in the `protoalign` crate.
//!
//! Numerics are carried out in `f64`. Randomness always flows from an
//! explicit 64-bit seed through [`rng::SeededRng`], so every routine is
//! reproducible bit-for-bit.

#![no_std]

extern crate alloc;

pub mod aligners;
pub mod classify;
pub mod dataset;
mod error;
pub mod gapstats;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod synth;

pub use aligners::{Aligner, CsaAligner, GapKind, GapTransform, LinearAligner, MlpAligner};
pub use dataset::{AlignmentDataset, ClassHead, EmbeddingMatrix, Origin};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use optim::{Loss, TrainConfig};
