//! File formats, reports and the `protoalign` command-line driver on top of
//! [`protoalign_core`].

pub mod checkpoint;
pub mod cli;
pub mod emb1;
pub mod output;
pub mod report;
pub mod stats;

pub use protoalign_core as core;
