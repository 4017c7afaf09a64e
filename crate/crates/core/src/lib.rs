//! Train/test overlap auditing, unit-level near-duplicate removal and
//! leakage-stratified evaluation for dialogue corpora.
//!
//! The pipeline reads dialogue units, measures bag-of-words overlap between
//! them, removes near-duplicate units until none remain above a threshold,
//! re-splits the survivors with a seeded shuffle and drops exact duplicate
//! (context, response) samples. [`report`] then scores a memorizing lookup
//! model separately on overlapping and clean test samples.

pub mod cli;
pub mod corpus;
pub mod dedup;
pub mod error;
pub mod metrics;
pub mod overlap;
pub mod report;
pub mod split;

pub use error::{Error, Result};
