//! Joint training of a small text classifier (the student) and a prefix
//! proposing language model (the teaching assistant, TA).
//!
//! Each epoch trains the student on prefix-augmented inputs, freezes it,
//! grows a score-sorted history of TA-proposed prefixes, cuts that history
//! into sliding-window chat examples and fine-tunes the TA on them.

pub mod cli;
pub mod dataset;
pub mod dialogue_gradient;
pub mod error;
pub mod history;
pub mod metrics;
pub mod report;
pub mod student;
pub mod ta;
pub mod trainer;

pub use error::{Error, Result};
