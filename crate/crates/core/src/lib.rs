//! Orchestrates test-driven development sessions in which a chat model writes
//! tests and production code, one minimal iteration at a time.

pub mod clock;
pub mod harness;
pub mod integrate;
pub mod metrics;
pub mod prompt;
pub mod provider;
pub mod session;
pub mod source;
pub mod workflow;
