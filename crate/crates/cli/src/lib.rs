//! Command-line driver and local HTTP service for aitdd sessions.

pub mod commands;
pub mod config;
pub mod server;
