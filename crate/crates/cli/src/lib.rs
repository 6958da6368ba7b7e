//! Library surface of the `grouppref` CLI: experiment configuration, file
//! formats, the pipeline orchestrator, and the verification suites. The
//! binary in `main.rs` is a thin argument-parsing layer over these.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod verify;
