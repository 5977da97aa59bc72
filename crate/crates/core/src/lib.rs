pub mod agents;
pub mod config;
pub mod context;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod ingest;
pub mod llm;
pub mod memory;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod sample;
pub mod triage;
pub mod verify;

pub use error::{Error, Result};
