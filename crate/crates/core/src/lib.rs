//! Benchmark harness for tuning the transverse beam parameters of a
//! five-magnet beamline section with classical optimisers and with
//! chat-completion language models.

pub mod config;
pub mod harness;
pub mod llm;
pub mod optics;
pub mod optimizers;
pub mod prompts;
pub mod task;
