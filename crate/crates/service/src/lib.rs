//! HTTP service and command line around the history-matching pipeline.

pub mod api;
pub mod cli;
pub mod input;
pub mod llm;
pub mod sessions;
