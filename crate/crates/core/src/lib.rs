//! Evaluation harness for prompting strategies on binary sarcasm detection.
//!
//! The pipeline is: load a [`datasets::Dataset`], freeze a
//! [`runner::RunManifest`], execute a [`strategies::StrategyId`] for every
//! sample through a [`llm::CompletionClient`], then score the records and
//! render [`report`] tables.

pub mod datasets;
pub mod domain;
pub mod error;
pub mod llm;
pub mod report;
pub mod runner;
pub mod strategies;

pub use error::{Error, Result};
