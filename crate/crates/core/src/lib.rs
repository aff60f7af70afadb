//! Core model and runtime for a containerized mobile-network lab controller.

pub mod catalog;
pub mod engine;
pub mod hash;
pub mod hosts;
pub mod lab;
pub mod manifest;
pub mod monitor;
pub mod netplan;
pub mod orchestrator;
pub mod report;
pub mod settings;
pub mod subscribers;
pub mod validate;
pub mod yaml;

use thiserror::Error;

/// Failure to load a YAML document into a typed model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error(transparent)]
    Syntax(#[from] yaml::SyntaxError),
    #[error(transparent)]
    Schema(#[from] yaml::SchemaError),
}
