//! HTTP control plane and command line for the lab controller.

pub mod api;
pub mod cli;
pub mod service;

pub use api::{router, ApiError};
pub use service::LabService;
