//! HTTP service and batch tools around the drumcritic session engine.

pub mod api;
pub mod commands;
pub mod config;
pub mod error;

pub use config::ServiceConfig;
pub use error::{ServiceError, ServiceResult};
