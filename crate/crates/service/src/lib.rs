//! Sketching sessions over the composition proposer and object generators, served over HTTP.

pub mod canvas;
pub mod cli;
pub mod engine;
pub mod error;
pub mod http;
pub mod service;
pub mod session;

pub use error::{Result, ServiceError};
