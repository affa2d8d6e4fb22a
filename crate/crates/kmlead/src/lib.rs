//! Command-line pipeline and HTTP digitization service on top of
//! `kmlead-core`.

pub mod config;
pub mod demo;
pub mod error;
pub mod pipeline;
pub mod service;

pub use error::{Error, Result};
