//! Reconstruction and synthesis of survival evidence from published
//! Kaplan-Meier figures.

pub mod casestudy;
pub mod digitizer;
pub mod error;
pub mod io;
pub mod model;
pub mod projection;
pub mod reconstruct;
pub mod report;
pub mod similarity;
pub mod simulate;
pub mod synthesis;
pub mod validate;

pub use error::{Error, Result};
