//! File formats, threaded E-step, experiment pipelines and the command line
//! for `ifsem-core`.

pub mod cli;
pub mod csv;
mod error;
pub mod formats;
pub mod parallel;
pub mod pipeline;

pub use error::{IoError, Result};
