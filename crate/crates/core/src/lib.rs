//! Fitting iterated function system (IFS) probability models to point clouds
//! with expectation-maximization.
//!
//! An IFS model here is a set of `K` similitudes `x ↦ s·R·x + t` with mixture
//! weights, a vector of depth weights and a post-transform. Truncated at depth
//! `D` it is a finite mixture of spherical Gaussians, one per code in
//! `[1,K]^[0,D]`, which is what the EM engine fits.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, threading and
//! the command line live in the `ifsem` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;

pub mod data;
pub mod em;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod mog;
pub mod numeric;
pub mod render;

pub use data::{Dataset, Points};
pub use em::{EStep, MStepSchedule, Responsibilities, Serial, TrainConfig, TrainHistory, TrainRecord};
pub use error::Error;
pub use geometry::{Similitude, SphericalGaussian};
pub use linalg::Matrix;
pub use model::{Code, CodeTable, IfsModel};
pub use mog::{CovarianceMode, MogModel};

pub type Result<T, E = Error> = core::result::Result<T, E>;
