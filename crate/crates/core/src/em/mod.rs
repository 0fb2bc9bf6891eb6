//! The IFS expectation-maximization engine.
//!
//! One iteration computes the responsibility matrix `P` over the code table
//! (E-step), then closed-form updates of the depth weights, the component
//! weights, every component similitude and the post-transform (M-step).
//! Component updates hold the endpoint Gaussians of the code tails fixed at
//! their current values, so each update maximizes a simplified objective
//! rather than the exact expected log-likelihood.

mod estep;
mod mstep;
mod train;

use alloc::vec::Vec;

pub use estep::{e_step, e_step_rows, EStep, Responsibilities, Serial};
pub use mstep::{
    em_iteration, solve_scale, update_component, update_component_weights, update_depth_weights, update_post,
    IterationReport, SimilitudeUpdate,
};
pub use train::{fit, fit_from, has_converged, init_random, pre_select, Clock, NoClock, Trainer};

/// Responsibility mass below which a component counts as starved.
pub const STARVATION_MASS: f64 = 1e-300;

/// How the component and post-transform updates of one M-step are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MStepSchedule {
    /// Components are updated from the current model; the post-transform is
    /// then fitted against the updated components (same responsibilities).
    #[default]
    Sequential,
    /// Components and post-transform are both fitted against the current
    /// model and applied together.
    Simultaneous,
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of components `K`.
    pub k: usize,
    /// Maximum depth `D`.
    pub depth: usize,
    pub iterations: usize,
    /// Minibatch size `N'`; clamped to the data size.
    pub minibatch: usize,
    /// Number of pre-selection candidates.
    pub pool_size: usize,
    pub pre_iterations: usize,
    pub pre_depth: usize,
    pub pre_minibatch: usize,
    /// Seed used by the pipelines that own the random stream.
    pub seed: u64,
    pub scale_floor: f64,
    pub convergence_threshold: f64,
    pub restarts: usize,
    pub schedule: MStepSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            depth: 6,
            iterations: 300,
            minibatch: 500,
            pool_size: 10,
            pre_iterations: 100,
            pre_depth: 3,
            pre_minibatch: 500,
            seed: 0,
            scale_floor: 1e-6,
            convergence_threshold: 0.95,
            restarts: 1,
            schedule: MStepSchedule::Sequential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::InvalidParameter;
        if self.k == 0 || self.minibatch == 0 || self.pool_size == 0 || self.restarts == 0 {
            return Err(InvalidParameter("k, minibatch, pool size and restarts must be at least 1".into()));
        }
        if self.pre_minibatch == 0 {
            return Err(InvalidParameter("pre-selection minibatch must be at least 1".into()));
        }
        if !(self.scale_floor > 0.0) {
            return Err(InvalidParameter("scale floor must be positive".into()));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold <= 1.0) {
            return Err(InvalidParameter("convergence threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Whether training starts from a single random model instead of a
    /// pre-selected one.
    pub fn skips_pre_selection(&self) -> bool {
        self.pool_size == 1 && self.pre_iterations == 0
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    /// Mean log-likelihood of the held-out points after the iteration.
    pub mean_ll_test: Option<f64>,
    pub mean_depth: f64,
    pub depth_weights: Vec<f64>,
    /// Wall-clock seconds since training began, when a clock is attached.
    pub seconds: Option<f64>,
    /// Components that kept their parameters for lack of responsibility.
    pub starved: Vec<usize>,
    /// The component weights were kept because no depth ≥ 1 mass was left.
    pub weights_kept: bool,
}

pub type TrainHistory = Vec<TrainRecord>;
