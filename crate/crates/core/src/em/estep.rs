use alloc::vec;
use alloc::vec::Vec;

use crate::data::Points;
use crate::model::CodeTable;
use crate::numeric::softmax_in_place;

/// Row-stochastic `N'×M` matrix of code posteriors, rows aligned with the
/// batch and columns with the canonical code order.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    /// Wraps row-major values. Panics on a shape mismatch.
    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "responsibility shape mismatch");
        Responsibilities { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Total mass per column.
    pub fn column_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            for (m, p) in mass.iter_mut().zip(row) {
                *m += p;
            }
        }
        mass
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.values.chunks_exact(self.cols).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Strategy for computing the E-step; lets callers parallelize over rows.
pub trait EStep {
    fn e_step(&self, table: &CodeTable, batch: &Points) -> Responsibilities;
}

/// Single-threaded E-step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl EStep for Serial {
    fn e_step(&self, table: &CodeTable, batch: &Points) -> Responsibilities {
        e_step(table, batch)
    }
}

/// `P_ij ∝ exp(log_prior_j + ln N_j(x_i))`, normalized per row in log space.
/// `table` must include the post-transform.
pub fn e_step(table: &CodeTable, batch: &Points) -> Responsibilities {
    let mut values = vec![0.0; batch.len() * table.len()];
    e_step_rows(table, batch.as_flat(), batch.dim(), &mut values);
    Responsibilities::from_row_major(batch.len(), table.len(), values)
}

/// E-step over a contiguous block of rows: `rows` holds points of dimension
/// `dim` back to back and `out` receives one normalized row per point.
pub fn e_step_rows(table: &CodeTable, rows: &[f64], dim: usize, out: &mut [f64]) {
    let m = table.len();
    for (x, row) in rows.chunks_exact(dim).zip(out.chunks_exact_mut(m)) {
        table.log_joint_into(x, row);
        softmax_in_place(row);
    }
}
