//! E-step split over worker threads by rows.

use std::thread;

use ifsem_core::em::{e_step_rows, EStep, Responsibilities};
use ifsem_core::{CodeTable, Points};

/// Rows below which extra threads are not worth spawning.
const MIN_ROWS_PER_WORKER: usize = 64;

/// Splits the batch into contiguous row blocks, one per worker. Every row is
/// computed exactly as in the serial E-step, so results do not depend on the
/// worker count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedEStep {
    workers: usize,
}

impl ThreadedEStep {
    pub fn new(workers: usize) -> Self {
        ThreadedEStep { workers: workers.max(1) }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl EStep for ThreadedEStep {
    fn e_step(&self, table: &CodeTable, batch: &Points) -> Responsibilities {
        let (n, m, dim) = (batch.len(), table.len(), batch.dim());
        let mut values = vec![0.0; n * m];
        let workers = self.workers.min(n / MIN_ROWS_PER_WORKER).max(1);
        if workers == 1 {
            e_step_rows(table, batch.as_flat(), dim, &mut values);
        } else {
            let rows_per = n.div_ceil(workers);
            thread::scope(|s| {
                for (rows, out) in batch.as_flat().chunks(rows_per * dim).zip(values.chunks_mut(rows_per * m)) {
                    s.spawn(move || e_step_rows(table, rows, dim, out));
                }
            });
        }
        Responsibilities::from_row_major(n, m, values)
    }
}
