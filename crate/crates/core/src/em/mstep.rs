use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::estep::{EStep, Responsibilities};
use super::{MStepSchedule, STARVATION_MASS};
use crate::data::Points;
use crate::error::{check_dim, Error};
use crate::geometry::{fit_rotation, Similitude};
use crate::linalg::{self, Matrix};
use crate::model::{CodeTable, IfsModel};
use crate::numeric::normalize_simplex;
use crate::Result;

/// New parameters for one similitude, plus whether the old rotation was kept
/// because the rotation objective was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilitudeUpdate {
    pub similitude: Similitude,
    pub rotation_retained: bool,
}

/// What happened during one [`em_iteration`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationReport {
    pub starved: Vec<usize>,
    pub weights_kept: bool,
    pub rotations_retained: usize,
    /// Largest row-sum error of the responsibility matrix.
    pub row_error: f64,
}

/// `v̂_d ∝ Σ_i Σ_{j : |c_j| = d} P_ij`.
pub fn update_depth_weights(resp: &Responsibilities, table: &CodeTable) -> Vec<f64> {
    let mass = resp.column_mass();
    let mut v = vec![0.0; table.max_depth() + 1];
    for (entry, m) in table.entries().iter().zip(&mass) {
        v[entry.code.len()] += m;
    }
    normalize_simplex(&mut v);
    v
}

/// `ŵ_k ∝` mass of the columns whose code starts with `k`. The empty code
/// does not count. When there is no such mass `previous` is returned and the
/// flag is set.
pub fn update_component_weights(resp: &Responsibilities, table: &CodeTable, previous: &[f64]) -> (Vec<f64>, bool) {
    let mass = resp.column_mass();
    let mut w = vec![0.0; table.k()];
    for (entry, m) in table.entries().iter().zip(&mass) {
        if let Some(first) = entry.code.first() {
            w[first] += m;
        }
    }
    if normalize_simplex(&mut w) {
        (w, false)
    } else {
        (previous.to_vec(), true)
    }
}

/// Positive root of `p·H·s² + b·s − a = 0`, clamped below at `floor`.
/// Returns `floor` when `a = 0`.
pub fn solve_scale(a: f64, b: f64, p: f64, dim: usize, floor: f64) -> f64 {
    if !(a > 0.0) {
        return floor;
    }
    let ph = p * dim as f64;
    let disc = b * b + 4.0 * ph * a;
    // Stable form of (−b + √disc) / (2pH) for b > 0.
    let s = if b > 0.0 { 2.0 * a / (b + disc.sqrt()) } else { (-b + disc.sqrt()) / (2.0 * ph) };
    if s.is_finite() {
        s.max(floor)
    } else {
        floor
    }
}

/// Closed-form maximizer over `(s, R, t)` of
/// `Σ_{i,c} P_{i,c}·[−H ln s − ‖y_i − t − s·R·t_c‖² / (2·s_c²·s²)]`,
/// where each column `c` is a P column paired with the similitude
/// `(s_c, ·, t_c)` whose endpoint is held fixed.
fn closed_form_similitude(
    data: &Points,
    resp: &Responsibilities,
    columns: &[(usize, &Similitude)],
    old: &Similitude,
    scale_floor: f64,
) -> Option<SimilitudeUpdate> {
    let h = data.dim();
    let n = data.len();
    let ncols = columns.len();
    let z: Vec<f64> = columns.iter().map(|(_, f)| 1.0 / (f.scale() * f.scale())).collect();

    // r_i = Σ_c P_ic z_c, q_c = Σ_i P_ic, s_c = Σ_i P_ic y_i
    let mut row_w = vec![0.0; n];
    let mut col_mass = vec![0.0; ncols];
    let mut col_sum = vec![0.0; ncols * h];
    for (i, y) in data.rows().enumerate() {
        let prow = resp.row(i);
        let mut r = 0.0;
        for (c, &(col, _)) in columns.iter().enumerate() {
            let p = prow[col];
            if p == 0.0 {
                continue;
            }
            r += p * z[c];
            col_mass[c] += p;
            for (acc, yv) in col_sum[c * h..(c + 1) * h].iter_mut().zip(y) {
                *acc += p * yv;
            }
        }
        row_w[i] = r;
    }
    let p_total: f64 = col_mass.iter().sum();
    let p_z: f64 = col_mass.iter().zip(&z).map(|(q, z)| q * z).sum();
    if !(p_z >= STARVATION_MASS) || !(p_total > 0.0) {
        return None;
    }

    let mut y_bar = vec![0.0; h];
    for (y, r) in data.rows().zip(&row_w) {
        for (acc, yv) in y_bar.iter_mut().zip(y) {
            *acc += r * yv;
        }
    }
    y_bar.iter_mut().for_each(|v| *v /= p_z);

    let mut t_bar = vec![0.0; h];
    for (c, (_, f)) in columns.iter().enumerate() {
        let wz = col_mass[c] * z[c];
        for (acc, tv) in t_bar.iter_mut().zip(f.translation()) {
            *acc += wz * tv;
        }
    }
    t_bar.iter_mut().for_each(|v| *v /= p_z);

    // A = Σ_c z_c (Σ_i P_ic (y_i − ȳ)) (t_c − t̄)ᵀ
    let mut a_mat = Matrix::zeros(h, h);
    let mut g = vec![0.0; h];
    let mut t_centered = vec![0.0; h];
    for (c, (_, f)) in columns.iter().enumerate() {
        if col_mass[c] == 0.0 {
            continue;
        }
        for d in 0..h {
            g[d] = col_sum[c * h + d] - col_mass[c] * y_bar[d];
            t_centered[d] = f.translation()[d] - t_bar[d];
        }
        a_mat.add_outer(z[c], &g, &t_centered);
    }

    let a: f64 = data.rows().zip(&row_w).map(|(y, r)| r * linalg::dist_sq(y, &y_bar)).sum();

    let fit = fit_rotation(&a_mat);
    let (rotation, rotation_retained) = if fit.rank_deficient
        && a_mat.frobenius_dot(old.rotation()) >= fit.objective - 1e-12 * (1.0 + fit.objective.abs())
    {
        (old.rotation().clone(), true)
    } else {
        (fit.rotation, false)
    };
    let b = a_mat.frobenius_dot(&rotation);
    let scale = solve_scale(a, b, p_total, h, scale_floor);
    let rotated = rotation.mul_vec(&t_bar);
    let translation: Vec<f64> = y_bar.iter().zip(&rotated).map(|(y, r)| y - scale * r).collect();
    Some(SimilitudeUpdate { similitude: Similitude::from_parts(scale, rotation, translation), rotation_retained })
}

/// Closed-form update of component `k`.
///
/// `y` is the batch mapped through the inverse of the current post-transform.
/// `inner` holds the code tails (codes of length `0..=D−1`, composed without
/// the post-transform) and `resp` the responsibilities over the full depth-`D`
/// table. Returns `None` when the component has no responsibility mass.
pub fn update_component(
    k: usize,
    resp: &Responsibilities,
    y: &Points,
    inner: &CodeTable,
    old: &Similitude,
    scale_floor: f64,
) -> Result<Option<SimilitudeUpdate>> {
    check_dim(old.dim(), y.dim())?;
    check_dim(resp.rows(), y.len())?;
    if k >= inner.k() {
        return Err(Error::InvalidParameter(format!("component {k} out of range")));
    }
    check_dim(inner.depth_offset(inner.max_depth() + 2), resp.cols())?;
    let columns: Vec<(usize, &Similitude)> =
        inner.entries().iter().enumerate().map(|(j, e)| (inner.prefixed_index(k, j, e.code.len()), &e.inner)).collect();
    Ok(closed_form_similitude(y, resp, &columns, old, scale_floor))
}

/// Closed-form update of the post-transform from the raw batch `x` and the
/// inner table over all codes of length `0..=D` (without post-transform).
pub fn update_post(
    resp: &Responsibilities,
    x: &Points,
    inner: &CodeTable,
    old: &Similitude,
    scale_floor: f64,
) -> Result<Option<SimilitudeUpdate>> {
    check_dim(old.dim(), x.dim())?;
    check_dim(resp.rows(), x.len())?;
    check_dim(inner.len(), resp.cols())?;
    let columns: Vec<(usize, &Similitude)> = inner.entries().iter().enumerate().map(|(j, e)| (j, &e.inner)).collect();
    Ok(closed_form_similitude(x, resp, &columns, old, scale_floor))
}

/// One full EM iteration on `batch`.
pub fn em_iteration<E: EStep + ?Sized>(
    model: &IfsModel,
    batch: &Points,
    estep: &E,
    schedule: MStepSchedule,
    scale_floor: f64,
) -> Result<(IfsModel, IterationReport)> {
    check_dim(model.dim(), batch.dim())?;
    if batch.is_empty() {
        return Err(Error::InvalidData("EM iteration on an empty batch".into()));
    }
    let table = model.density_table()?;
    let resp = estep.e_step(&table, batch);
    let mut report = IterationReport { row_error: resp.max_row_error(), ..Default::default() };

    let v = update_depth_weights(&resp, &table);
    let (w, weights_kept) = update_component_weights(&resp, &table, model.weights());
    report.weights_kept = weights_kept;

    let mut next = model.clone();
    if model.depth() >= 1 {
        let y = batch.map(&model.post().invert())?;
        let tails = CodeTable::build(model, model.depth() - 1, false)?;
        for (k, old) in model.components().iter().enumerate() {
            match update_component(k, &resp, &y, &tails, old, scale_floor)? {
                Some(update) => {
                    report.rotations_retained += usize::from(update.rotation_retained);
                    next.set_component(k, update.similitude)?;
                }
                None => report.starved.push(k),
            }
        }
    }

    let post_update = match schedule {
        MStepSchedule::Simultaneous => update_post(&resp, batch, &table, model.post(), scale_floor)?,
        MStepSchedule::Sequential => {
            let inner = CodeTable::build(&next, next.depth(), false)?;
            update_post(&resp, batch, &inner, model.post(), scale_floor)?
        }
    };
    if let Some(update) = post_update {
        report.rotations_retained += usize::from(update.rotation_retained);
        next.set_post(update.similitude)?;
    }

    next.set_weights(w)?;
    next.set_depth_weights(v)?;
    Ok((next, report))
}
