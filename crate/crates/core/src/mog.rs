//! Mixture-of-Gaussians baselines with spherical or full covariances, trained
//! by full-batch EM.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::Rng;

use crate::data::Points;
use crate::error::{check_dim, Error};
use crate::linalg::{cholesky, dist_sq, forward_substitute, norm_sq, Matrix};
use crate::numeric::{ln_weight, log_sum_exp, normalize_simplex, softmax_in_place, LN_2PI};
use crate::Result;

/// Variance below which a component counts as collapsed.
pub const COLLAPSE_VARIANCE: f64 = 1e-12;
/// Relative ridge added to full covariances: `ratio · trace / H`.
pub const RIDGE_RATIO: f64 = 1e-9;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Spherical,
    Full,
}

impl CovarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceMode::Spherical => "spherical",
            CovarianceMode::Full => "full",
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" | "iso" => Ok(CovarianceMode::Spherical),
            "full" => Ok(CovarianceMode::Full),
            other => Err(Error::InvalidParameter(alloc::format!(
                "unknown covariance mode '{other}' (expected spherical or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// Per-component variance `σ²`.
    Spherical(Vec<f64>),
    /// Per-component covariance and its lower Cholesky factor.
    Full(Vec<(Matrix, Matrix)>),
}

/// Weighted mixture of `K` Gaussians in `R^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct MogModel {
    means: Vec<Vec<f64>>,
    shape: Shape,
    weights: Vec<f64>,
}

fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::InvalidParameter("need one weight per component".into()));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidParameter("weights must form a probability vector".into()));
    }
    Ok(())
}

fn check_means(means: &[Vec<f64>]) -> Result<usize> {
    let dim = means.first().map(Vec::len).ok_or_else(|| Error::InvalidParameter("K must be at least 1".into()))?;
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    for m in means {
        check_dim(dim, m.len())?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("means must be finite".into()));
        }
    }
    Ok(dim)
}

impl MogModel {
    pub fn spherical(means: Vec<Vec<f64>>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_means(&means)?;
        if variances.len() != means.len() || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("need one positive finite variance per component".into()));
        }
        check_weights(&weights, means.len())?;
        Ok(MogModel { means, shape: Shape::Spherical(variances), weights })
    }

    pub fn full(means: Vec<Vec<f64>>, covariances: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        let dim = check_means(&means)?;
        if covariances.len() != means.len() {
            return Err(Error::InvalidParameter("need one covariance per component".into()));
        }
        let mut shape = Vec::with_capacity(covariances.len());
        for c in covariances {
            if c.rows() != dim || c.cols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.rows() });
            }
            let asym = c.sub(&c.transpose()).frobenius_norm();
            if asym > 1e-9 * (1.0 + c.frobenius_norm()) {
                return Err(Error::InvalidParameter("covariance must be symmetric".into()));
            }
            let l =
                cholesky(&c).ok_or_else(|| Error::InvalidParameter("covariance must be positive definite".into()))?;
            shape.push((c, l));
        }
        check_weights(&weights, means.len())?;
        Ok(MogModel { means, shape: Shape::Full(shape), weights })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn mode(&self) -> CovarianceMode {
        match self.shape {
            Shape::Spherical(_) => CovarianceMode::Spherical,
            Shape::Full(_) => CovarianceMode::Full,
        }
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-component variances in spherical mode.
    pub fn variances(&self) -> Option<&[f64]> {
        match &self.shape {
            Shape::Spherical(v) => Some(v),
            Shape::Full(_) => None,
        }
    }

    /// Covariance matrix of component `j` (`σ²I` in spherical mode).
    pub fn covariance(&self, j: usize) -> Matrix {
        match &self.shape {
            Shape::Spherical(v) => Matrix::identity(self.dim()).scaled(v[j]),
            Shape::Full(c) => c[j].0.clone(),
        }
    }

    fn component_log_density(&self, j: usize, x: &[f64], buf: &mut [f64]) -> f64 {
        let h = self.dim() as f64;
        match &self.shape {
            Shape::Spherical(v) => -0.5 * (h * (LN_2PI + v[j].ln()) + dist_sq(x, &self.means[j]) / v[j]),
            Shape::Full(c) => {
                let l = &c[j].1;
                for ((b, xi), mi) in buf.iter_mut().zip(x).zip(&self.means[j]) {
                    *b = xi - mi;
                }
                let diff = buf.to_vec();
                forward_substitute(l, &diff, buf);
                let log_det: f64 = (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
                -0.5 * (h * LN_2PI + log_det + norm_sq(buf))
            }
        }
    }

    fn log_joint_into(&self, x: &[f64], out: &mut [f64], buf: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let lw = ln_weight(self.weights[j]);
            *o = if lw == f64::NEG_INFINITY { lw } else { lw + self.component_log_density(j, x, buf) };
        }
    }

    /// `ln Σ_j w_j N_j(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.k()];
        let mut buf = vec![0.0; self.dim()];
        self.log_joint_into(x, &mut out, &mut buf);
        Ok(log_sum_exp(&out))
    }

    pub fn mean_log_likelihood(&self, points: &Points) -> Result<f64> {
        check_dim(self.dim(), points.dim())?;
        if points.is_empty() {
            return Err(Error::InvalidData("cannot score an empty point set".into()));
        }
        let mut out = vec![0.0; self.k()];
        let mut buf = vec![0.0; self.dim()];
        let total: f64 = points
            .rows()
            .map(|x| {
                self.log_joint_into(x, &mut out, &mut buf);
                log_sum_exp(&out)
            })
            .sum();
        Ok(total / points.len() as f64)
    }
}

/// Log-density of a mixture at `x`.
pub fn mog_log_density(model: &MogModel, x: &[f64]) -> Result<f64> {
    model.log_density(x)
}

fn global_covariance(data: &Points, mean: &[f64]) -> Matrix {
    let dim = data.dim();
    let mut cov = Matrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    let w = 1.0 / data.len() as f64;
    for x in data.rows() {
        for ((d, xi), mi) in diff.iter_mut().zip(x).zip(mean) {
            *d = xi - mi;
        }
        cov.add_outer(w, &diff, &diff);
    }
    cov
}

fn regularized(mut cov: Matrix) -> Matrix {
    let dim = cov.rows();
    let ridge = RIDGE_RATIO * cov.trace() / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    // Exact symmetry so the check in `MogModel::full` never trips on rounding.
    for i in 0..dim {
        for j in 0..i {
            let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = avg;
            cov[(j, i)] = avg;
        }
    }
    cov
}

struct Spread {
    variance: f64,
    covariance: Matrix,
}

fn data_spread(data: &Points) -> Result<Spread> {
    let mean = data.mean();
    let covariance = global_covariance(data, &mean);
    let variance = covariance.trace() / data.dim() as f64;
    if !(variance >= COLLAPSE_VARIANCE) {
        return Err(Error::InvalidData("data has no spread".into()));
    }
    Ok(Spread { variance, covariance: regularized(covariance) })
}

/// Means on `K` distinct random data points, every variance (or covariance)
/// set to the global one, uniform weights.
pub fn init_mog<R: Rng + ?Sized>(data: &Points, k: usize, mode: CovarianceMode, rng: &mut R) -> Result<MogModel> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::InvalidData(alloc::format!("need at least K = {k} points, got {}", data.len())));
    }
    let spread = data_spread(data)?;
    let means: Vec<Vec<f64>> =
        rand::seq::index::sample(rng, data.len(), k).into_iter().map(|i| data.row(i).to_vec()).collect();
    let weights = vec![1.0 / k as f64; k];
    match mode {
        CovarianceMode::Spherical => MogModel::spherical(means, vec![spread.variance; k], weights),
        CovarianceMode::Full => MogModel::full(means, vec![spread.covariance; k], weights),
    }
}

/// One full-batch EM iteration. Returns the updated model and the mean
/// training log-likelihood of the input model.
fn mog_iteration<R: Rng + ?Sized>(
    model: &MogModel,
    data: &Points,
    spread: &Spread,
    rng: &mut R,
) -> Result<(MogModel, f64)> {
    let (k, dim, n) = (model.k(), model.dim(), data.len());
    let mut mass = vec![0.0; k];
    let mut sums = vec![vec![0.0; dim]; k];
    let mut resp = vec![0.0; n * k];
    let mut buf = vec![0.0; dim];
    let mut ll = 0.0;
    for (x, row) in data.rows().zip(resp.chunks_exact_mut(k)) {
        model.log_joint_into(x, row, &mut buf);
        ll += softmax_in_place(row);
        for j in 0..k {
            mass[j] += row[j];
            for (s, xi) in sums[j].iter_mut().zip(x) {
                *s += row[j] * xi;
            }
        }
    }
    let mut means: Vec<Vec<f64>> = sums.iter().zip(&mass).map(|(s, m)| s.iter().map(|v| v / m).collect()).collect();

    let mut variances = vec![0.0; k];
    let mut covs = vec![Matrix::zeros(dim, dim); k];
    let mut diff = vec![0.0; dim];
    for (x, row) in data.rows().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            if row[j] == 0.0 {
                continue;
            }
            match model.mode() {
                CovarianceMode::Spherical => variances[j] += row[j] * dist_sq(x, &means[j]),
                CovarianceMode::Full => {
                    for ((d, xi), mi) in diff.iter_mut().zip(x).zip(&means[j]) {
                        *d = xi - mi;
                    }
                    covs[j].add_outer(row[j], &diff, &diff);
                }
            }
        }
    }
    let mut weights: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
    for j in 0..k {
        let collapsed = match model.mode() {
            CovarianceMode::Spherical => {
                variances[j] /= dim as f64 * mass[j];
                !(variances[j] >= COLLAPSE_VARIANCE)
            }
            CovarianceMode::Full => {
                covs[j] = covs[j].scaled(1.0 / mass[j]);
                let ok = covs[j].trace() / dim as f64 >= COLLAPSE_VARIANCE;
                if ok {
                    covs[j] = regularized(core::mem::replace(&mut covs[j], Matrix::zeros(0, 0)));
                }
                !ok || cholesky(&covs[j]).is_none()
            }
        };
        if collapsed {
            means[j] = data.row(rng.random_range(0..n)).to_vec();
            variances[j] = spread.variance;
            covs[j] = spread.covariance.clone();
            if !(weights[j] > 0.0) {
                weights[j] = 1.0 / k as f64;
            }
        }
    }
    if !normalize_simplex(&mut weights) {
        return Err(Error::InvalidData("mixture weights vanished".to_string()));
    }
    let next = match model.mode() {
        CovarianceMode::Spherical => MogModel::spherical(means, variances, weights)?,
        CovarianceMode::Full => MogModel::full(means, covs, weights)?,
    };
    Ok((next, ll / n as f64))
}

/// Runs `iterations` EM steps from `initial`. Returns the final model and the
/// mean training log-likelihood before every iteration and after the last
/// (`iterations + 1` values).
pub fn fit_mog_from<R: Rng + ?Sized>(
    initial: MogModel,
    data: &Points,
    iterations: usize,
    rng: &mut R,
) -> Result<(MogModel, Vec<f64>)> {
    check_dim(initial.dim(), data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot fit an empty data set".into()));
    }
    let spread = data_spread(data)?;
    let mut model = initial;
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (next, ll) = mog_iteration(&model, data, &spread, rng)?;
        trace.push(ll);
        model = next;
    }
    trace.push(model.mean_log_likelihood(data)?);
    Ok((model, trace))
}

/// [`init_mog`] followed by [`fit_mog_from`].
pub fn fit_mog_traced<R: Rng + ?Sized>(
    data: &Points,
    k: usize,
    mode: CovarianceMode,
    iterations: usize,
    rng: &mut R,
) -> Result<(MogModel, Vec<f64>)> {
    let initial = init_mog(data, k, mode, rng)?;
    fit_mog_from(initial, data, iterations, rng)
}

/// Fits a `K`-component mixture by full-batch EM.
pub fn fit_mog<R: Rng + ?Sized>(
    data: &Points,
    k: usize,
    mode: CovarianceMode,
    iterations: usize,
    rng: &mut R,
) -> Result<MogModel> {
    fit_mog_traced(data, k, mode, iterations, rng).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per: usize, spread: f64) -> Points {
        let mut p = Points::new(2);
        for c in centers {
            for _ in 0..per {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                p.push(&[c[0] + spread * x, c[1] + spread * y]).unwrap();
            }
        }
        p
    }

    #[test]
    fn standard_normal_at_origin() {
        let m = MogModel::spherical(vec![vec![0.0, 0.0]], vec![1.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(m.log_density(&[0.0, 0.0]).unwrap(), -1.837877, epsilon = 1e-6);
        let f = MogModel::full(vec![vec![0.0, 0.0]], vec![Matrix::identity(2)], vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            f.log_density(&[0.3, -1.2]).unwrap(),
            m.log_density(&[0.3, -1.2]).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_weight_component_is_irrelevant() {
        let a = MogModel::spherical(vec![vec![1.0], vec![5.0]], vec![0.5, 2.0], vec![1.0, 0.0]).unwrap();
        let b = MogModel::spherical(vec![vec![1.0], vec![-7.0]], vec![0.5, 9.0], vec![1.0, 0.0]).unwrap();
        for x in [-3.0, 0.0, 1.0, 4.5] {
            assert_eq!(a.log_density(&[x]).unwrap(), b.log_density(&[x]).unwrap());
        }
    }

    #[test]
    fn matches_linear_space_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let means: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let covs: Vec<Matrix> = (0..3)
                .map(|_| {
                    let a = Matrix::from_row_major(2, 2, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
                    let mut c = a.matmul(&a.transpose());
                    c[(0, 0)] += 0.2;
                    c[(1, 1)] += 0.2;
                    c
                })
                .collect();
            let mut w: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            normalize_simplex(&mut w);
            let model = MogModel::full(means.clone(), covs.clone(), w.clone()).unwrap();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut naive = 0.0;
            for j in 0..3 {
                let c = &covs[j];
                let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
                let inv = [[c[(1, 1)] / det, -c[(0, 1)] / det], [-c[(1, 0)] / det, c[(0, 0)] / det]];
                let d = [x[0] - means[j][0], x[1] - means[j][1]];
                let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
                naive += w[j] * (-0.5 * q).exp() / (2.0 * core::f64::consts::PI * det.sqrt());
            }
            let got = model.log_density(&x).unwrap().exp();
            assert!((got - naive).abs() <= 1e-9 * naive);
        }
    }

    #[test]
    fn single_component_is_gaussian_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = gaussian_blobs(&mut rng, &[[1.0, -2.0]], 500, 0.7);
        let m = fit_mog(&data, 1, CovarianceMode::Spherical, 3, &mut rng).unwrap();
        let mean = data.mean();
        let var = data.rows().map(|x| dist_sq(x, &mean)).sum::<f64>() / (2.0 * data.len() as f64);
        assert_abs_diff_eq!(m.means()[0][0], mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.means()[0][1], mean[1], epsilon = 1e-12);
        assert_abs_diff_eq!(m.variances().unwrap()[0], var, epsilon = 1e-12);
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn recovers_three_clusters() {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = gaussian_blobs(&mut rng, &centers, 300, 0.1);
        let m = fit_mog(&data, 3, CovarianceMode::Spherical, 100, &mut rng).unwrap();
        for c in &centers {
            let best = m.means().iter().map(|mu| dist_sq(mu, c).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "{best}");
        }
    }

    #[test]
    fn training_likelihood_is_monotone() {
        let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        for mode in [CovarianceMode::Spherical, CovarianceMode::Full] {
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = gaussian_blobs(&mut rng, &centers, 100, 0.8);
                let (_, trace) = fit_mog_traced(&data, 3, mode, 60, &mut rng).unwrap();
                assert_eq!(trace.len(), 61);
                for w in trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{mode}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn full_dominates_spherical_on_anisotropic_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut data = Points::new(2);
        for _ in 0..400 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            data.push(&[3.0 * a, 0.5 * a + 0.2 * b]).unwrap();
        }
        let s = fit_mog(&data, 1, CovarianceMode::Spherical, 5, &mut rng).unwrap();
        let f = fit_mog(&data, 1, CovarianceMode::Full, 5, &mut rng).unwrap();
        assert!(f.mean_log_likelihood(&data).unwrap() >= s.mean_log_likelihood(&data).unwrap() - 1e-6);
    }

    #[test]
    fn collapse_reinitializes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Points::from_flat(1, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        // A component sitting exactly on the repeated point with a tiny variance.
        let initial = MogModel::spherical(vec![vec![0.0], vec![2.0]], vec![1e-14, 1.0], vec![0.5, 0.5]).unwrap();
        let (m, _) = fit_mog_from(initial, &data, 3, &mut rng).unwrap();
        assert!(m.variances().unwrap().iter().all(|v| *v >= COLLAPSE_VARIANCE));
        assert!(m.means().iter().all(|mu| mu[0].is_finite()));
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let two = Points::from_flat(1, vec![0.0, 1.0]).unwrap();
        assert!(fit_mog(&two, 3, CovarianceMode::Spherical, 1, &mut rng).is_err());
        let flat = Points::from_flat(1, vec![2.0; 5]).unwrap();
        assert!(fit_mog(&flat, 1, CovarianceMode::Spherical, 1, &mut rng).is_err());
        assert!(MogModel::spherical(vec![vec![0.0]], vec![0.0], vec![1.0]).is_err());
        assert!(MogModel::spherical(vec![vec![0.0]], vec![1.0], vec![0.9]).is_err());
        let not_pd = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(MogModel::full(vec![vec![0.0, 0.0]], vec![not_pd], vec![1.0]).is_err());
        assert_eq!("iso".parse::<CovarianceMode>().unwrap(), CovarianceMode::Spherical);
        assert!("diag".parse::<CovarianceMode>().is_err());
    }
}
