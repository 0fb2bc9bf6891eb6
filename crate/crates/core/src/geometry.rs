//! Similitudes, spherical Gaussians and the rotation estimators shared by the
//! M-step updates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error};
use crate::linalg::{self, Matrix};
use crate::numeric::LN_2PI;
use crate::Result;

/// Tolerance on `‖RᵀR − I‖_F` and `|det R − 1|` for a valid rotation.
pub const ROTATION_TOL: f64 = 1e-9;

/// Singular-value ratio below which [`optimal_rotation`] is not unique.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-12;

/// The map `x ↦ s·R·x + t` with `s > 0` and `R` a proper rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Similitude {
    scale: f64,
    rotation: Matrix,
    translation: Vec<f64>,
}

impl Similitude {
    pub fn new(scale: f64, rotation: Matrix, translation: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(scale, rotation, translation, ROTATION_TOL)
    }

    /// Like [`Similitude::new`] but checks the rotation invariants against
    /// `tol` instead of [`ROTATION_TOL`].
    pub fn with_tolerance(scale: f64, rotation: Matrix, translation: Vec<f64>, tol: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        if !rotation.is_square() {
            return Err(Error::InvalidParameter("rotation must be square".into()));
        }
        check_dim(rotation.rows(), translation.len())?;
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("translation must be finite".into()));
        }
        let orth = rotation.orthogonality_error();
        let det = rotation.determinant();
        if !(orth <= tol) || !((det - 1.0).abs() <= tol) {
            return Err(Error::InvalidParameter(format!(
                "not a proper rotation (orthogonality error {orth:.3e}, det {det})"
            )));
        }
        Ok(Similitude { scale, rotation, translation })
    }

    /// Assembles a similitude whose invariants the caller already guarantees.
    pub(crate) fn from_parts(scale: f64, rotation: Matrix, translation: Vec<f64>) -> Self {
        debug_assert!(scale > 0.0);
        debug_assert_eq!(rotation.rows(), translation.len());
        Similitude { scale, rotation, translation }
    }

    pub fn identity(dim: usize) -> Self {
        Similitude { scale: 1.0, rotation: Matrix::identity(dim), translation: vec![0.0; dim] }
    }

    /// A similitude without rotation.
    pub fn scaling(scale: f64, translation: Vec<f64>) -> Result<Self> {
        let dim = translation.len();
        Self::new(scale, Matrix::identity(dim), translation)
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64] {
        &self.translation
    }

    /// `s·R·x + t`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`Similitude::apply`] writing into `out`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.rotation.mul_vec_into(x, out);
        for (o, t) in out.iter_mut().zip(&self.translation) {
            *o = self.scale * *o + t;
        }
    }

    /// Returns `self ∘ inner`, i.e. `x ↦ self(inner(x))`.
    pub fn compose(&self, inner: &Similitude) -> Result<Similitude> {
        check_dim(self.dim(), inner.dim())?;
        Ok(self.compose_unchecked(inner))
    }

    pub(crate) fn compose_unchecked(&self, inner: &Similitude) -> Similitude {
        let mut translation = vec![0.0; self.dim()];
        self.apply_into(&inner.translation, &mut translation);
        Similitude { scale: self.scale * inner.scale, rotation: self.rotation.matmul(&inner.rotation), translation }
    }

    pub fn invert(&self) -> Similitude {
        let rotation = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        let translation = rotation.mul_vec(&self.translation).into_iter().map(|v| -inv_scale * v).collect();
        Similitude { scale: inv_scale, rotation, translation }
    }

    /// Image of a spherical Gaussian: `N(s·R·μ + t, (s·σ)²·I)`.
    pub fn transform_gaussian(&self, g: &SphericalGaussian) -> Result<SphericalGaussian> {
        check_dim(self.dim(), g.dim())?;
        let mut mean = vec![0.0; self.dim()];
        self.apply_into(&g.mean, &mut mean);
        Ok(SphericalGaussian { mean, sigma: self.scale * g.sigma })
    }

    /// Projects the rotation back onto SO(H) to remove accumulated rounding.
    pub fn reorthonormalized(&self) -> Similitude {
        Similitude {
            scale: self.scale,
            rotation: optimal_rotation(&self.rotation),
            translation: self.translation.clone(),
        }
    }

    /// The point `p` with `self(p) = p`, if `s·R − I` is invertible.
    pub fn fixed_point(&self) -> Option<Vec<f64>> {
        // (I − sR)·p = t, solved by Gaussian elimination on the small system.
        let n = self.dim();
        let mut a: Vec<f64> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                f64::from(u8::from(i == j)) - self.scale * self.rotation[(i, j)]
            })
            .collect();
        let mut b = self.translation.clone();
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
            if a[pivot * n + col].abs() < 1e-14 {
                return None;
            }
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
            for r in 0..n {
                if r != col {
                    let f = a[r * n + col] / a[col * n + col];
                    for j in 0..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i * n + i]).collect())
    }
}

/// `N(μ, σ²·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGaussian {
    mean: Vec<f64>,
    sigma: f64,
}

impl SphericalGaussian {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(SphericalGaussian { mean, sigma })
    }

    /// The standard normal `N₀` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        SphericalGaussian { mean: vec![0.0; dim], sigma: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(spherical_log_density(&self.mean, self.sigma, x))
    }
}

/// `-(H/2)·ln 2π − H·ln σ − ‖x − μ‖²/(2σ²)`.
#[inline]
pub fn spherical_log_density(mean: &[f64], sigma: f64, x: &[f64]) -> f64 {
    let h = mean.len() as f64;
    -0.5 * h * LN_2PI - h * sigma.ln() - linalg::dist_sq(x, mean) / (2.0 * sigma * sigma)
}

/// Haar-distributed rotation of `R^dim`: QR of a standard Gaussian matrix with
/// the sign of `R`'s diagonal folded into `Q`, then the first column negated if
/// the determinant is `−1`.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    assert!(dim >= 1, "rotation dimension must be at least 1");
    loop {
        let g =
            Matrix::from_row_major(dim, dim, (0..dim * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
        let (mut q, r) = linalg::qr(&g);
        if (0..dim).any(|i| r[(i, i)] == 0.0) {
            continue;
        }
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                for i in 0..dim {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        if q.determinant() < 0.0 {
            for i in 0..dim {
                q[(i, 0)] = -q[(i, 0)];
            }
        }
        return q;
    }
}

/// Result of maximizing `tr(Aᵀ·R)` over rotations.
#[derive(Debug, Clone)]
pub struct RotationFit {
    pub rotation: Matrix,
    /// `tr(Aᵀ·R)` at the returned rotation.
    pub objective: f64,
    /// The smallest singular value of `A` is below
    /// [`RANK_DEFICIENCY_RATIO`] times the largest, so the maximizer need not
    /// be unique.
    pub rank_deficient: bool,
}

/// `U·diag(1, …, 1, det(U·Vᵀ))·Vᵀ` for `A = U·S·Vᵀ`; maximizes `tr(Aᵀ·R)`
/// over proper rotations.
pub fn optimal_rotation(a: &Matrix) -> Matrix {
    fit_rotation(a).rotation
}

pub fn fit_rotation(a: &Matrix) -> RotationFit {
    let n = a.rows();
    let svd = linalg::svd(a);
    let vt = svd.v.transpose();
    let uvt = svd.u.matmul(&vt);
    let mut diag = vec![1.0; n];
    if uvt.determinant() < 0.0 {
        diag[n - 1] = -1.0;
    }
    let rotation = svd.u.matmul(&Matrix::from_diagonal(&diag)).matmul(&vt);
    let largest = svd.singular_values[0];
    let smallest = svd.singular_values[n - 1];
    RotationFit {
        objective: a.frobenius_dot(&rotation),
        rotation,
        rank_deficient: largest == 0.0 || smallest < RANK_DEFICIENCY_RATIO * largest,
    }
}
