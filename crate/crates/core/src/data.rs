//! Point sets, the synthetic generators, splitting and normalization.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;
use rand::seq::index;
use rand::Rng;

use crate::error::{check_dim, Error};
use crate::geometry::Similitude;
use crate::linalg::Matrix;
use crate::model::{self, IfsModel};
use crate::Result;

/// `N` points in `R^H`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Points { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Points { dim, data: Vec::with_capacity(dim * n) }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidData(format!(
                "{} values cannot be split into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut points = Points::new(dim);
        for row in rows {
            points.push(row.as_ref())?;
        }
        Ok(points)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        check_dim(self.dim, row.len())?;
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// The rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    /// Applies `f` to every row.
    pub fn map(&self, f: &Similitude) -> Result<Points> {
        check_dim(self.dim, f.dim())?;
        let mut out = vec![0.0; self.data.len()];
        for (src, dst) in self.rows().zip(out.chunks_exact_mut(self.dim)) {
            f.apply_into(src, dst);
        }
        Ok(Points { dim: self.dim, data: out })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// A uniformly drawn subset of `min(size, N)` rows, without replacement.
    pub fn minibatch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Points {
        let n = self.len();
        if size >= n {
            return self.clone();
        }
        let idx = index::sample(rng, n, size).into_vec();
        self.select(&idx)
    }
}

/// A named point set with a description of where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub name: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(points: Points, name: impl Into<String>, provenance: impl Into<String>) -> Result<Self> {
        if !points.all_finite() {
            return Err(Error::InvalidData("all coordinates must be finite".into()));
        }
        Ok(Dataset { points, name: name.into(), provenance: provenance.into() })
    }
}

/// Built-in synthetic sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Sierpinski,
    SierpinskiNonuniform,
    Koch,
    Square,
    Circle,
    /// The attractor of a user-supplied model.
    FromIfs,
}

impl Source {
    pub const ALL: [Source; 6] = [
        Source::Sierpinski,
        Source::SierpinskiNonuniform,
        Source::Koch,
        Source::Square,
        Source::Circle,
        Source::FromIfs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Sierpinski => "sierpinski",
            Source::SierpinskiNonuniform => "sierpinski-nonuniform",
            Source::Koch => "koch",
            Source::Square => "square",
            Source::Circle => "circle",
            Source::FromIfs => "from-ifs",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL.into_iter().find(|src| src.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Source::ALL.iter().map(|s| s.name()).collect();
            Error::InvalidParameter(format!("unknown source `{s}`; valid sources: {}", valid.join(", ")))
        })
    }
}

/// Weights of the non-uniform Sierpinski generator.
pub const SIERPINSKI_NONUNIFORM_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

/// Vertices of the Sierpinski triangle; they are the fixed points of its maps.
pub fn sierpinski_vertices() -> [[f64; 2]; 3] {
    let h = 3f64.sqrt() / 2.0;
    [[0.0, 1.0], [-h, -0.5], [h, -0.5]]
}

/// The three-map Sierpinski IFS with `s = 1/2`, `R = I` and the given weights,
/// as a depth-0 model with identity post-transform.
pub fn sierpinski_ifs(weights: [f64; 3]) -> IfsModel {
    let components = sierpinski_vertices()
        .iter()
        .map(|v| Similitude::scaling(0.5, vec![v[0] / 2.0, v[1] / 2.0]).expect("valid map"))
        .collect();
    IfsModel::new(components, weights.to_vec(), vec![1.0], Similitude::identity(2)).expect("valid model")
}

/// The standard four-map Koch curve IFS (`s = 1/3`, rotations 0°, 60°, −60°,
/// 0°) on the segment from `(−1, 0)` to `(1, 0)`, uniform weights.
pub fn koch_ifs() -> IfsModel {
    let third = 1.0 / 3.0;
    let peak = 3f64.sqrt() / 6.0;
    let maps = [
        (0.0, [-2.0 * third, 0.0]),
        (PI / 3.0, [-1.0 / 6.0, peak]),
        (-PI / 3.0, [1.0 / 6.0, peak]),
        (0.0, [2.0 * third, 0.0]),
    ];
    let components = maps
        .iter()
        .map(|(angle, t)| Similitude::new(third, Matrix::rotation_2d(*angle), t.to_vec()).expect("valid map"))
        .collect();
    IfsModel::new(components, vec![0.25; 4], vec![1.0], Similitude::identity(2)).expect("valid model")
}

/// Draws `n` points from a built-in source. `model` is required for
/// [`Source::FromIfs`] and ignored otherwise.
pub fn generate<R: Rng + ?Sized>(source: Source, n: usize, rng: &mut R, model: Option<&IfsModel>) -> Result<Dataset> {
    let (points, provenance) = match source {
        Source::Sierpinski => (
            model::sample_attractor(&sierpinski_ifs([1.0 / 3.0; 3]), n, model::DEFAULT_BURN_IN, rng),
            "chaos game, 3 maps, s=1/2, uniform weights".to_string(),
        ),
        Source::SierpinskiNonuniform => (
            model::sample_attractor(&sierpinski_ifs(SIERPINSKI_NONUNIFORM_WEIGHTS), n, model::DEFAULT_BURN_IN, rng),
            "chaos game, 3 maps, s=1/2, weights (0.5, 0.3, 0.2)".to_string(),
        ),
        Source::Koch => (
            model::sample_attractor(&koch_ifs(), n, model::DEFAULT_BURN_IN, rng),
            "chaos game, 4 maps, s=1/3, rotations 0/60/-60/0 degrees".to_string(),
        ),
        Source::Square => {
            let mut p = Points::with_capacity(2, n);
            for _ in 0..n {
                p.data.push(rng.random_range(-1.0..=1.0));
                p.data.push(rng.random_range(-1.0..=1.0));
            }
            (p, "uniform on [-1,1]^2".to_string())
        }
        Source::Circle => {
            let mut p = Points::with_capacity(2, n);
            for _ in 0..n {
                let angle: f64 = rng.random_range(0.0..2.0 * PI);
                p.data.push(angle.cos());
                p.data.push(angle.sin());
            }
            (p, "uniform on the unit circle".to_string())
        }
        Source::FromIfs => {
            let model = model.ok_or_else(|| Error::InvalidParameter("source from-ifs needs a model".into()))?;
            (
                model::sample_attractor(model, n, model::DEFAULT_BURN_IN, rng),
                format!("chaos game on a supplied {}-map IFS in R^{}", model.k(), model.dim()),
            )
        }
    };
    Dataset::new(points, source.name(), provenance)
}

/// Uniform random split into `(train, test)` with `|test| = round(fraction·N)`.
pub fn split<R: Rng + ?Sized>(data: &Points, holdout_fraction: f64, rng: &mut R) -> Result<(Points, Points)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidParameter(format!("holdout fraction must lie in [0, 1), got {holdout_fraction}")));
    }
    let n = data.len();
    let n_test = (holdout_fraction * n as f64).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first n_test slots become the test set.
    for i in 0..n_test {
        let j = rng.random_range(i..n);
        perm.swap(i, j);
    }
    let (test_idx, train_idx) = perm.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.select(&train_idx), data.select(&test_idx)))
}

/// Centers the data and scales it to unit RMS radius
/// `√(Σ‖x − mean‖² / (N·H))`. Returns the normalized points and the similitude
/// mapping normalized coordinates back to the original frame.
pub fn normalize(data: &Points) -> Result<(Points, Similitude)> {
    if data.len() < 2 {
        return Err(Error::InvalidData("normalization needs at least two points".into()));
    }
    let mean = data.mean();
    let ss: f64 = data.rows().map(|r| crate::linalg::dist_sq(r, &mean)).sum();
    let radius = (ss / (data.len() * data.dim()) as f64).sqrt();
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidData("data has zero spread".into()));
    }
    let denormalize = Similitude::scaling(radius, mean)?;
    let normalized = data.map(&denormalize.invert())?;
    Ok((normalized, denormalize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Barycentric coordinates relative to the Sierpinski vertices.
    fn barycentric(p: &[f64]) -> [f64; 3] {
        let [a, b, c] = sierpinski_vertices();
        let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
        let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
        let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    #[test]
    fn sierpinski_points_stay_in_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for source in [Source::Sierpinski, Source::SierpinskiNonuniform] {
            let d = generate(source, 5000, &mut rng, None).unwrap();
            assert_eq!(d.points.len(), 5000);
            for p in d.points.rows() {
                assert!(barycentric(p).iter().all(|&l| l >= -1e-9));
            }
        }
    }

    #[test]
    fn square_mean_near_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let d = generate(Source::Square, n, &mut rng, None).unwrap();
        let bound = 3.0 * (2.0 / 12f64.sqrt()) / (n as f64).sqrt() * 2f64.sqrt();
        let mean = d.points.mean();
        assert!(mean.iter().all(|m| m.abs() < bound));
        assert!(d.points.as_flat().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn circle_points_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = generate(Source::Circle, 1000, &mut rng, None).unwrap();
        for p in d.points.rows() {
            assert!((crate::linalg::norm_sq(p).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn koch_points_lie_on_the_curve_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = generate(Source::Koch, 2000, &mut rng, None).unwrap();
        let peak = 3f64.sqrt() / 3.0;
        for p in d.points.rows() {
            assert!(p[0].abs() <= 1.0 + 1e-9 && p[1] >= -1e-9 && p[1] <= peak + 1e-9);
        }
    }

    #[test]
    fn generators_are_deterministic_and_validate_names() {
        for source in Source::ALL.into_iter().filter(|s| *s != Source::FromIfs) {
            let a = generate(source, 100, &mut ChaCha8Rng::seed_from_u64(5), None).unwrap();
            let b = generate(source, 100, &mut ChaCha8Rng::seed_from_u64(5), None).unwrap();
            assert_eq!(a, b);
            assert_eq!(source.name().parse::<Source>().unwrap(), source);
        }
        let err = "nope".parse::<Source>().unwrap_err();
        assert!(format!("{err}").contains("sierpinski"));
        assert!(generate(Source::FromIfs, 10, &mut ChaCha8Rng::seed_from_u64(5), None).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Points::from_flat(1, (0..10).map(f64::from).collect()).unwrap();
        let (train, test) = split(&data, 0.2, &mut rng).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<f64> = train.as_flat().iter().chain(test.as_flat()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, data.as_flat());

        let (train, test) = split(&data, 0.0, &mut rng).unwrap();
        assert_eq!((train.len(), test.len()), (10, 0));
        assert!(split(&data, 1.0, &mut rng).is_err());
    }

    #[test]
    fn normalize_examples() {
        let data = Points::from_flat(1, vec![-1.0, 1.0]).unwrap();
        let (norm, record) = normalize(&data).unwrap();
        assert_eq!(norm.as_flat(), &[-1.0, 1.0]);
        assert_eq!(record, Similitude::identity(1));

        let zero = Points::from_flat(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(normalize(&zero).is_err());
        assert!(normalize(&Points::from_flat(2, vec![1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let flat: Vec<f64> = (0..300).map(|_| rng.random_range(-5.0..20.0)).collect();
        let data = Points::from_flat(3, flat).unwrap();
        let (norm, record) = normalize(&data).unwrap();
        for m in norm.mean() {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
        let ss: f64 = norm.rows().map(crate::linalg::norm_sq).sum();
        assert_abs_diff_eq!((ss / (norm.len() * 3) as f64).sqrt(), 1.0, epsilon = 1e-12);
        let back = norm.map(&record).unwrap();
        for (a, b) in back.as_flat().iter().zip(data.as_flat()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn minibatch_without_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Points::from_flat(1, (0..50).map(f64::from).collect()).unwrap();
        let batch = data.minibatch(20, &mut rng);
        let mut values = batch.as_flat().to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        assert_eq!(values.len(), 20);
        assert_eq!(data.minibatch(100, &mut rng), data);
    }
}
