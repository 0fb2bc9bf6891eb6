use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use super::estep::{EStep, Serial};
use super::mstep::em_iteration;
use super::{TrainConfig, TrainHistory, TrainRecord};
use crate::data::Points;
use crate::error::{check_dim, Error};
use crate::geometry::{random_rotation, Similitude};
use crate::model::IfsModel;
use crate::Result;

/// Source of wall-clock time for the training history.
pub trait Clock {
    /// Seconds since an arbitrary fixed instant, or `None` when time is not
    /// tracked.
    fn now(&self) -> Option<f64>;
}

/// Leaves `seconds` empty in every record.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> Option<f64> {
        None
    }
}

/// `v_D ≥ threshold`.
pub fn has_converged(model: &IfsModel, threshold: f64) -> bool {
    model.depth_weights()[model.depth()] >= threshold
}

/// Uniform point in the unit ball of `R^dim`.
fn uniform_in_ball<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let radius = u.powf(1.0 / dim as f64);
        return g.into_iter().map(|v| v * radius / norm).collect();
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Random initial model: `K` fixed points drawn uniformly from the unit ball,
/// each component `s = 1/2` with a random rotation and the translation that
/// fixes its point; uniform `w` and `v`; identity post-transform.
pub fn init_random<R: Rng + ?Sized>(k: usize, dim: usize, depth: usize, rng: &mut R) -> Result<IfsModel> {
    if k == 0 || dim == 0 {
        return Err(Error::InvalidParameter("K and H must be at least 1".into()));
    }
    let components = (0..k)
        .map(|_| {
            let fixed = uniform_in_ball(dim, rng);
            let rotation = random_rotation(dim, rng);
            let image = rotation.mul_vec(&fixed);
            let translation = fixed.iter().zip(&image).map(|(p, r)| p - 0.5 * r).collect();
            Similitude::from_parts(0.5, rotation, translation)
        })
        .collect();
    IfsModel::new(components, uniform(k), uniform(depth + 1), Similitude::identity(dim))
}

/// Runs the IFS-EM loop with a configurable E-step and clock.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    estep: &'a dyn EStep,
    clock: &'a dyn Clock,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Self {
        Trainer { config, estep: &Serial, clock: &NoClock }
    }

    pub fn with_estep(mut self, estep: &'a dyn EStep) -> Self {
        self.estep = estep;
        self
    }

    pub fn with_clock(mut self, clock: &'a dyn Clock) -> Self {
        self.clock = clock;
        self
    }

    fn run<R: Rng + ?Sized>(
        &self,
        mut model: IfsModel,
        data: &Points,
        iterations: usize,
        minibatch: usize,
        rng: &mut R,
        test: Option<&Points>,
        history: Option<&mut TrainHistory>,
    ) -> Result<IfsModel> {
        let start = self.clock.now();
        let mut records = Vec::new();
        for iter in 0..iterations {
            let batch = data.minibatch(minibatch, rng);
            let (next, report) =
                em_iteration(&model, &batch, self.estep, self.config.schedule, self.config.scale_floor)?;
            model = next;
            if history.is_some() {
                let mean_ll_test = match test {
                    Some(t) if !t.is_empty() => Some(model.mean_log_likelihood(t)?),
                    _ => None,
                };
                let seconds = match (start, self.clock.now()) {
                    (Some(s), Some(n)) => Some(n - s),
                    _ => None,
                };
                records.push(TrainRecord {
                    iter,
                    mean_ll_test,
                    mean_depth: model.mean_depth(),
                    depth_weights: model.depth_weights().to_vec(),
                    seconds,
                    starved: report.starved,
                    weights_kept: report.weights_kept,
                });
            }
        }
        if let Some(h) = history {
            h.extend(records);
        }
        Ok(model)
    }

    /// Trains `pool_size` random candidates at the pre-selection depth and
    /// returns the one with the highest mean depth (lowest index on ties).
    pub fn pre_select<R: Rng + ?Sized>(&self, data: &Points, rng: &mut R) -> Result<IfsModel> {
        self.config.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidData("cannot pre-select on an empty data set".into()));
        }
        let mut best: Option<IfsModel> = None;
        for _ in 0..self.config.pool_size {
            let candidate = init_random(self.config.k, data.dim(), self.config.pre_depth, rng)?;
            let trained =
                self.run(candidate, data, self.config.pre_iterations, self.config.pre_minibatch, rng, None, None)?;
            if best.as_ref().is_none_or(|b| trained.mean_depth() > b.mean_depth()) {
                best = Some(trained);
            }
        }
        Ok(best.expect("pool size is at least one"))
    }

    /// Initializes (pre-selection, or a single random model when the pool is
    /// disabled) and trains for `config.iterations` iterations.
    pub fn fit<R: Rng + ?Sized>(
        &self,
        data: &Points,
        rng: &mut R,
        test: Option<&Points>,
    ) -> Result<(IfsModel, TrainHistory)> {
        self.config.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidData("cannot fit an empty data set".into()));
        }
        let initial = if self.config.skips_pre_selection() {
            init_random(self.config.k, data.dim(), self.config.depth, rng)?
        } else {
            let mut m = self.pre_select(data, rng)?;
            m.set_depth_weights(uniform(self.config.depth + 1))?;
            m
        };
        self.fit_from(initial, data, rng, test)
    }

    /// Trains from a given initial model.
    pub fn fit_from<R: Rng + ?Sized>(
        &self,
        initial: IfsModel,
        data: &Points,
        rng: &mut R,
        test: Option<&Points>,
    ) -> Result<(IfsModel, TrainHistory)> {
        self.config.validate()?;
        check_dim(initial.dim(), data.dim())?;
        if data.is_empty() {
            return Err(Error::InvalidData("cannot fit an empty data set".into()));
        }
        let mut history = Vec::with_capacity(self.config.iterations);
        let model =
            self.run(initial, data, self.config.iterations, self.config.minibatch, rng, test, Some(&mut history))?;
        Ok((model, history))
    }
}

/// [`Trainer::fit`] with the serial E-step and no clock.
pub fn fit<R: Rng + ?Sized>(
    data: &Points,
    config: &TrainConfig,
    rng: &mut R,
    test: Option<&Points>,
) -> Result<(IfsModel, TrainHistory)> {
    Trainer::new(config.clone()).fit(data, rng, test)
}

/// [`Trainer::fit_from`] with the serial E-step and no clock.
pub fn fit_from<R: Rng + ?Sized>(
    initial: IfsModel,
    data: &Points,
    config: &TrainConfig,
    rng: &mut R,
    test: Option<&Points>,
) -> Result<(IfsModel, TrainHistory)> {
    Trainer::new(config.clone()).fit_from(initial, data, rng, test)
}

/// [`Trainer::pre_select`] with the serial E-step.
pub fn pre_select<R: Rng + ?Sized>(data: &Points, config: &TrainConfig, rng: &mut R) -> Result<IfsModel> {
    Trainer::new(config.clone()).pre_select(data, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Source};
    use crate::em::MStepSchedule;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            k: 3,
            depth: 3,
            iterations: 5,
            minibatch: 100,
            pool_size: 3,
            pre_iterations: 3,
            pre_depth: 2,
            pre_minibatch: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_random_fixes_its_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in 1..=3 {
            let model = init_random(4, dim, 5, &mut rng).unwrap();
            assert_eq!(model.depth(), 5);
            assert!(model.components().iter().all(|c| c.scale() == 0.5));
            for c in model.components() {
                let p = c.fixed_point().unwrap();
                let image = c.apply(&p).unwrap();
                assert!(linalg::dist_sq(&image, &p).sqrt() < 1e-12);
                assert!(linalg::norm_sq(&p) <= 1.0 + 1e-12);
            }
            assert_eq!(model.post(), &Similitude::identity(dim));
        }
    }

    #[test]
    fn ball_samples_have_expected_mean_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [2usize, 3] {
            let n = 10_000;
            let norms: Vec<f64> = (0..n).map(|_| linalg::norm_sq(&uniform_in_ball(dim, &mut rng)).sqrt()).collect();
            assert!(norms.iter().all(|r| *r <= 1.0));
            let mean = norms.iter().sum::<f64>() / n as f64;
            let var = norms.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let expected = dim as f64 / (dim as f64 + 1.0);
            assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn convergence_rule() {
        let mut model = init_random(2, 2, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(!has_converged(&model, 0.95));
        model.set_depth_weights(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.04, 0.96]).unwrap();
        assert!(has_converged(&model, 0.95));
        model.set_depth_weights(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]).unwrap();
        assert!(has_converged(&model, 0.5));
    }

    #[test]
    fn zero_iterations_returns_initial_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = generate(Source::Sierpinski, 300, &mut rng, None).unwrap().points;
        let config = TrainConfig { iterations: 0, pool_size: 1, pre_iterations: 0, ..small_config() };
        let (model, history) = fit(&data, &config, &mut ChaCha8Rng::seed_from_u64(9), None).unwrap();
        let expected = init_random(3, 2, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(model, expected);
        assert!(history.is_empty());
    }

    #[test]
    fn fit_is_deterministic_and_records_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = generate(Source::Sierpinski, 400, &mut rng, None).unwrap().points;
        let test = generate(Source::Sierpinski, 100, &mut rng, None).unwrap().points;
        let config = small_config();
        let a = fit(&data, &config, &mut ChaCha8Rng::seed_from_u64(6), Some(&test)).unwrap();
        let b = fit(&data, &config, &mut ChaCha8Rng::seed_from_u64(6), Some(&test)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 5);
        assert_eq!(a.0.depth(), 3);
        for (i, r) in a.1.iter().enumerate() {
            assert_eq!(r.iter, i);
            assert!(r.mean_ll_test.unwrap().is_finite());
            assert_eq!(r.seconds, None);
        }
    }

    #[test]
    fn pre_select_picks_highest_mean_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = generate(Source::Sierpinski, 300, &mut rng, None).unwrap().points;
        let config = small_config();
        let chosen = pre_select(&data, &config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();

        // Replay the pool with the same stream.
        let mut replay = ChaCha8Rng::seed_from_u64(8);
        let trainer = Trainer::new(config.clone());
        let mut depths = Vec::new();
        for _ in 0..config.pool_size {
            let c = init_random(3, 2, config.pre_depth, &mut replay).unwrap();
            let t =
                trainer.run(c, &data, config.pre_iterations, config.pre_minibatch, &mut replay, None, None).unwrap();
            depths.push(t.mean_depth());
        }
        let max = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(chosen.mean_depth(), max);
        assert_eq!(chosen.depth(), config.pre_depth);
    }

    #[test]
    fn pre_select_breaks_ties_by_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = generate(Source::Square, 100, &mut rng, None).unwrap().points;
        // Untrained candidates all have uniform v, hence equal mean depth.
        let config = TrainConfig { pre_iterations: 0, pool_size: 4, ..small_config() };
        let chosen = pre_select(&data, &config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let first = init_random(3, 2, config.pre_depth, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(chosen, first);

        let single = TrainConfig { pool_size: 1, ..small_config() };
        let one = pre_select(&data, &single, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(12);
        let c = init_random(3, 2, single.pre_depth, &mut replay).unwrap();
        let trained = Trainer::new(single.clone())
            .run(c, &data, single.pre_iterations, single.pre_minibatch, &mut replay, None, None)
            .unwrap();
        assert_eq!(one, trained);
    }

    #[test]
    fn invariants_hold_after_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..100 {
            let dim = 2 + trial % 2;
            let model = init_random(1 + trial % 3, dim, trial % 4, &mut rng).unwrap();
            let batch = crate::geometry::random_rotation(dim, &mut rng);
            let points = Points::from_flat(
                dim,
                (0..60 * dim).map(|i| batch.as_slice()[i % (dim * dim)] + rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            for schedule in [MStepSchedule::Sequential, MStepSchedule::Simultaneous] {
                let (next, report) = em_iteration(&model, &points, &Serial, schedule, 1e-6).unwrap();
                assert!(report.row_error < 1e-9);
                // Constructors re-validate simplex vectors; check rotations here.
                for f in next.components().iter().chain([next.post()]) {
                    assert!(f.rotation().orthogonality_error() < 1e-9);
                    assert!((f.rotation().determinant() - 1.0).abs() < 1e-9);
                    assert!(f.scale() >= 1e-6);
                }
            }
        }
    }
}
