//! End-to-end fitting and comparison runs.

use std::thread;
use std::time::Instant;

use ifsem_core::data::{normalize, split};
use ifsem_core::em::{has_converged, Clock, EStep, Serial, TrainConfig, TrainHistory, Trainer};
use ifsem_core::mog::{fit_mog, CovarianceMode};
use ifsem_core::{Error, IfsModel, Points, Result, Similitude};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::formats::Metrics;
use crate::parallel::ThreadedEStep;

pub const DEFAULT_HOLDOUT: f64 = 0.1;

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> Option<f64> {
        Some(self.0.elapsed().as_secs_f64())
    }
}

/// Random stream `stream` of `seed`. Stream 0 splits the data; restart `r`
/// trains on stream `r + 1`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub config: TrainConfig,
    /// Fraction of points held out for restart selection and history.
    pub holdout: f64,
    pub normalize: bool,
    pub workers: usize,
    /// Record wall-clock seconds in the history.
    pub timing: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            config: TrainConfig::default(),
            holdout: DEFAULT_HOLDOUT,
            normalize: true,
            workers: 1,
            timing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// The selected model, in data coordinates.
    pub model: IfsModel,
    pub history: TrainHistory,
    /// Mean log-likelihood of the held-out points (training points when
    /// nothing is held out) for every restart.
    pub scores: Vec<f64>,
    pub best: usize,
    pub held_out: bool,
    pub converged: bool,
}

impl FitOutcome {
    pub fn score(&self) -> f64 {
        self.scores[self.best]
    }
}

/// Splits `points` with the stream-0 generator of `seed`.
pub fn split_points(points: &Points, holdout: f64, seed: u64) -> Result<(Points, Points)> {
    split(points, holdout, &mut seeded_rng(seed, 0))
}

struct RestartResult {
    model: IfsModel,
    history: TrainHistory,
    score: f64,
}

fn run_restart(
    r: usize,
    train: &Points,
    test: Option<&Points>,
    opts: &FitOptions,
    estep: &dyn EStep,
) -> Result<RestartResult> {
    let clock = WallClock::start();
    let mut trainer = Trainer::new(opts.config.clone()).with_estep(estep);
    if opts.timing {
        trainer = trainer.with_clock(&clock);
    }
    let mut rng = seeded_rng(opts.config.seed, r as u64 + 1);
    let (model, history) = trainer.fit(train, &mut rng, test)?;
    let score = model.mean_log_likelihood(test.unwrap_or(train))?;
    log::info!("restart {r}: score {score:.6}, v_D {:.4}", model.depth_weights()[model.depth()]);
    Ok(RestartResult { model, history, score })
}

/// Trains `config.restarts` models on `train` and keeps the one scoring best
/// on `test` (lowest restart index on ties).
pub fn fit_split(train: &Points, test: &Points, opts: &FitOptions) -> Result<FitOutcome> {
    opts.config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidData("no training points".into()));
    }
    let (ntrain, ntest, denorm) = if opts.normalize {
        let (n, denorm) = normalize(train)?;
        let t = test.map(&denorm.invert())?;
        (n, t, denorm)
    } else {
        (train.clone(), test.clone(), Similitude::identity(train.dim()))
    };
    let test_ref = (!ntest.is_empty()).then_some(&ntest);
    let restarts = opts.config.restarts;
    let workers = opts.workers.max(1);

    let results: Vec<RestartResult> = if restarts > 1 && workers > 1 {
        let mut slots: Vec<Option<Result<RestartResult>>> = (0..restarts).map(|_| None).collect();
        thread::scope(|s| {
            let handles: Vec<_> = (0..workers.min(restarts))
                .map(|w| {
                    let (ntrain, opts) = (&ntrain, opts);
                    s.spawn(move || {
                        (w..restarts)
                            .step_by(workers)
                            .map(|r| (r, run_restart(r, ntrain, test_ref, opts, &Serial)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (r, res) in h.join().expect("restart worker panicked") {
                    slots[r] = Some(res);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every restart ran")).collect::<Result<_>>()?
    } else {
        let estep = ThreadedEStep::new(workers);
        (0..restarts).map(|r| run_restart(r, &ntrain, test_ref, opts, &estep)).collect::<Result<_>>()?
    };

    // Log-likelihoods in data coordinates differ by the log-Jacobian of the
    // normalization.
    let shift = -(train.dim() as f64) * denorm.scale().ln();
    let scores: Vec<f64> = results.iter().map(|r| r.score + shift).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let RestartResult { mut model, mut history, .. } = results.into_iter().nth(best).expect("at least one restart");
    let converged = has_converged(&model, opts.config.convergence_threshold);
    model.set_post(denorm.compose(model.post())?)?;
    for rec in &mut history {
        rec.mean_ll_test = rec.mean_ll_test.map(|v| v + shift);
    }
    Ok(FitOutcome { model, history, scores, best, held_out: test_ref.is_some(), converged })
}

/// Holds out `opts.holdout` of the points (stream 0 of the seed) and runs
/// [`fit_split`].
pub fn fit_points(points: &Points, opts: &FitOptions) -> Result<FitOutcome> {
    let (train, test) = split_points(points, opts.holdout, opts.config.seed)?;
    fit_split(&train, &test, opts)
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub repeats: usize,
    /// IFS training settings; `k` and `iterations` also apply to the
    /// mixtures, `seed` is the base seed of repeat 0.
    pub config: TrainConfig,
    pub holdout: f64,
    pub normalize: bool,
    pub workers: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            repeats: 20,
            config: TrainConfig { k: 4, depth: 5, iterations: 100, minibatch: 10_000, ..TrainConfig::default() },
            holdout: DEFAULT_HOLDOUT,
            normalize: true,
            workers: 1,
        }
    }
}

pub const METHODS: [&str; 3] = ["ifs", "iso", "mog"];

/// For each repeat, splits the data, fits the IFS model and spherical and
/// full mixtures on the training part, and records held-out mean
/// log-likelihoods under `ifs`, `iso` and `mog`.
pub fn compare(points: &Points, opts: &CompareOptions) -> Result<Metrics> {
    if opts.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    if !(opts.holdout > 0.0) {
        return Err(Error::InvalidParameter("comparison needs a positive holdout fraction".into()));
    }
    let mut metrics = Metrics::new();
    for r in 0..opts.repeats {
        let seed = opts.config.seed.wrapping_add(r as u64);
        let (train, test) = split_points(points, opts.holdout, seed)?;
        if test.is_empty() {
            return Err(Error::InvalidData("holdout leaves no test points".into()));
        }
        let fit_opts = FitOptions {
            config: TrainConfig { seed, restarts: 1, ..opts.config.clone() },
            holdout: opts.holdout,
            normalize: opts.normalize,
            workers: opts.workers,
            timing: false,
        };
        let ifs = fit_split(&train, &test, &fit_opts)?;
        metrics.push("ifs", ifs.model.mean_log_likelihood(&test)?);
        for (name, mode, stream) in
            [("iso", CovarianceMode::Spherical, 1u64 << 32), ("mog", CovarianceMode::Full, 1 << 33)]
        {
            let mut rng = seeded_rng(seed, stream);
            let m = fit_mog(&train, opts.config.k, mode, opts.config.iterations, &mut rng)?;
            metrics.push(name, m.mean_log_likelihood(&test)?);
        }
        log::info!("repeat {r} done");
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ifsem_core::data::{generate, Source};

    fn small() -> TrainConfig {
        TrainConfig {
            k: 3,
            depth: 3,
            iterations: 4,
            minibatch: 200,
            pool_size: 2,
            pre_iterations: 2,
            pre_depth: 2,
            pre_minibatch: 100,
            seed: 7,
            restarts: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn selected_model_is_in_data_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = generate(Source::Sierpinski, 600, &mut rng, None).unwrap().points;
        data = data.map(&Similitude::scaling(7.0, vec![30.0, -4.0]).unwrap()).unwrap();
        let opts = FitOptions { config: small(), holdout: 0.2, ..FitOptions::default() };
        let out = fit_points(&data, &opts).unwrap();
        let (_, test) = split_points(&data, 0.2, 7).unwrap();
        let direct = out.model.mean_log_likelihood(&test).unwrap();
        assert!((direct - out.score()).abs() < 1e-9, "{direct} vs {}", out.score());
        assert!((out.history.last().unwrap().mean_ll_test.unwrap() - direct).abs() < 1e-9);
        assert_eq!(out.scores.len(), 3);
        assert!(out.scores.iter().all(|s| *s <= out.score()));
        assert!(out.held_out);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = generate(Source::Koch, 500, &mut rng, None).unwrap().points;
        let base = FitOptions { config: small(), ..FitOptions::default() };
        let one = fit_points(&data, &base).unwrap();
        let three = fit_points(&data, &FitOptions { workers: 3, ..base.clone() }).unwrap();
        assert_eq!(one.model, three.model);
        assert_eq!(one.history, three.history);
        let single = FitOptions { config: TrainConfig { restarts: 1, ..small() }, workers: 2, ..base };
        let a = fit_points(&data, &single).unwrap();
        let b = fit_points(&data, &FitOptions { workers: 1, ..single }).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn no_holdout_scores_on_training_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = generate(Source::Square, 300, &mut rng, None).unwrap().points;
        let opts = FitOptions { config: TrainConfig { restarts: 1, ..small() }, holdout: 0.0, ..FitOptions::default() };
        let out = fit_points(&data, &opts).unwrap();
        assert!(!out.held_out);
        assert!(out.history.iter().all(|r| r.mean_ll_test.is_none()));
        assert!((out.model.mean_log_likelihood(&data).unwrap() - out.score()).abs() < 1e-9);
    }

    #[test]
    fn compare_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = generate(Source::Sierpinski, 400, &mut rng, None).unwrap().points;
        let opts = CompareOptions {
            repeats: 2,
            config: TrainConfig { iterations: 3, minibatch: 300, pool_size: 1, pre_iterations: 0, ..small() },
            ..CompareOptions::default()
        };
        let m = compare(&data, &opts).unwrap();
        assert_eq!(m.methods().collect::<Vec<_>>(), METHODS);
        for method in METHODS {
            assert_eq!(m.runs(method).unwrap().len(), 2);
        }
        assert!(compare(&data, &CompareOptions { holdout: 0.0, ..opts }).is_err());
    }
}
