//! Log-space helpers and small summary statistics.

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `ln Σ exp(xᵢ)`. Returns `-∞` for an empty slice or when
/// every term is `-∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Turns log-weights into probabilities in place, returning the log-normalizer.
pub fn softmax_in_place(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = if lse.is_finite() { (*v - lse).exp() } else { 0.0 };
    }
    lse
}

/// Natural log that maps `0` to `-∞` without going through NaN for negative
/// zero.
pub fn ln_weight(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Rescales a non-negative vector to sum to one. Returns `false` (leaving the
/// input untouched) when the total is not positive and finite.
pub fn normalize_simplex(values: &mut [f64]) -> bool {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return false;
    }
    values.iter_mut().for_each(|v| *v /= total);
    true
}

/// Mean, standard error of the mean (sample standard deviation over `√n`),
/// minimum and maximum of a set of run results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Returns `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { mean, stderr, min, max })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_sum_exp_is_stable() {
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn ln_2pi_constant() {
        assert_abs_diff_eq!(LN_2PI, (2.0 * core::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn summary_two_point_statistics() {
        let s = Summary::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.stderr, s.min, s.max), (2.0, 1.0, 1.0, 3.0));
        let one = Summary::of(&[2.0]).unwrap();
        assert_eq!((one.mean, one.stderr), (2.0, 0.0));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn summary_stderr_matches_direct_formula() {
        let values = [0.3, -1.2, 4.5, 2.25, 0.0, 7.125];
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let expected = (ss / (n - 1.0) / n).sqrt();
        assert_abs_diff_eq!(Summary::of(&values).unwrap().stderr, expected, epsilon = 1e-12);
    }
}
