//! Small statistics helpers: paired t-tests over per-impression refined
//! ranks (or per-seed ARR values) for method comparisons.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub mean_diff: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Two-sided paired t-test on a vector of differences. Degenerate
/// all-zero differences report `t = 0, p = 1`.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTestResult> {
    if diffs.len() < 2 {
        return Err(Error::InvalidConfig(
            "paired t-test needs at least two paired observations".into(),
        ));
    }
    let n = diffs.len() as f64;
    let df = n - 1.0;
    let mean_diff = mean(diffs);
    let var = sample_variance(diffs);

    if var == 0.0 {
        return Ok(if mean_diff == 0.0 {
            TTestResult { t: 0.0, p: 1.0, df, mean_diff }
        } else {
            TTestResult { t: mean_diff.signum() * f64::INFINITY, p: 0.0, df, mean_diff }
        });
    }

    let t = mean_diff / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidConfig(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult { t, p, df, mean_diff })
}

/// Paired t-test between two aligned samples (`a - b` differences).
pub fn paired_t_test_between(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!(
            "paired samples must align: {} vs {} observations",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    paired_t_test(&diffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_t_zero_p_one() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = paired_t_test_between(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn known_t_value() {
        // diffs with mean 1, sd 1, n 4 -> t = 2
        let diffs = [0.0, 1.0, 1.0, 2.0];
        let r = paired_t_test(&diffs).unwrap();
        assert!((r.t - (1.0 / (2.0f64 / 3.0 / 4.0).sqrt())).abs() < 1e-12);
        assert!(r.p > 0.0 && r.p < 1.0);
    }

    #[test]
    fn consistent_direction_is_significant() {
        let diffs = [-0.9, -1.1, -1.0, -0.95, -1.05, -1.0, -0.98, -1.02, -1.01, -0.99];
        let r = paired_t_test(&diffs).unwrap();
        assert!(r.t < 0.0);
        assert!(r.p < 1e-6, "p = {}", r.p);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(paired_t_test_between(&[1.0], &[1.0, 2.0]).is_err());
    }
}
