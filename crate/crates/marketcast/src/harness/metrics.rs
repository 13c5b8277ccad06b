//! Accuracy metrics and statistical comparisons used by experiment
//! reports and the acceptance checks.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::QualityTier;

use super::report::RunReport;

/// Default number of bootstrap resamples for paired comparisons.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {left} predictions vs {right} truths")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} paired observations, got {got}")]
    TooFewObservations { got: usize, need: usize },
    #[error("empty input")]
    Empty,
}

/// Mean absolute error and its standard error.
///
/// The standard error is the sample standard deviation (n - 1 in the
/// denominator) of the absolute errors divided by sqrt(n); zero for a
/// single observation.
pub fn compute_mae(predictions: &[f64], truths: &[f64]) -> Result<(f64, f64), MetricError> {
    if predictions.len() != truths.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = predictions.len() as f64;
    let abs_errors: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(p, y)| (p - y).abs())
        .collect();
    let mae = abs_errors.iter().sum::<f64>() / n;
    if abs_errors.len() < 2 {
        return Ok((mae, 0.0));
    }
    let var = abs_errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mae, (var / n).sqrt()))
}

/// Result of a paired bootstrap comparison of two error sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    /// Mean of `|a| - |b|` over the paired records; negative means `a`
    /// is the more accurate sequence.
    pub mean_diff: f64,
    /// 2.5% percentile of the bootstrap distribution of the mean.
    pub ci_low: f64,
    /// 97.5% percentile of the bootstrap distribution of the mean.
    pub ci_high: f64,
}

impl PairedComparison {
    /// Whether the 95% interval excludes zero, i.e. the difference is
    /// distinguishable from none.
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Paired percentile bootstrap of the mean absolute-error difference.
///
/// Records are resampled with replacement `n_boot` times; the 95%
/// interval is read off the resampled means by linear interpolation.
/// Deterministic given `seed`; the point estimate never depends on it.
pub fn compare_paired(
    errors_a: &[f64],
    errors_b: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<PairedComparison, MetricError> {
    if errors_a.len() != errors_b.len() {
        return Err(MetricError::LengthMismatch {
            left: errors_a.len(),
            right: errors_b.len(),
        });
    }
    if errors_a.len() < 10 {
        return Err(MetricError::TooFewObservations {
            got: errors_a.len(),
            need: 10,
        });
    }
    let diffs: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a.abs() - b.abs())
        .collect();
    let n = diffs.len();
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let sum: f64 = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_unstable_by(f64::total_cmp);
    Ok(PairedComparison {
        mean_diff,
        ci_low: interpolated_quantile(&means, 0.025),
        ci_high: interpolated_quantile(&means, 0.975),
    })
}

/// How often each strategy action was taken, as fractions of all
/// decisions. The two fractions sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionShares {
    pub preserve: f64,
    pub change: f64,
    /// Number of decisions behind the fractions.
    pub decisions: u64,
}

/// Popularity of the strategy actions per stream quality tier.
///
/// Counts every preserve/change decision (rounds with a market
/// prediction to react to) of Q-learning agents whose streams share one
/// tier. Agents without a tier, constant-strategy agents, and
/// first-market rounds contribute nothing. Empty when no Q-learning
/// agent qualifies.
pub fn action_popularity(report: &RunReport) -> BTreeMap<QualityTier, ActionShares> {
    let mut counts: BTreeMap<QualityTier, (u64, u64)> = BTreeMap::new();
    for (idx, agent) in report.agents.iter().enumerate() {
        if agent.strategy != "q_learning" {
            continue;
        }
        let Some(tier) = agent.tier else { continue };
        let entry = counts.entry(tier).or_default();
        for row in &report.rows {
            for code in row.cells[idx].actions.chars() {
                match code {
                    'P' => entry.0 += 1,
                    'C' => entry.1 += 1,
                    _ => {}
                }
            }
        }
    }
    counts
        .into_iter()
        .filter(|&(_, (p, c))| p + c > 0)
        .map(|(tier, (p, c))| {
            let total = (p + c) as f64;
            (
                tier,
                ActionShares {
                    preserve: p as f64 / total,
                    change: c as f64 / total,
                    decisions: p + c,
                },
            )
        })
        .collect()
}

/// Linearly interpolated quantile of an ascending-sorted slice.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_of_perfect_predictions_is_zero() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(compute_mae(&y, &y).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn mae_with_equal_errors_has_zero_standard_error() {
        let (mae, se) = compute_mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!((mae, se), (1.0, 0.0));
    }

    #[test]
    fn mae_standard_error_uses_the_sample_deviation() {
        // Errors {2, 0}: mean 1, sample std sqrt(2), SE sqrt(2)/sqrt(2).
        let (mae, se) = compute_mae(&[0.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(mae, 1.0);
        assert!((se - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mae_rejects_mismatched_lengths() {
        let err = compute_mae(&[1.0], &[1.0, 2.0]).unwrap_err();
        assert_eq!(err, MetricError::LengthMismatch { left: 1, right: 2 });
    }

    #[test]
    fn paired_comparison_of_identical_errors_brackets_zero() {
        let e: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let cmp = compare_paired(&e, &e, 1000, 3).unwrap();
        assert_eq!(cmp.mean_diff, 0.0);
        assert!(cmp.ci_low <= 0.0 && cmp.ci_high >= 0.0);
        assert!(!cmp.excludes_zero());
    }

    #[test]
    fn constant_shift_is_detected_exactly() {
        let b: Vec<f64> = (0..20).map(|i| 0.5 + 0.01 * i as f64).collect();
        let a: Vec<f64> = b.iter().map(|e| e + 1.0).collect();
        let cmp = compare_paired(&a, &b, 500, 9).unwrap();
        assert!((cmp.mean_diff - 1.0).abs() < 1e-12);
        assert!((cmp.ci_low - 1.0).abs() < 1e-9 && (cmp.ci_high - 1.0).abs() < 1e-9);
        assert!(cmp.excludes_zero());
    }

    #[test]
    fn bootstrap_randomness_touches_only_the_interval() {
        let a: Vec<f64> = (0..30).map(|i| (i as f64).sin().abs()).collect();
        let b: Vec<f64> = (0..30).map(|i| (i as f64).cos().abs()).collect();
        let c1 = compare_paired(&a, &b, 2000, 1).unwrap();
        let c2 = compare_paired(&a, &b, 2000, 2).unwrap();
        assert_eq!(c1.mean_diff.to_bits(), c2.mean_diff.to_bits());
        assert!(c1.ci_low != c2.ci_low || c1.ci_high != c2.ci_high);
        let again = compare_paired(&a, &b, 2000, 1).unwrap();
        assert_eq!(c1, again);
    }

    #[test]
    fn paired_comparison_needs_ten_observations() {
        let e = [1.0; 9];
        assert_eq!(
            compare_paired(&e, &e, 100, 0).unwrap_err(),
            MetricError::TooFewObservations { got: 9, need: 10 }
        );
    }
}
