//! Percentile bootstrap for the F1 score.
//!
//! Resample `i` draws from a ChaCha8 generator seeded with `seed` and
//! positioned on stream `i`, so resamples can run in parallel and still be
//! bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{f1_from, EvalError};
use crate::Finding;

pub const BOOTSTRAP_RNG: &str = "ChaCha8Rng::seed_from_u64(seed), stream = resample index";
pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean_f1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Standard deviation of the resampled F1 values.
    pub std_error: f64,
    pub n_resamples: usize,
    pub seed: u64,
    pub rng: String,
    pub histogram: Vec<HistogramBin>,
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty; `p` in [0,1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn histogram(sorted: &[f64], bins: usize) -> Vec<HistogramBin> {
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if bins == 0 {
        return Vec::new();
    }
    if max <= min {
        return vec![HistogramBin { low: min, high: max, count: sorted.len() as u64 }];
    }
    let width = (max - min) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            low: min + width * i as f64,
            high: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in sorted {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}

fn resample_f1(codes: &[u8], seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut tally = [0u64; 4];
    for _ in 0..codes.len() {
        tally[codes[rng.random_range(0..codes.len())] as usize] += 1;
    }
    f1_from(tally[0], tally[1], tally[2])
}

/// Bootstrap distribution of F1 over `(ai_status, report_label)` pairs.
pub fn bootstrap_f1(
    pairs: &[(Finding, Finding)],
    n_resamples: usize,
    seed: u64,
    bins: usize,
) -> Result<BootstrapSummary, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    if n_resamples == 0 {
        return Err(EvalError::Invalid("n_resamples must be positive".into()));
    }
    let codes: Vec<u8> = pairs
        .iter()
        .map(|&(p, a)| match (p, a) {
            (Finding::Abnormal, Finding::Abnormal) => 0,
            (Finding::Abnormal, Finding::Normal) => 1,
            (Finding::Normal, Finding::Abnormal) => 2,
            (Finding::Normal, Finding::Normal) => 3,
        })
        .collect();

    let mut values: Vec<f64> = (0..n_resamples as u64).into_par_iter().map(|i| resample_f1(&codes, seed, i)).collect();

    let n = values.len() as f64;
    let mean_f1 = values.iter().sum::<f64>() / n;
    let variance =
        if values.len() > 1 { values.iter().map(|v| (v - mean_f1).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    values.sort_by(f64::total_cmp);

    Ok(BootstrapSummary {
        mean_f1,
        ci_low: percentile(&values, 0.025),
        ci_high: percentile(&values, 0.975),
        std_error: variance.sqrt(),
        n_resamples,
        seed,
        rng: BOOTSTRAP_RNG.to_string(),
        histogram: histogram(&values, bins),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Finding::{Abnormal as A, Normal as N};

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!((percentile(&v, 0.025) - 1.075).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn all_true_positive() {
        let s = bootstrap_f1(&[(A, A); 5], 100, 1, 10).unwrap();
        assert_eq!((s.mean_f1, s.ci_low, s.ci_high), (1.0, 1.0, 1.0));
        assert_eq!(s.histogram.len(), 1);
        assert_eq!(s.histogram[0].count, 100);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(bootstrap_f1(&[], 10, 1, 10), Err(EvalError::NoPairs));
    }

    #[test]
    fn histogram_counts_everything() {
        let pairs = [(A, A), (A, N), (N, A), (N, N), (A, A)];
        let s = bootstrap_f1(&pairs, 1000, 9, 20).unwrap();
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), 1000);
        assert!(s.ci_low <= s.mean_f1 && s.mean_f1 <= s.ci_high);
    }
}
