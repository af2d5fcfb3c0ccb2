//! Small descriptive and resampling statistics used by the experiment
//! summaries.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation percentile of already sorted data, `q ∈ [0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    percentile_sorted(&sorted(values), q)
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn resample_mean<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> f64 {
    let n = values.len();
    (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(values: &[f64], level: f64, resamples: usize, rng: &mut R) -> Option<Interval> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let means: Vec<f64> = sorted(&(0..resamples).map(|_| resample_mean(values, rng)).collect::<Vec<_>>());
    let tail = (1.0 - level) / 2.0;
    Some(Interval {
        lo: percentile_sorted(&means, tail)?,
        hi: percentile_sorted(&means, 1.0 - tail)?,
    })
}

/// Quantile `q` of the bootstrap distribution of `mean(b) − mean(a)`.
pub fn bootstrap_mean_difference_quantile<R: Rng + ?Sized>(a: &[f64], b: &[f64], q: f64, resamples: usize, rng: &mut R) -> Option<f64> {
    if a.is_empty() || b.is_empty() || resamples == 0 {
        return None;
    }
    let diffs: Vec<f64> = (0..resamples).map(|_| resample_mean(b, rng) - resample_mean(a, rng)).collect();
    percentile(&diffs, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y ≈ a + b x`. Needs two distinct `x` values.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { intercept, slope, r_squared })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            out[k] = rank;
        }
        start = end + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let mx = mean(x)?;
    let my = mean(y)?;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// One-sided permutation p-value for a positive Spearman correlation: the
/// fraction of shuffles of `y` with a correlation at least as large, with
/// the observed arrangement counted once.
pub fn spearman_permutation_p<R: Rng + ?Sized>(x: &[f64], y: &[f64], permutations: usize, rng: &mut R) -> Option<f64> {
    let observed = spearman(x, y)?;
    let rx = ranks(x);
    let mut ry = ranks(y);
    let mut hits = 1usize;
    for _ in 0..permutations {
        ry.shuffle(rng);
        if pearson(&rx, &ry).unwrap_or(0.0) >= observed - 1e-12 {
            hits += 1;
        }
    }
    Some(hits as f64 / (permutations + 1) as f64)
}

/// Weighted least-squares nondecreasing fit (pool adjacent violators).
pub fn isotonic_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Each block: (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() >= 2 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, w2, n2) = blocks.pop().unwrap();
            let (m1, w1, n1) = blocks.pop().unwrap();
            let w = w1 + w2;
            let m = if w > 0.0 { (m1 * w1 + m2 * w2) / w } else { (m1 + m2) / 2.0 };
            blocks.push((m, w, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, n)| std::iter::repeat_n(m, n)).collect()
}

pub fn histogram(values: impl IntoIterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::RngSeed;
    use proptest::prelude::*;

    #[test]
    fn percentiles_interpolate() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), Some(2.5));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 1.0), Some(4.0));
        assert!((percentile(&v, 0.2).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(percentile(&[7.0], 0.2), Some(7.0));
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let mut rng = RngSeed::new(1, "boot").rng();
        let v: Vec<f64> = (0..200).map(|k| (k % 10) as f64).collect();
        let ci = bootstrap_mean_ci(&v, 0.9, 1000, &mut rng).unwrap();
        assert!(ci.lo < 4.5 && 4.5 < ci.hi);
        assert!(ci.hi - ci.lo < 1.0);
        let constant = bootstrap_mean_ci(&[2.0; 5], 0.99, 100, &mut rng).unwrap();
        assert_eq!(constant, Interval { lo: 2.0, hi: 2.0 });
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_of_monotone_data() {
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
        let p = spearman_permutation_p(&x, &y, 5000, &mut RngSeed::new(2, "perm").rng()).unwrap();
        assert!(p < 0.01, "{p}");
    }

    #[test]
    fn isotonic_pools_violators() {
        let fit = isotonic_increasing(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]);
        assert_eq!(fit, vec![1.0, 2.5, 2.5, 4.0]);
        let fit = isotonic_increasing(&[3.0, 1.0], &[1.0, 3.0]);
        assert_eq!(fit, vec![1.5, 1.5]);
    }

    proptest! {
        #[test]
        fn isotonic_output_is_sorted(values in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let fit = isotonic_increasing(&values, &vec![1.0; values.len()]);
            prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let total: f64 = values.iter().sum();
            prop_assert!((fit.iter().sum::<f64>() - total).abs() < 1e-9);
        }
    }
}
