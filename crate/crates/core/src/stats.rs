//! Batch-means estimators shared by the Monte Carlo arms.

use std::ops::Range;

use crate::error::{Result, SipError};

/// Smallest batch count used when the sample allows it.
pub const MIN_BATCHES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, stderr: 0.0 }
    }

    /// `|self − target| <= k σ`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Mean of group means with standard error `sd(group means)/√groups`.
pub fn batch_stats<G: AsRef<[f64]>>(groups: &[G]) -> Result<Estimate> {
    if groups.len() < 2 {
        return Err(SipError::InsufficientData(format!(
            "batch means need at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut means = Vec::with_capacity(groups.len());
    for g in groups {
        let g = g.as_ref();
        if g.is_empty() {
            return Err(SipError::InsufficientData("empty batch".into()));
        }
        means.push(g.iter().sum::<f64>() / g.len() as f64);
    }
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k - 1.0);
    Ok(Estimate {
        mean,
        stderr: (var / k).sqrt(),
    })
}

/// Batch count for `n` samples: at least [`MIN_BATCHES`], about `√n` for large `n`.
pub fn batch_count(n: usize) -> usize {
    let root = (n as f64).sqrt() as usize;
    n.min(MIN_BATCHES.max(root))
}

/// Contiguous, near-equal partition of `0..n` into `batches` ranges.
pub fn batch_ranges(n: usize, batches: usize) -> Vec<Range<usize>> {
    let base = n / batches;
    let extra = n % batches;
    let mut out = Vec::with_capacity(batches);
    let mut start = 0;
    for b in 0..batches {
        let len = base + usize::from(b < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Batch-means estimate over an ordered sample (e.g. replica outputs).
pub fn batch_means(samples: &[f64]) -> Result<Estimate> {
    if samples.len() < 2 {
        return Err(SipError::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let groups: Vec<&[f64]> = batch_ranges(samples.len(), batch_count(samples.len()))
        .into_iter()
        .map(|r| &samples[r])
        .collect();
    let mut est = batch_stats(&groups)?;
    // Unequal batch sizes: report the plain sample mean.
    est.mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(est)
}

/// Binomial proportion with the plug-in standard error.
pub fn proportion(successes: usize, trials: usize) -> Estimate {
    let p = successes as f64 / trials as f64;
    Estimate {
        mean: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
    }
}

/// Product of the column means of a replica × component sample matrix, with a
/// delta-method error from the batch-means covariance.
pub fn product_of_means(rows: &[Vec<f64>]) -> Result<Estimate> {
    let n = rows.len();
    if n < 2 {
        return Err(SipError::InsufficientData("need at least 2 replicas".into()));
    }
    let k = rows[0].len();
    let ranges = batch_ranges(n, batch_count(n));
    let b = ranges.len() as f64;
    let batch: Vec<Vec<f64>> = ranges
        .iter()
        .map(|r| {
            (0..k)
                .map(|j| rows[r.clone()].iter().map(|row| row[j]).sum::<f64>() / r.len() as f64)
                .collect()
        })
        .collect();
    let means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|row| row[j]).sum::<f64>() / n as f64)
        .collect();
    let product: f64 = means.iter().product();
    let grad: Vec<f64> = (0..k)
        .map(|j| {
            means
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, m)| m)
                .product()
        })
        .collect();
    let mut var = 0.0;
    for i in 0..k {
        for j in 0..k {
            let cov = batch
                .iter()
                .map(|bm| (bm[i] - means[i]) * (bm[j] - means[j]))
                .sum::<f64>()
                / (b - 1.0);
            var += grad[i] * grad[j] * cov / b;
        }
    }
    Ok(Estimate {
        mean: product,
        stderr: var.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn constant_samples_have_zero_error() {
        let groups = vec![vec![2.5; 4]; 10];
        let est = batch_stats(&groups).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn uniform_mean_within_three_sigma() {
        let mut s = derive_stream(11, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| s.uniform()).collect();
        let est = batch_means(&xs).unwrap();
        assert!(est.within(0.5, 3.0), "{est:?}");
        assert!(est.stderr > 0.0);
    }

    #[test]
    fn two_singleton_groups() {
        let est = batch_stats(&[vec![1.0], vec![4.0]]).unwrap();
        assert_eq!(est.mean, 2.5);
        assert!((est.stderr - 1.5).abs() < 1e-15);
    }

    #[test]
    fn too_few_groups_is_an_error() {
        assert!(matches!(
            batch_stats(&[vec![1.0]]),
            Err(SipError::InsufficientData(_))
        ));
    }

    #[test]
    fn ranges_cover_everything() {
        let r = batch_ranges(103, 30);
        assert_eq!(r.len(), 30);
        assert_eq!(r.first().unwrap().start, 0);
        assert_eq!(r.last().unwrap().end, 103);
        assert!(r.windows(2).all(|w| w[0].end == w[1].start));
    }

    #[test]
    fn stderr_shrinks_with_groups() {
        let mut s = derive_stream(12, 0);
        let small: Vec<f64> = (0..400).map(|_| s.uniform()).collect();
        let large: Vec<f64> = (0..40_000).map(|_| s.uniform()).collect();
        let a = batch_means(&small).unwrap().stderr;
        let b = batch_means(&large).unwrap().stderr;
        assert!(b < a / 4.0, "{a} vs {b}");
    }
}
