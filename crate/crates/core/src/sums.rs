//! Deterministic reductions over path-indexed samples.
//!
//! Parallel experiments collect per-path values into an index-ordered buffer
//! and reduce it here. Summation walks fixed-size blocks in a fixed order, so
//! the result is identical no matter how many worker threads produced the
//! buffer, and the blocked tree keeps rounding error well below the
//! statistical noise of any estimator in this crate.

const BLOCK: usize = 4096;

/// Sum with a fixed-shape block tree: per-block sequential sums, then a
/// sequential sum of block totals.
pub(crate) fn block_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    xs.chunks(BLOCK).map(|c| c.iter().sum::<f64>()).sum()
}

/// Mean and unbiased sample variance via a two-pass blocked reduction.
/// Requires `xs.len() >= 2`.
pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let mean = block_sum(xs) / xs.len() as f64;
    (mean, variance_about(xs, mean))
}

/// Unbiased sample variance around a caller-supplied center.
pub(crate) fn variance_about(xs: &[f64], center: f64) -> f64 {
    debug_assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let ss: f64 = if xs.len() <= BLOCK {
        xs.iter().map(|x| (x - center) * (x - center)).sum()
    } else {
        xs.chunks(BLOCK)
            .map(|c| c.iter().map(|x| (x - center) * (x - center)).sum::<f64>())
            .sum::<f64>()
    };
    ss / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sum_matches_sequential_on_small_and_large_inputs() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(block_sum(&xs), 45.0);
        let xs: Vec<f64> = (0..10_000).map(|i| (i % 7) as f64 * 0.125).collect();
        let seq: f64 = xs.iter().sum();
        assert!((block_sum(&xs) - seq).abs() < 1e-9);
    }

    #[test]
    fn mean_and_variance_agree_with_direct_formula() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, v) = mean_and_variance(&xs);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }
}
