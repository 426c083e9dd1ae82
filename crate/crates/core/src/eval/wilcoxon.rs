//! One-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size that gets the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// `P(W⁺ ≥ observed)` under the null.
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks of `values` (1-based), with tied values sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Exact upper tail over all `2ⁿ` sign assignments, by dynamic programming on doubled ranks.
fn exact_upper_tail(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = (2.0 * statistic).round() as usize;
    let tail: f64 = counts[threshold..].iter().sum();
    tail / 2f64.powi(ranks.len() as i32)
}

/// Tests the alternative `x > y` on paired samples.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::shape("wilcoxon pairs", x.len(), y.len()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("wilcoxon: non-finite difference".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            n: 0,
            p_value: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let statistic: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    if n <= EXACT_MAX_N {
        return Ok(WilcoxonResult {
            statistic,
            n,
            p_value: exact_upper_tail(&ranks, statistic),
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (statistic - mean - 0.5) / var.sqrt();
    let normal = Normal::standard();
    Ok(WilcoxonResult {
        statistic,
        n,
        p_value: normal.sf(z).clamp(f64::MIN_POSITIVE, 1.0),
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples_give_p_one() {
        let x = [0.3, 0.1, 0.9];
        let r = wilcoxon_signed_rank(&x, &x).unwrap();
        assert_eq!((r.n, r.p_value), (0, 1.0));
    }

    #[test]
    fn all_positive_differences() {
        let y = vec![0.0; 10];
        let x5: Vec<f64> = (1..=5).map(f64::from).collect();
        assert_abs_diff_eq!(wilcoxon_signed_rank(&x5, &y[..5]).unwrap().p_value, 1.0 / 32.0, epsilon = 1e-15);
        let x10: Vec<f64> = (1..=10).map(|v| v as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&x10, &y).unwrap();
        assert_abs_diff_eq!(r.p_value, 1.0 / 1024.0, epsilon = 1e-15);
        assert_eq!(r.statistic, 55.0);
    }

    #[test]
    fn ties_share_average_ranks() {
        let (r, t) = average_ranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(t, vec![1, 2, 1]);
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_boundary() {
        let x: Vec<f64> = (0..21).map(|i| ((i * 37) % 11) as f64 - 3.5 + i as f64 * 0.01).collect();
        let y = vec![0.0; 21];
        let approx = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!(!approx.exact);
        let ranks = average_ranks(&x.iter().map(|v| v.abs()).collect::<Vec<_>>()).0;
        let exact = exact_upper_tail(&ranks, approx.statistic);
        assert!((approx.p_value - exact).abs() < 0.01, "{} vs {exact}", approx.p_value);
    }

    #[test]
    fn length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn p_value_matches_sign_enumeration(
            diffs in proptest::collection::vec(-4i32..=4, 1..12),
        ) {
            // small integer differences force ties and zeros
            let x: Vec<f64> = diffs.iter().map(|&d| d as f64 * 0.5).collect();
            let y = vec![0.0; x.len()];
            let r = wilcoxon_signed_rank(&x, &y).unwrap();
            let nz: Vec<f64> = x.iter().copied().filter(|&v| v != 0.0).collect();
            proptest::prop_assert_eq!(r.n, nz.len());
            if nz.is_empty() {
                proptest::prop_assert_eq!(r.p_value, 1.0);
            } else {
                let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
                let rank = |v: f64| {
                    let below = abs.iter().filter(|&&a| a < v).count() as f64;
                    let equal = abs.iter().filter(|&&a| a == v).count() as f64;
                    below + (equal + 1.0) / 2.0
                };
                let ranks: Vec<f64> = abs.iter().map(|&a| rank(a)).collect();
                let observed: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
                let m = nz.len();
                let hits = (0u32..1 << m)
                    .filter(|mask| (0..m).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum::<f64>() >= observed - 1e-9)
                    .count();
                proptest::prop_assert!((r.statistic - observed).abs() < 1e-9);
                proptest::prop_assert!((r.p_value - hits as f64 / (1u64 << m) as f64).abs() < 1e-12);
            }
        }
    }
}
