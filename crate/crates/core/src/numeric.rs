//! Order-fixed reductions and small statistical helpers.
//!
//! Sums over data rows are done by recursive halving. The reduction tree
//! depends only on the row count, so stacking a dataset on top of itself
//! doubles every partial sum exactly and mean losses/gradients are
//! bit-identical to the original.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::Result;

const LEAF: usize = 16;

pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Accumulates a scalar and a vector of `width` entries over rows `0..n`.
/// `leaf(i, scalar, vector)` must add row `i`'s contribution in place.
pub(crate) fn pairwise_accumulate<F>(n: usize, width: usize, leaf: &mut F) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(usize, &mut f64, &mut [f64]) -> Result<()>,
{
    fn rec<F>(lo: usize, hi: usize, width: usize, leaf: &mut F) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(usize, &mut f64, &mut [f64]) -> Result<()>,
    {
        if hi - lo <= LEAF {
            let mut s = 0.0;
            let mut v = vec![0.0; width];
            for i in lo..hi {
                leaf(i, &mut s, &mut v)?;
            }
            return Ok((s, v));
        }
        let mid = lo + (hi - lo) / 2;
        let (ls, mut lv) = rec(lo, mid, width, leaf)?;
        let (rs, rv) = rec(mid, hi, width, leaf)?;
        for (a, b) in lv.iter_mut().zip(&rv) {
            *a += b;
        }
        Ok((ls + rs, lv))
    }
    rec(0, n, width, leaf)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal distribution function, via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Linear-interpolation sample quantile of already sorted data (R type 7).
pub fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_of_stacked_copy_doubles_exactly() {
        let v: Vec<f64> = (0..777).map(|i| ((i as f64) * 0.37).sin() / 3.0).collect();
        let mut twice = v.clone();
        twice.extend_from_slice(&v);
        assert_eq!(pairwise_sum(&twice), 2.0 * pairwise_sum(&v));
        assert_eq!(pairwise_sum(&twice) / 1554.0, pairwise_sum(&v) / 777.0);
    }

    #[test]
    fn normal_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // 40-digit reference: 0.9750021048517795637871763...
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_6).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((normal_cdf(-8.0) - 6.220_960_574_271_785e-16).abs() < 1e-28);
        for i in -80..=80 {
            let x = i as f64 / 10.0;
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
        }
        assert!((normal_quantile(0.975_002_104_851_779_6) - 1.96).abs() < 1e-9);
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(sorted_quantile(&s, 0.0), 1.0);
        assert_eq!(sorted_quantile(&s, 1.0), 4.0);
        assert_eq!(sorted_quantile(&s, 0.5), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
