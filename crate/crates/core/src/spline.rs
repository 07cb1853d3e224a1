//! B-spline bases on a clamped uniform knot vector over `[0, 1]`.
//!
//! With degree `p` and `m` equal intervals the knot vector is
//!
//! ```text
//! 0 (p+1 times), 1/m, 2/m, ..., (m-1)/m, 1 (p+1 times)
//! ```
//!
//! which carries `K = p + m` basis functions. Evaluation uses the
//! triangular Cox–de Boor scheme restricted to the `p + 1` functions that
//! are nonzero on the knot span containing `x`. The right endpoint belongs to
//! the last span so that `B_K(1) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};

/// Largest supported degree. Local evaluation works on stack buffers of this size.
pub const MAX_DEGREE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineSpecRepr", into = "SplineSpecRepr")]
pub struct SplineSpec {
    degree: usize,
    intervals: usize,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineSpecRepr {
    degree: usize,
    intervals: usize,
}

impl TryFrom<SplineSpecRepr> for SplineSpec {
    type Error = KaneError;
    fn try_from(r: SplineSpecRepr) -> Result<Self> {
        SplineSpec::new(r.degree, r.intervals)
    }
}

impl From<SplineSpec> for SplineSpecRepr {
    fn from(s: SplineSpec) -> Self {
        SplineSpecRepr { degree: s.degree, intervals: s.intervals }
    }
}

/// Values (and optionally first derivatives) of the `p + 1` basis functions
/// that can be nonzero at a point. `first` is the 0-based global index of
/// `values[0]`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
    pub derivatives: [f64; MAX_DEGREE + 1],
}

impl SplineSpec {
    pub fn new(degree: usize, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return Err(KaneError::SplineSpec("interval count must be positive".into()));
        }
        if degree > MAX_DEGREE {
            return Err(KaneError::SplineSpec(format!(
                "degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        let mut knots = Vec::with_capacity(intervals + 1 + 2 * degree);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        knots.extend((1..intervals).map(|i| i as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { degree, intervals, knots })
    }

    /// Cubic splines on two intervals, the setting used throughout the simulation study.
    pub fn cubic_two_interval() -> Self {
        Self::new(3, 2).expect("valid spec")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of basis functions, `K = p + m`.
    pub fn basis_count(&self) -> usize {
        self.degree + self.intervals
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check_domain(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(KaneError::Domain { value: x })
        }
    }

    /// Knot span `s` with `t_s <= x < t_{s+1}`; `x = 1` maps to the last nonempty span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.basis_count() - 1;
        let mut s = p + ((x * self.intervals as f64).floor() as usize).min(self.intervals - 1);
        while s > p && x < self.knots[s] {
            s -= 1;
        }
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Nonzero functions of the given degree on span `s`, written to `out[..=degree]`.
    fn basis_funs(&self, s: usize, x: f64, degree: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Local basis values and derivatives at `x`; `x` must already lie in `[0, 1]`.
    pub fn local(&self, x: f64) -> Result<LocalBasis> {
        Self::check_domain(x)?;
        Ok(self.local_unchecked(x))
    }

    pub(crate) fn local_unchecked(&self, x: f64) -> LocalBasis {
        let p = self.degree;
        let s = self.span(x);
        let mut values = [0.0; MAX_DEGREE + 1];
        let mut derivatives = [0.0; MAX_DEGREE + 1];
        self.basis_funs(s, x, p, &mut values);
        if p > 0 {
            let mut lower = [0.0; MAX_DEGREE + 1];
            self.basis_funs(s, x, p - 1, &mut lower);
            let t = &self.knots;
            let pf = p as f64;
            for r in 0..=p {
                let i = s - p + r;
                let mut d = 0.0;
                if r >= 1 {
                    d += pf * lower[r - 1] / (t[i + p] - t[i]);
                }
                if r < p {
                    d -= pf * lower[r] / (t[i + p + 1] - t[i + 1]);
                }
                derivatives[r] = d;
            }
        }
        LocalBasis { first: s - p, values, derivatives }
    }

    /// `B_k^p(x)` for a 1-based basis index `k`.
    pub fn basis_value(&self, k: usize, x: f64) -> Result<f64> {
        let count = self.basis_count();
        if k == 0 || k > count {
            return Err(KaneError::BasisIndex { index: k, count });
        }
        Ok(self.design_row(x)?[k - 1])
    }

    /// All `K` basis values at `x`; at most `p + 1` entries are nonzero.
    pub fn design_row(&self, x: f64) -> Result<Vec<f64>> {
        let local = self.local(x)?;
        let mut row = vec![0.0; self.basis_count()];
        row[local.first..=local.first + self.degree]
            .copy_from_slice(&local.values[..=self.degree]);
        Ok(row)
    }

    /// First derivatives of all `K` basis functions at `x`. At interior knots
    /// the right-hand derivative is returned, at `x = 1` the left-hand one.
    pub fn design_row_derivative(&self, x: f64) -> Result<Vec<f64>> {
        let local = self.local(x)?;
        let mut row = vec![0.0; self.basis_count()];
        row[local.first..=local.first + self.degree]
            .copy_from_slice(&local.derivatives[..=self.degree]);
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i128>;

    /// Textbook recursive Cox–de Boor on exact rationals, with 0/0 := 0 and
    /// the last basis function closed at the right endpoint.
    fn oracle(knots: &[Q], i: usize, p: usize, x: Q) -> Q {
        let zero = Q::from_integer(0);
        let one = Q::from_integer(1);
        if p == 0 {
            let n_basis = knots.len() - 1;
            let inside = knots[i] <= x && x < knots[i + 1];
            // right endpoint belongs to the last nonempty span
            let last_nonempty = (0..n_basis).rev().find(|&j| knots[j] < knots[j + 1]).unwrap();
            let closed = i == last_nonempty && x == knots[i + 1];
            return if inside || closed { one } else { zero };
        }
        let mut v = zero;
        let d1 = knots[i + p] - knots[i];
        if d1 != zero {
            v += (x - knots[i]) / d1 * oracle(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 != zero {
            v += (knots[i + p + 1] - x) / d2 * oracle(knots, i + 1, p - 1, x);
        }
        v
    }

    fn rational_knots(p: usize, m: usize) -> Vec<Q> {
        let mut k = vec![Q::from_integer(0); p + 1];
        k.extend((1..m).map(|i| Q::new(i as i128, m as i128)));
        k.extend(vec![Q::from_integer(1); p + 1]);
        k
    }

    fn to_f64(q: Q) -> f64 {
        *q.numer() as f64 / *q.denom() as f64
    }

    #[test]
    fn knot_vector_layout() {
        let s = SplineSpec::new(3, 2).unwrap();
        assert_eq!(s.knots(), &[0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.basis_count(), 5);
        assert_eq!(s.knots().len(), 2 + 1 + 2 * 3);
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let s = SplineSpec::new(0, 2).unwrap();
        assert_eq!(s.basis_value(1, 0.25).unwrap(), 1.0);
        assert_eq!(s.basis_value(2, 0.25).unwrap(), 0.0);
        assert_eq!(s.basis_value(2, 1.0).unwrap(), 1.0);
        assert_eq!(s.design_row_derivative(0.3).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn clamped_endpoints() {
        let s = SplineSpec::cubic_two_interval();
        assert_eq!(s.design_row(0.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.design_row(1.0).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn matches_rational_oracle_on_dyadic_points() {
        for (p, m) in [(3, 2), (2, 4), (1, 2), (3, 8), (0, 3)] {
            let spec = SplineSpec::new(p, m).unwrap();
            let knots = rational_knots(p, m);
            for num in 0..=64 {
                let xq = Q::new(num, 64);
                let x = to_f64(xq);
                let row = spec.design_row(x).unwrap();
                for k in 0..spec.basis_count() {
                    let want = to_f64(oracle(&knots, k, p, xq));
                    assert!((row[k] - want).abs() <= 1e-12, "p={p} m={m} x={x} k={k}");
                }
            }
        }
        // named case: p=3, m=2, k=3, x=0.5
        let spec = SplineSpec::cubic_two_interval();
        let want = to_f64(oracle(&rational_knots(3, 2), 2, 3, Q::new(1, 2)));
        assert!((spec.basis_value(3, 0.5).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5).abs() < 1e-15);
    }

    #[test]
    fn design_row_at_point_three_matches_oracle() {
        let spec = SplineSpec::cubic_two_interval();
        let knots = rational_knots(3, 2);
        let row = spec.design_row(0.3).unwrap();
        for (k, v) in row.iter().enumerate() {
            let want = to_f64(oracle(&knots, k, 3, Q::new(3, 10)));
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn hat_function_slopes() {
        // knot spacing 0.5 gives slopes of magnitude 1 / 0.5 = 2
        let s = SplineSpec::new(1, 2).unwrap();
        let d = s.design_row_derivative(0.25).unwrap();
        assert_eq!(d, vec![-2.0, 2.0, 0.0]);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let s = SplineSpec::cubic_two_interval();
        let x = 0.37;
        let h = 1e-6;
        let d = s.design_row_derivative(x).unwrap();
        let up = s.design_row(x + h).unwrap();
        let dn = s.design_row(x - h).unwrap();
        for k in 0..5 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((d[k] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "k={k}");
        }
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn domain_and_index_errors() {
        let s = SplineSpec::cubic_two_interval();
        assert!(matches!(s.design_row(1.0 + 1e-9), Err(KaneError::Domain { .. })));
        assert!(matches!(s.design_row(-0.1), Err(KaneError::Domain { .. })));
        assert!(matches!(s.design_row(f64::NAN), Err(KaneError::Domain { .. })));
        assert!(matches!(s.basis_value(0, 0.5), Err(KaneError::BasisIndex { .. })));
        assert!(matches!(s.basis_value(6, 0.5), Err(KaneError::BasisIndex { .. })));
        assert!(SplineSpec::new(3, 0).is_err());
    }

    #[test]
    fn serde_round_trip_rebuilds_knots() {
        let s = SplineSpec::new(2, 5).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"degree":2,"intervals":5}"#);
        let back: SplineSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_of_unity_and_support(p in 0usize..6, m in 1usize..9, x in 0.0f64..=1.0) {
                let s = SplineSpec::new(p, m).unwrap();
                let row = s.design_row(x).unwrap();
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!(row.iter().filter(|&&v| v != 0.0).count() <= p + 1);
                let d = s.design_row_derivative(x).unwrap();
                prop_assert!(d.iter().sum::<f64>().abs() < 1e-9);
            }
        }
    }
}
