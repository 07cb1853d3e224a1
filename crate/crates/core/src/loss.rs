//! Cross-entropy losses.
//!
//! Probabilities are clamped to `[1e-12, 1 - 1e-12]` before taking logs.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::numeric::pairwise_sum;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    MultiCrossEntropy,
}

/// Training targets, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One 0/1 flag per row.
    Binary(Vec<f64>),
    /// One one-hot row per observation.
    OneHot(Array2<f64>),
}

impl Targets {
    pub fn binary(flags: Vec<f64>) -> Result<Self> {
        if let Some(bad) = flags.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(KaneError::InvalidArgument(format!("binary outcome {bad} is not 0 or 1")));
        }
        Ok(Targets::Binary(flags))
    }

    pub fn one_hot(rows: Array2<f64>) -> Result<Self> {
        check_one_hot(rows.view())?;
        Ok(Targets::OneHot(rows))
    }

    pub fn from_labels(labels: &[usize], categories: usize) -> Result<Self> {
        let mut rows = Array2::zeros((labels.len(), categories));
        for (i, &c) in labels.iter().enumerate() {
            if c >= categories {
                return Err(KaneError::InvalidArgument(format!(
                    "category {c} out of range for {categories} classes"
                )));
            }
            rows[[i, c]] = 1.0;
        }
        Ok(Targets::OneHot(rows))
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Binary(v) => v.len(),
            Targets::OneHot(a) => a.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of one target row.
    pub fn width(&self) -> usize {
        match self {
            Targets::Binary(_) => 1,
            Targets::OneHot(a) => a.ncols(),
        }
    }

    pub(crate) fn row(&self, i: usize) -> TargetRow<'_> {
        match self {
            Targets::Binary(v) => TargetRow::Binary(v[i]),
            Targets::OneHot(a) => TargetRow::OneHot(a.row(i).to_slice().expect("standard layout")),
        }
    }

    /// Repeats rows by index, used for bootstrap resamples.
    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Binary(v) => Targets::Binary(rows.iter().map(|&i| v[i]).collect()),
            Targets::OneHot(a) => Targets::OneHot(a.select(ndarray::Axis(0), rows)),
        }
    }
}

pub(crate) enum TargetRow<'a> {
    Binary(f64),
    OneHot(&'a [f64]),
}

fn check_one_hot(rows: ArrayView2<f64>) -> Result<()> {
    for (i, row) in rows.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(KaneError::InvalidArgument(format!("outcome row {i} is not one-hot")));
        }
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub(crate) fn bce_term(alpha: f64, delta: f64) -> f64 {
    let a = clamp_prob(alpha);
    -(delta * a.ln() + (1.0 - delta) * (1.0 - a).ln())
}

pub(crate) fn ce_term(alpha: &[f64], delta: &[f64]) -> f64 {
    alpha.iter().zip(delta).map(|(&a, &d)| bce_term(a, d)).sum()
}

/// Mean binary cross-entropy.
pub fn bce_loss(predictions: &[f64], outcomes: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(KaneError::Empty("bce_loss needs at least one prediction".into()));
    }
    if predictions.len() != outcomes.len() {
        return Err(KaneError::Shape(format!(
            "{} predictions vs {} outcomes",
            predictions.len(),
            outcomes.len()
        )));
    }
    if outcomes.iter().any(|&d| d != 0.0 && d != 1.0) {
        return Err(KaneError::InvalidArgument("outcomes must be 0 or 1".into()));
    }
    let terms: Vec<f64> = predictions.iter().zip(outcomes).map(|(&a, &d)| bce_term(a, d)).collect();
    Ok(pairwise_sum(&terms) / predictions.len() as f64)
}

/// Mean multi-class cross-entropy in which every category contributes a
/// `delta log(a) + (1 - delta) log(1 - a)` term, not only the observed one.
pub fn ce_loss(predictions: ArrayView2<f64>, outcomes: ArrayView2<f64>) -> Result<f64> {
    if predictions.nrows() == 0 {
        return Err(KaneError::Empty("ce_loss needs at least one row".into()));
    }
    if predictions.dim() != outcomes.dim() {
        return Err(KaneError::Shape(format!(
            "predictions {:?} vs outcomes {:?}",
            predictions.dim(),
            outcomes.dim()
        )));
    }
    for (i, row) in predictions.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
            return Err(KaneError::InvalidArgument(format!("prediction row {i} is not on the simplex")));
        }
    }
    check_one_hot(outcomes)?;
    let terms: Vec<f64> = predictions
        .rows()
        .into_iter()
        .zip(outcomes.rows())
        .map(|(a, d)| a.iter().zip(d.iter()).map(|(&a, &d)| bce_term(a, d)).sum())
        .collect();
    Ok(pairwise_sum(&terms) / predictions.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_point_is_log_two() {
        let l = bce_loss(&[0.5; 7], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_limit() {
        let l = bce_loss(&[1.0 - 1e-12], &[1.0]).unwrap();
        assert!((l - 1e-12).abs() < 1e-15);
        // clamping keeps certain-but-wrong predictions finite
        assert!(bce_loss(&[1.0], &[0.0]).unwrap().is_finite());
    }

    #[test]
    fn hand_summed_mixed_case() {
        let want = -((0.9f64).ln() + (0.8f64).ln() + (0.7f64).ln() + (0.6f64).ln()) / 4.0;
        let got = bce_loss(&[0.9, 0.2, 0.7, 0.4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn uniform_three_class_rows() {
        let p = Array2::from_elem((4, 3), 1.0 / 3.0);
        let y = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let want = -((1.0f64 / 3.0).ln() + 2.0 * (2.0f64 / 3.0).ln());
        assert!((ce_loss(p.view(), y.view()).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn two_class_reduces_to_bce_pair() {
        let p = array![[0.3, 0.7], [0.9, 0.1], [0.45, 0.55]];
        let y = array![[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]];
        let col1: Vec<f64> = p.column(0).to_vec();
        let col2: Vec<f64> = p.column(1).to_vec();
        let y1: Vec<f64> = y.column(0).to_vec();
        let y2: Vec<f64> = y.column(1).to_vec();
        let pair = bce_loss(&col1, &y1).unwrap() + bce_loss(&col2, &y2).unwrap();
        assert!((ce_loss(p.view(), y.view()).unwrap() - pair).abs() < 1e-14);
    }

    #[test]
    fn three_random_rows_hand_summed() {
        let p = array![[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.25, 0.25, 0.5]];
        let y = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let l = |v: f64| v.ln();
        let want = -((l(0.8) + l(0.5) + l(0.7)) + (l(0.6) + l(0.9) + l(0.7)) + (l(0.75) + l(0.75) + l(0.5))) / 3.0;
        assert!((ce_loss(p.view(), y.view()).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.5], &[0.5]).is_err());
        let p = array![[0.5, 0.6]];
        let y = array![[1.0, 0.0]];
        assert!(ce_loss(p.view(), y.view()).is_err());
        let p = array![[0.5, 0.5]];
        let y = array![[1.0, 1.0]];
        assert!(ce_loss(p.view(), y.view()).is_err());
        assert!(Targets::binary(vec![0.0, 2.0]).is_err());
        assert!(Targets::from_labels(&[0, 3], 3).is_err());
    }
}
