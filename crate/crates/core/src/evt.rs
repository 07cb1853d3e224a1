//! Threshold-exceedance datasets.
//!
//! A raw dataset pairs features with a trigger variable and a follow-up
//! outcome. Thresholding keeps the rows whose trigger strictly exceeds its
//! empirical quantile and rescales their features to the unit cube.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::loss::Targets;

/// Smallest exceedance count a network will be fitted on.
pub const MIN_RETAINED: usize = 25;
/// Smallest sample an empirical threshold is computed from.
pub const MIN_THRESHOLD_SAMPLE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    Single(Vec<f64>),
    /// One column per competing trigger; reduced row-wise by [`reduce_multi_trigger`].
    Multi(Array2<f64>),
}

impl Trigger {
    pub fn len(&self) -> usize {
        match self {
            Trigger::Single(v) => v.len(),
            Trigger::Multi(a) => a.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scalar(&self) -> Result<Vec<f64>> {
        match self {
            Trigger::Single(v) => Ok(v.clone()),
            Trigger::Multi(a) => reduce_multi_trigger(a.view()),
        }
    }
}

/// Follow-up observations. Entries may be missing on rows that never
/// exceed the threshold; they must be present on every retained row.
#[derive(Debug, Clone, PartialEq)]
pub enum FollowUp {
    Binary(Vec<Option<bool>>),
    /// 0-based class labels out of `categories`.
    Categorical { labels: Vec<Option<usize>>, categories: usize },
    /// Ordered levels `1..=categories`.
    Ordinal { levels: Vec<Option<usize>>, categories: usize },
    /// Continuous follow-up turned into `z > threshold`; `None` reuses the trigger threshold.
    Continuous { values: Vec<Option<f64>>, threshold: Option<f64> },
    /// Continuous follow-up turned into `z > y` against the trigger itself.
    ExceedsTrigger(Vec<Option<f64>>),
}

impl FollowUp {
    pub fn len(&self) -> usize {
        match self {
            FollowUp::Binary(v) => v.len(),
            FollowUp::Categorical { labels, .. } => labels.len(),
            FollowUp::Ordinal { levels, .. } => levels.len(),
            FollowUp::Continuous { values, .. } => values.len(),
            FollowUp::ExceedsTrigger(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FollowUp::Binary(_) => "binary",
            FollowUp::Categorical { .. } => "categorical",
            FollowUp::Ordinal { .. } => "ordinal",
            FollowUp::Continuous { .. } => "continuous",
            FollowUp::ExceedsTrigger(_) => "exceeds_trigger",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub features: Array2<f64>,
    pub trigger: Trigger,
    pub follow_up: FollowUp,
}

impl RawDataset {
    pub fn new(features: Array2<f64>, trigger: Trigger, follow_up: FollowUp) -> Result<Self> {
        let n = features.nrows();
        if trigger.len() != n || follow_up.len() != n {
            return Err(KaneError::Shape(format!(
                "{n} feature rows, {} trigger rows, {} follow-up rows",
                trigger.len(),
                follow_up.len()
            )));
        }
        match &follow_up {
            FollowUp::Ordinal { levels, categories } => {
                if let Some(bad) = levels.iter().flatten().find(|&&l| l == 0 || l > *categories) {
                    return Err(KaneError::InvalidArgument(format!(
                        "ordinal level {bad} outside 1..={categories}"
                    )));
                }
            }
            FollowUp::Categorical { labels, categories } => {
                if let Some(bad) = labels.iter().flatten().find(|&&l| l >= *categories) {
                    return Err(KaneError::InvalidArgument(format!(
                        "category {bad} outside 0..{categories}"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { features, trigger, follow_up })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Per-feature min-max map onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Constant columns; these map to 0.5.
    #[serde(default)]
    pub degenerate: Vec<bool>,
}

impl FeatureScaling {
    /// The identity map on the unit cube.
    pub fn unit(dim: usize) -> Self {
        Self { min: vec![0.0; dim], max: vec![1.0; dim], degenerate: vec![false; dim] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn map_value(&self, j: usize, v: f64) -> f64 {
        if self.degenerate.get(j).copied().unwrap_or(false) {
            0.5
        } else {
            (v - self.min[j]) / (self.max[j] - self.min[j])
        }
    }

    /// Applies the stored map to new data, clipping to `[0, 1]`. Returns the
    /// scaled matrix and the number of clipped entries.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, usize)> {
        if x.ncols() != self.dim() {
            return Err(KaneError::Shape(format!(
                "data has {} features, scaling expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        let mut clipped = 0;
        let out = Array2::from_shape_fn(x.dim(), |(i, j)| {
            let v = self.map_value(j, x[[i, j]]);
            if v < 0.0 || v > 1.0 {
                clipped += 1;
            }
            v.clamp(0.0, 1.0)
        });
        Ok((out, clipped))
    }

    pub fn unscale(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(i, j)| {
            if self.degenerate.get(j).copied().unwrap_or(false) {
                self.min[j]
            } else {
                self.min[j] + x[[i, j]] * (self.max[j] - self.min[j])
            }
        })
    }
}

/// Column-wise min-max scaling onto `[0, 1]`; constant columns map to 0.5 and are flagged.
pub fn scale_features(x: ArrayView2<f64>) -> Result<(Array2<f64>, FeatureScaling)> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(KaneError::Empty("cannot scale an empty feature matrix".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KaneError::InvalidArgument("features must be finite".into()));
    }
    let mut scaling = FeatureScaling { min: vec![], max: vec![], degenerate: vec![] };
    for col in x.axis_iter(Axis(1)) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        scaling.min.push(lo);
        scaling.max.push(hi);
        scaling.degenerate.push(!(hi > lo));
    }
    let (scaled, _) = scaling.apply(x)?;
    Ok((scaled, scaling))
}

/// The `ceil(q n)`-th order statistic of `y`.
pub fn empirical_threshold(y: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(KaneError::InvalidArgument(format!("quantile level {q} must lie in (0, 1)")));
    }
    if y.len() < MIN_THRESHOLD_SAMPLE {
        return Err(KaneError::InvalidArgument(format!(
            "need at least {MIN_THRESHOLD_SAMPLE} trigger values, got {}",
            y.len()
        )));
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(KaneError::InvalidArgument("trigger contains NaN".into()));
    }
    let n = y.len();
    // the small offset keeps q n that is integral up to rounding from jumping a rank
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// Row-wise minimum over competing triggers.
///
/// Exceeding a threshold with the minimum means every trigger exceeded it,
/// whereas the multi-trigger cascade probability conditions on *any*
/// trigger exceeding it. The minimum is what is implemented; see the README.
pub fn reduce_multi_trigger(y: ArrayView2<f64>) -> Result<Vec<f64>> {
    if y.ncols() == 0 {
        return Err(KaneError::Shape("at least one trigger column is required".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(KaneError::InvalidArgument("trigger values must be finite".into()));
    }
    Ok(y.rows().into_iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect())
}

/// `z_i > u`.
pub fn continuous_to_indicator(z: &[f64], u: f64) -> Vec<bool> {
    z.iter().map(|&v| v > u).collect()
}

/// `z_i > y_i`, the extremal probabilistic-index indicator.
pub fn exceedance_indicator_pi(z: &[f64], y: &[f64]) -> Result<Vec<bool>> {
    if z.len() != y.len() {
        return Err(KaneError::Shape(format!("{} follow-up values vs {} triggers", z.len(), y.len())));
    }
    Ok(z.iter().zip(y).map(|(a, b)| a > b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcomes {
    Binary(Vec<f64>),
    OneHot(Array2<f64>),
    /// Levels `1..=categories`.
    Ordinal { levels: Vec<usize>, categories: usize },
}

impl Outcomes {
    pub fn len(&self) -> usize {
        match self {
            Outcomes::Binary(v) => v.len(),
            Outcomes::OneHot(a) => a.nrows(),
            Outcomes::Ordinal { levels, .. } => levels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> Result<Targets> {
        match self {
            Outcomes::Binary(v) => Targets::binary(v.clone()),
            Outcomes::OneHot(a) => Targets::one_hot(a.clone()),
            Outcomes::Ordinal { .. } => Err(KaneError::InvalidArgument(
                "ordinal outcomes need the Frank-Hall decomposition or one-hot conversion".into(),
            )),
        }
    }

    fn select(&self, rows: &[usize]) -> Outcomes {
        match self {
            Outcomes::Binary(v) => Outcomes::Binary(rows.iter().map(|&i| v[i]).collect()),
            Outcomes::OneHot(a) => Outcomes::OneHot(a.select(Axis(0), rows)),
            Outcomes::Ordinal { levels, categories } => Outcomes::Ordinal {
                levels: rows.iter().map(|&i| levels[i]).collect(),
                categories: *categories,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalingPolicy {
    /// Min-max scaling fitted on the retained rows.
    RetainedMinMax,
    /// A known map, e.g. the identity when features already live on the unit cube.
    Fixed(FeatureScaling),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOptions {
    pub scaling: ScalingPolicy,
    pub ordinal_as_one_hot: bool,
    pub min_retained: usize,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self { scaling: ScalingPolicy::RetainedMinMax, ordinal_as_one_hot: false, min_retained: MIN_RETAINED }
    }
}

/// The exceedance dataset `{(outcome_i, x_i) : y_i > u}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedSample {
    /// Scaled features in `[0, 1]^d`, one row per retained observation.
    pub features: Array2<f64>,
    pub outcomes: Outcomes,
    pub threshold: f64,
    pub quantile_level: f64,
    /// Indices of the retained rows in the raw dataset.
    pub retained_rows: Vec<usize>,
    pub scaling: FeatureScaling,
    /// Feature entries clipped into the unit cube (only with a fixed scaling).
    pub clipped: usize,
}

impl ThresholdedSample {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Sample made of the given rows (with repetition), keeping threshold and scaling.
    pub fn select(&self, rows: &[usize]) -> ThresholdedSample {
        ThresholdedSample {
            features: self.features.select(Axis(0), rows),
            outcomes: self.outcomes.select(rows),
            threshold: self.threshold,
            quantile_level: self.quantile_level,
            retained_rows: rows.iter().map(|&i| self.retained_rows[i]).collect(),
            scaling: self.scaling.clone(),
            clipped: 0,
        }
    }
}

fn missing(row: usize) -> KaneError {
    KaneError::InvalidArgument(format!("follow-up missing on retained row {row}"))
}

/// Thresholds the trigger at its empirical `q`-quantile and builds the exceedance sample.
pub fn build_threshold_sample(raw: &RawDataset, q: f64, opts: &ThresholdOptions) -> Result<ThresholdedSample> {
    let y = raw.trigger.scalar()?;
    let u = empirical_threshold(&y, q)?;
    let retained: Vec<usize> = (0..y.len()).filter(|&i| y[i] > u).collect();
    if retained.len() < opts.min_retained {
        return Err(KaneError::TooFewExceedances { retained: retained.len(), required: opts.min_retained });
    }
    let selected = raw.features.select(Axis(0), &retained);
    let (features, scaling, clipped) = match &opts.scaling {
        ScalingPolicy::RetainedMinMax => {
            let (f, s) = scale_features(selected.view())?;
            (f, s, 0)
        }
        ScalingPolicy::Fixed(s) => {
            let (f, c) = s.apply(selected.view())?;
            (f, s.clone(), c)
        }
    };

    let outcomes = match &raw.follow_up {
        FollowUp::Binary(v) => Outcomes::Binary(
            retained
                .iter()
                .map(|&i| v[i].map(|b| if b { 1.0 } else { 0.0 }).ok_or_else(|| missing(i)))
                .collect::<Result<_>>()?,
        ),
        FollowUp::Categorical { labels, categories } => {
            let mut a = Array2::zeros((retained.len(), *categories));
            for (r, &i) in retained.iter().enumerate() {
                a[[r, labels[i].ok_or_else(|| missing(i))?]] = 1.0;
            }
            Outcomes::OneHot(a)
        }
        FollowUp::Ordinal { levels, categories } => {
            let lv: Vec<usize> = retained.iter().map(|&i| levels[i].ok_or_else(|| missing(i))).collect::<Result<_>>()?;
            if opts.ordinal_as_one_hot {
                let mut a = Array2::zeros((lv.len(), *categories));
                for (r, &l) in lv.iter().enumerate() {
                    a[[r, l - 1]] = 1.0;
                }
                Outcomes::OneHot(a)
            } else {
                Outcomes::Ordinal { levels: lv, categories: *categories }
            }
        }
        FollowUp::Continuous { values, threshold } => {
            let z: Vec<f64> = retained.iter().map(|&i| values[i].ok_or_else(|| missing(i))).collect::<Result<_>>()?;
            let flags = continuous_to_indicator(&z, threshold.unwrap_or(u));
            Outcomes::Binary(flags.into_iter().map(|b| b as u8 as f64).collect())
        }
        FollowUp::ExceedsTrigger(values) => {
            let z: Vec<f64> = retained.iter().map(|&i| values[i].ok_or_else(|| missing(i))).collect::<Result<_>>()?;
            let yr: Vec<f64> = retained.iter().map(|&i| y[i]).collect();
            Outcomes::Binary(exceedance_indicator_pi(&z, &yr)?.into_iter().map(|b| b as u8 as f64).collect())
        }
    };

    Ok(ThresholdedSample {
        features,
        outcomes,
        threshold: u,
        quantile_level: q,
        retained_rows: retained,
        scaling,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn min_max_scaling() {
        let x = array![[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]];
        let (s, sc) = scale_features(x.view()).unwrap();
        assert_eq!(s.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.column(1).to_vec(), vec![0.5, 0.5, 0.5]);
        assert_eq!(sc.degenerate, vec![false, true]);
        let (new, clipped) = sc.apply(array![[7.0, 5.0], [3.0, 1.0]].view()).unwrap();
        assert_eq!(new[[0, 0]], 1.0);
        assert_eq!(new[[1, 0]], 0.25);
        assert_eq!(clipped, 1);
        assert!(scale_features(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn unscale_inverts_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((50, 3), |_| rng.random_range(-40.0..900.0));
        let (s, sc) = scale_features(x.view()).unwrap();
        let back = sc.unscale(s.view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn order_statistic_threshold() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let u = empirical_threshold(&y, 0.95).unwrap();
        assert_eq!(u, 95.0);
        assert_eq!(y.iter().filter(|&&v| v > u).count(), 5);
        assert!(empirical_threshold(&y, 0.0).is_err());
        assert!(empirical_threshold(&y, 1.0).is_err());
        assert!(empirical_threshold(&y[..10], 0.5).is_err());
    }

    #[test]
    fn no_ties_retains_complement_of_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [20usize, 137, 1000, 10_000] {
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            for q in [0.5, 0.9, 0.95] {
                let u = empirical_threshold(&y, q).unwrap();
                let kept = y.iter().filter(|&&v| v > u).count();
                assert_eq!(kept, n - (q * n as f64 - 1e-9).ceil() as usize);
            }
        }
    }

    #[test]
    fn min_reduction() {
        let y = array![[3.0, 7.0], [9.0, 2.0]];
        assert_eq!(reduce_multi_trigger(y.view()).unwrap(), vec![3.0, 2.0]);
        let single = array![[1.5], [2.5]];
        assert_eq!(reduce_multi_trigger(single.view()).unwrap(), vec![1.5, 2.5]);
        assert!(reduce_multi_trigger(array![[1.0, f64::NAN]].view()).is_err());
    }

    #[test]
    fn min_reduction_selects_rows_where_all_triggers_exceed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = Array2::from_shape_fn((400, 3), |_| rng.random::<f64>());
        let reduced = reduce_multi_trigger(y.view()).unwrap();
        let u = 0.4;
        for (i, r) in y.rows().into_iter().enumerate() {
            assert_eq!(reduced[i] > u, r.iter().all(|&v| v > u));
        }
    }

    #[test]
    fn indicators() {
        assert_eq!(continuous_to_indicator(&[1.0, 2.0, 3.0], 2.0), vec![false, false, true]);
        assert!(continuous_to_indicator(&[1.0, 2.0], -5.0).iter().all(|&b| b));
        assert_eq!(exceedance_indicator_pi(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![false, false]);
        assert_eq!(exceedance_indicator_pi(&[2.0], &[1.0]).unwrap(), vec![true]);
        assert!(exceedance_indicator_pi(&[2.0], &[1.0, 3.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let got = exceedance_indicator_pi(&z, &y).unwrap();
        for i in 0..200 {
            assert_eq!(got[i], z[i] > y[i]);
        }
    }

    fn toy_raw(n: usize, seed: u64) -> RawDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(10.0..20.0));
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let d = (0..n).map(|_| Some(rng.random::<bool>())).collect();
        RawDataset::new(x, Trigger::Single(y), FollowUp::Binary(d)).unwrap()
    }

    #[test]
    fn retained_set_matches_brute_force_filter() {
        let raw = toy_raw(2000, 11);
        let s = build_threshold_sample(&raw, 0.9, &ThresholdOptions::default()).unwrap();
        let Trigger::Single(y) = &raw.trigger else { unreachable!() };
        let brute: Vec<usize> = (0..y.len()).filter(|&i| y[i] > s.threshold).collect();
        assert_eq!(s.retained_rows, brute);
        assert_eq!(s.len(), 200);
        assert!(s.features.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn monotone_trigger_transform_gives_identical_sample() {
        let raw = toy_raw(3000, 12);
        let Trigger::Single(y) = &raw.trigger else { unreachable!() };
        let mut cubed = raw.clone();
        cubed.trigger = Trigger::Single(y.iter().map(|v| v.powi(3) * 5.0 + 1.0).collect());
        let opts = ThresholdOptions::default();
        let a = build_threshold_sample(&raw, 0.95, &opts).unwrap();
        let b = build_threshold_sample(&cubed, 0.95, &opts).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.retained_rows, b.retained_rows);
    }

    #[test]
    fn too_few_exceedances_refused() {
        let raw = toy_raw(100, 13);
        let err = build_threshold_sample(&raw, 0.95, &ThresholdOptions::default()).unwrap_err();
        assert!(matches!(err, KaneError::TooFewExceedances { retained: 5, required: 25 }));
    }

    #[test]
    fn ordinal_levels_and_one_hot_conversion() {
        let n = 60;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let levels = (0..n).map(|i| Some(1 + i % 3)).collect();
        let raw = RawDataset::new(x, Trigger::Single(y), FollowUp::Ordinal { levels, categories: 3 }).unwrap();
        let opts = ThresholdOptions { ordinal_as_one_hot: true, ..Default::default() };
        let s = build_threshold_sample(&raw, 0.5, &opts).unwrap();
        let Outcomes::OneHot(a) = &s.outcomes else { panic!() };
        assert_eq!(a.nrows(), 30);
        assert!(a.rows().into_iter().all(|r| r.sum() == 1.0));
        let bad = RawDataset::new(
            Array2::zeros((1, 1)),
            Trigger::Single(vec![0.0]),
            FollowUp::Ordinal { levels: vec![Some(4)], categories: 3 },
        );
        assert!(bad.is_err());
    }

    #[test]
    fn missing_follow_up_on_retained_row() {
        let mut raw = toy_raw(200, 14);
        if let FollowUp::Binary(v) = &mut raw.follow_up {
            v.iter_mut().for_each(|d| *d = None);
        }
        assert!(build_threshold_sample(&raw, 0.8, &ThresholdOptions::default()).is_err());
    }
}
