//! Frank-Hall decomposition of ordered follow-up categories into J - 1
//! binary cascade surfaces `pi_j(x) = P(A > C_j | x)`.

use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::{FeatureScaling, Outcomes, ThresholdedSample};
use crate::loss::Targets;
use crate::net::{GLayer, KaneNetwork};
use crate::spline::SplineSpec;
use crate::training::{fit_targets, FitConfig, FitReport, PocEstimate, PocSurface};

/// `1` where `level > j`, for levels in `1..=categories` and `j` in `1..categories`.
pub fn make_cumulative_labels(levels: &[usize], j: usize, categories: usize) -> Result<Vec<f64>> {
    if j == 0 || j >= categories {
        return Err(KaneError::InvalidArgument(format!("cut {j} outside 1..{categories}")));
    }
    levels
        .iter()
        .map(|&l| {
            if l == 0 || l > categories {
                Err(KaneError::InvalidArgument(format!("level {l} outside 1..={categories}")))
            } else {
                Ok(if l > j { 1.0 } else { 0.0 })
            }
        })
        .collect()
}

/// Least-squares projection onto non-increasing sequences (pool adjacent violators).
pub fn pava_non_increasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 >= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, c0 + c1);
        }
    }
    blocks.iter().flat_map(|&(s, c)| std::iter::repeat_n(s / c as f64, c)).collect()
}

/// Category probabilities from exceedance probabilities `pi_1, ..., pi_{J-1}`.
/// Returns the probabilities and whether the monotone repair changed anything.
pub fn category_probs_from_exceedance(pi: &[f64]) -> Result<(Vec<f64>, bool)> {
    if pi.is_empty() {
        return Err(KaneError::InvalidArgument("need at least one exceedance probability".into()));
    }
    if pi.iter().any(|v| v.is_nan()) {
        return Err(KaneError::InvalidArgument("exceedance probability is NaN".into()));
    }
    let clipped: Vec<f64> = pi.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let repaired = pava_non_increasing(&clipped);
    let changed = repaired != pi;
    let mut probs = Vec::with_capacity(pi.len() + 1);
    probs.push(1.0 - repaired[0]);
    for w in repaired.windows(2) {
        probs.push(w[0] - w[1]);
    }
    probs.push(*repaired.last().unwrap());
    Ok((probs, changed))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubModel {
    Fitted(PocEstimate),
    /// Empirical exceedance rate, used when a cumulative label has one class only.
    Constant { rate: f64 },
}

impl SubModel {
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        match self {
            SubModel::Fitted(est) => Ok(est.evaluate(x)?[0]),
            SubModel::Constant { rate } => Ok(*rate),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, SubModel::Constant { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RepairStats {
    pub training_rows: usize,
    pub repaired_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalModel {
    pub categories: usize,
    pub dim: usize,
    pub threshold: f64,
    pub quantile_level: f64,
    pub scaling: FeatureScaling,
    /// Sub-model `j - 1` estimates `P(level > j)`.
    pub sub_models: Vec<SubModel>,
    /// Training reports of fitted sub-models (`None` for fallbacks).
    pub reports: Vec<Option<FitReport>>,
    pub repair: RepairStats,
}

impl OrdinalModel {
    pub fn exceedance_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.sub_models.iter().map(|m| m.probability(x)).collect()
    }

    pub fn category_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(category_probs_from_exceedance(&self.exceedance_probs(x)?)?.0)
    }

    pub fn fallbacks(&self) -> Vec<usize> {
        (1..self.categories).filter(|&j| self.sub_models[j - 1].is_fallback()).collect()
    }
}

impl PocSurface for OrdinalModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn width(&self) -> usize {
        self.categories
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(KaneError::Shape(format!("expected {} features, got {}", self.dim, x.len())));
        }
        if let Some(&v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(KaneError::Domain { value: v });
        }
        self.category_probs(x)
    }
}

/// `J - 1` independent binary fits with initialization seeds `init_seed + j`.
pub fn fit_ordinal(
    data: &ThresholdedSample,
    widths: &[usize],
    spec: SplineSpec,
    config: &FitConfig,
) -> Result<OrdinalModel> {
    let Outcomes::Ordinal { levels, categories } = &data.outcomes else {
        return Err(KaneError::InvalidArgument("fit_ordinal needs ordinal outcomes".into()));
    };
    let categories = *categories;
    if categories < 3 {
        return Err(KaneError::InvalidArgument(format!("ordinal models need J >= 3, got {categories}")));
    }
    let mut sub_models = Vec::with_capacity(categories - 1);
    let mut reports = Vec::with_capacity(categories - 1);
    for j in 1..categories {
        let flags = make_cumulative_labels(levels, j, categories)?;
        let ones = flags.iter().filter(|&&f| f == 1.0).count();
        if ones == 0 || ones == flags.len() {
            sub_models.push(SubModel::Constant { rate: ones as f64 / flags.len() as f64 });
            reports.push(None);
            continue;
        }
        let targets = Targets::binary(flags)?;
        let cfg = config.with_seed(config.init_seed.wrapping_add(j as u64));
        let (network, report, metadata) =
            fit_targets(data.features.view(), &targets, widths, spec.clone(), GLayer::Sigmoid, &cfg)?;
        sub_models.push(SubModel::Fitted(PocEstimate {
            network,
            threshold: data.threshold,
            quantile_level: data.quantile_level,
            scaling: data.scaling.clone(),
            metadata,
        }));
        reports.push(Some(report));
    }
    let mut model = OrdinalModel {
        categories,
        dim: data.dim(),
        threshold: data.threshold,
        quantile_level: data.quantile_level,
        scaling: data.scaling.clone(),
        sub_models,
        reports,
        repair: RepairStats::default(),
    };
    let mut repaired_rows = 0;
    for row in data.features.rows() {
        let pi = model.exceedance_probs(&row.to_vec())?;
        repaired_rows += category_probs_from_exceedance(&pi)?.1 as usize;
    }
    model.repair = RepairStats { training_rows: data.len(), repaired_rows };
    Ok(model)
}

/// Fits every sub-model with the canonical cubic two-interval network.
pub fn fit_ordinal_canonical(data: &ThresholdedSample, config: &FitConfig) -> Result<OrdinalModel> {
    let widths = KaneNetwork::canonical_widths(data.dim(), GLayer::Sigmoid);
    fit_ordinal(data, &widths, SplineSpec::cubic_two_interval(), config)
}
