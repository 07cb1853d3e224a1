//! Fitting KANE coefficients by full-batch L-BFGS on the mean cross-entropy.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::{FeatureScaling, ThresholdedSample};
use crate::grad::Objective;
use crate::lbfgs::{minimize, LbfgsSettings, Termination};
use crate::loss::{LossKind, Targets};
use crate::net::{GLayer, KaneNetwork};
use crate::spline::SplineSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchKind {
    #[default]
    StrongWolfe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchConfig {
    pub kind: LineSearchKind,
    pub c1: f64,
    pub c2: f64,
    pub max_evaluations: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self { kind: LineSearchKind::StrongWolfe, c1: 1e-4, c2: 0.9, max_evaluations: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub history_size: usize,
    pub gradient_tolerance: f64,
    pub line_search: LineSearchConfig,
    pub init_seed: u64,
    /// Inferred from the g-layer when absent.
    pub loss_kind: Option<LossKind>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            history_size: 10,
            gradient_tolerance: 1e-8,
            line_search: LineSearchConfig::default(),
            init_seed: 0,
            loss_kind: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if self.max_iterations == 0 {
            return Err(KaneError::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.history_size == 0 {
            return Err(KaneError::InvalidArgument("history_size must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(KaneError::InvalidArgument("gradient_tolerance must be positive".into()));
        }
        if !(ls.c1 > 0.0 && ls.c1 < ls.c2 && ls.c2 < 1.0) {
            return Err(KaneError::InvalidArgument(format!(
                "line search needs 0 < c1 < c2 < 1, got c1={} c2={}",
                ls.c1, ls.c2
            )));
        }
        if ls.max_evaluations == 0 {
            return Err(KaneError::InvalidArgument("line_search.max_evaluations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn loss_for(&self, g: GLayer) -> Result<LossKind> {
        match (self.loss_kind, g) {
            (Some(l), _) => Ok(l),
            (None, GLayer::Sigmoid) => Ok(LossKind::BinaryCrossEntropy),
            (None, GLayer::Softmax { .. }) => Ok(LossKind::MultiCrossEntropy),
            (None, GLayer::Identity) => Err(KaneError::InvalidArgument(
                "an identity g-layer has no cross-entropy loss to train".into(),
            )),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { init_seed: seed, ..self.clone() }
    }

    fn lbfgs(&self) -> LbfgsSettings {
        LbfgsSettings {
            history: self.history_size,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            c1: self.line_search.c1,
            c2: self.line_search.c2,
            max_line_search_evaluations: self.line_search.max_evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    /// Loss at initialization followed by the loss after each accepted step.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub termination: Termination,
    pub fallback_steps: usize,
    pub wall_seconds: f64,
}

/// Training record stored with a fitted surface. Contains no timing so it
/// serializes identically across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub init_seed: u64,
    pub loss_kind: LossKind,
    pub iterations: usize,
    pub final_loss: f64,
    pub termination: Termination,
    pub loss_trace: Vec<f64>,
}

/// A probability-of-cascade surface over the unit cube.
pub trait PocSurface {
    fn dim(&self) -> usize;

    /// Width of one evaluation: 1 for a binary surface, J for category surfaces.
    fn width(&self) -> usize;

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn evaluate_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), self.width()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let v = self.evaluate(&row.to_vec())?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(out)
    }
}

/// A fitted network together with the threshold and feature map it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct PocEstimate {
    pub network: KaneNetwork,
    pub threshold: f64,
    pub quantile_level: f64,
    pub scaling: FeatureScaling,
    pub metadata: TrainingMetadata,
}

impl PocEstimate {
    /// Evaluates at points in original feature units; returns the surface and
    /// the number of coordinates clipped into the unit cube.
    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, usize)> {
        let (scaled, clipped) = self.scaling.apply(x)?;
        Ok((self.network.forward_batch(scaled.view())?, clipped))
    }
}

impl PocSurface for PocEstimate {
    fn dim(&self) -> usize {
        self.network.input_dim()
    }

    fn width(&self) -> usize {
        self.network.output_dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward(x)
    }

    fn evaluate_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.network.forward_batch(x)
    }
}

/// Fits a network on features in `[0, 1]^d` and explicit targets.
pub fn fit_targets(
    features: ArrayView2<f64>,
    targets: &Targets,
    widths: &[usize],
    spec: SplineSpec,
    g_layer: GLayer,
    config: &FitConfig,
) -> Result<(KaneNetwork, FitReport, TrainingMetadata)> {
    config.validate()?;
    if features.nrows() == 0 {
        return Err(KaneError::Empty("no rows to fit".into()));
    }
    if features.nrows() != targets.len() {
        return Err(KaneError::Shape(format!("{} feature rows vs {} targets", features.nrows(), targets.len())));
    }
    if widths.first() != Some(&features.ncols()) {
        return Err(KaneError::Shape(format!(
            "data has {} features but widths start with {:?}",
            features.ncols(),
            widths.first()
        )));
    }
    let loss = config.loss_for(g_layer)?;
    let start = Instant::now();
    let net = KaneNetwork::initialized(widths, spec, g_layer, config.init_seed)?;
    let x0 = net.parameters();
    let mut objective = Objective::new(net, features, targets, loss)?;

    let (v0, _) = objective.evaluate(&x0)?;
    if !v0.is_finite() {
        return Err(KaneError::NonFinite { layer: 0, what: "initial loss".into() });
    }
    let min = minimize(|p: &[f64]| objective.evaluate(p), x0, &config.lbfgs())?;
    let network = objective.into_network(&min.x)?;

    let report = FitReport {
        final_loss: min.value,
        loss_trace: min.trace.clone(),
        iterations: min.iterations,
        evaluations: min.evaluations + 1,
        gradient_norm: min.gradient_norm,
        converged: min.termination == Termination::GradientTolerance,
        termination: min.termination,
        fallback_steps: min.fallback_steps,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let metadata = TrainingMetadata {
        init_seed: config.init_seed,
        loss_kind: loss,
        iterations: min.iterations,
        final_loss: min.value,
        termination: min.termination,
        loss_trace: min.trace,
    };
    Ok((network, report, metadata))
}

/// Fits a surface on a thresholded sample.
pub fn fit(
    data: &ThresholdedSample,
    widths: &[usize],
    spec: SplineSpec,
    g_layer: GLayer,
    config: &FitConfig,
) -> Result<(PocEstimate, FitReport)> {
    let targets = data.outcomes.targets()?;
    let (network, report, metadata) = fit_targets(data.features.view(), &targets, widths, spec, g_layer, config)?;
    let estimate = PocEstimate {
        network,
        threshold: data.threshold,
        quantile_level: data.quantile_level,
        scaling: data.scaling.clone(),
        metadata,
    };
    Ok((estimate, report))
}

/// Fits the canonical `(d, 2d + 1, out)` cubic two-interval network.
pub fn fit_canonical(data: &ThresholdedSample, g_layer: GLayer, config: &FitConfig) -> Result<(PocEstimate, FitReport)> {
    let widths = KaneNetwork::canonical_widths(data.dim(), g_layer);
    fit(data, &widths, SplineSpec::cubic_two_interval(), g_layer, config)
}
