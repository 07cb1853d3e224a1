//! Versioned JSON documents for fitted models.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved model reproduces its forward values bit for bit.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KaneError, Result};
use crate::evt::FeatureScaling;
use crate::net::{GLayer, KaneNetwork, LayerCoefficients};
use crate::ordinal::{OrdinalModel, RepairStats, SubModel};
use crate::spline::SplineSpec;
use crate::training::{PocEstimate, PocSurface, TrainingMetadata};

pub const FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "kane-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub degree: usize,
    pub intervals: usize,
    pub widths: Vec<usize>,
    /// `sigmoid`, `softmax`, or `identity`; softmax categories equal the last width.
    pub g_layer: String,
    /// One flat row-major `(out, in, K)` tensor per layer.
    pub coefficients: Vec<Vec<f64>>,
}

impl NetworkDoc {
    pub fn from_network(net: &KaneNetwork) -> Self {
        Self {
            degree: net.spec().degree(),
            intervals: net.spec().intervals(),
            widths: net.widths().to_vec(),
            g_layer: net.g_layer().tag().to_string(),
            coefficients: net.layers().iter().map(|l| l.as_slice().to_vec()).collect(),
        }
    }

    pub fn to_network(&self) -> Result<KaneNetwork> {
        let spec = SplineSpec::new(self.degree, self.intervals)?;
        let last = *self.widths.last().ok_or_else(|| KaneError::Shape("empty widths".into()))?;
        let g = GLayer::from_tag(&self.g_layer, last)?;
        if self.coefficients.len() + 1 != self.widths.len() {
            return Err(KaneError::Shape(format!(
                "{} coefficient tensors for widths {:?}",
                self.coefficients.len(),
                self.widths
            )));
        }
        let k = spec.basis_count();
        let layers = self
            .coefficients
            .iter()
            .zip(self.widths.windows(2))
            .enumerate()
            .map(|(l, (flat, w))| {
                let a = Array3::from_shape_vec((w[1], w[0], k), flat.clone()).map_err(|_| {
                    KaneError::Shape(format!(
                        "layer {} holds {} coefficients, widths {:?} and K={k} need {}",
                        l + 1,
                        flat.len(),
                        w,
                        w[0] * w[1] * k
                    ))
                })?;
                LayerCoefficients::from_array(a)
            })
            .collect::<Result<Vec<_>>>()?;
        KaneNetwork::from_layers(&self.widths, spec, g, layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateDoc {
    pub network: NetworkDoc,
    /// Absent when the estimate was not fitted on a thresholded sample.
    pub threshold: Option<f64>,
    pub quantile_level: Option<f64>,
    pub scaling: FeatureScaling,
    pub training: TrainingMetadata,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl EstimateDoc {
    pub fn from_estimate(e: &PocEstimate) -> Self {
        Self {
            network: NetworkDoc::from_network(&e.network),
            threshold: finite(e.threshold),
            quantile_level: finite(e.quantile_level),
            scaling: e.scaling.clone(),
            training: e.metadata.clone(),
        }
    }

    pub fn to_estimate(&self) -> Result<PocEstimate> {
        let network = self.network.to_network()?;
        check_scaling(&self.scaling, network.input_dim())?;
        Ok(PocEstimate {
            network,
            threshold: self.threshold.unwrap_or(f64::NAN),
            quantile_level: self.quantile_level.unwrap_or(f64::NAN),
            scaling: self.scaling.clone(),
            metadata: self.training.clone(),
        })
    }
}

fn check_scaling(s: &FeatureScaling, dim: usize) -> Result<()> {
    if s.min.len() != dim || s.max.len() != dim || !(s.degenerate.is_empty() || s.degenerate.len() == dim) {
        return Err(KaneError::Shape(format!("feature scaling does not have {dim} columns")));
    }
    if s.min.iter().chain(&s.max).any(|v| !v.is_finite()) {
        return Err(KaneError::NonFinite { layer: 0, what: "feature scaling".into() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubModelDoc {
    Fitted { estimate: EstimateDoc },
    Constant { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdinalDoc {
    pub categories: usize,
    pub dim: usize,
    pub threshold: Option<f64>,
    pub quantile_level: Option<f64>,
    pub scaling: FeatureScaling,
    pub sub_models: Vec<SubModelDoc>,
    pub repair: RepairStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Network(EstimateDoc),
    FrankHall(OrdinalDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub body: ModelBody,
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Network(PocEstimate),
    FrankHall(OrdinalModel),
}

impl Model {
    pub fn surface(&self) -> &dyn PocSurface {
        match self {
            Model::Network(e) => e,
            Model::FrankHall(m) => m,
        }
    }

    pub fn scaling(&self) -> &FeatureScaling {
        match self {
            Model::Network(e) => &e.scaling,
            Model::FrankHall(m) => &m.scaling,
        }
    }

    /// Evaluates at points in original feature units after the stored min-max map;
    /// also returns how many coordinates were clipped into the unit cube.
    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, usize)> {
        let (scaled, clipped) = self.scaling().apply(x)?;
        Ok((self.surface().evaluate_batch(scaled.view())?, clipped))
    }

    pub fn to_document(&self) -> ModelDocument {
        let body = match self {
            Model::Network(e) => ModelBody::Network(EstimateDoc::from_estimate(e)),
            Model::FrankHall(m) => ModelBody::FrankHall(OrdinalDoc {
                categories: m.categories,
                dim: m.dim,
                threshold: finite(m.threshold),
                quantile_level: finite(m.quantile_level),
                scaling: m.scaling.clone(),
                sub_models: m
                    .sub_models
                    .iter()
                    .map(|s| match s {
                        SubModel::Fitted(e) => SubModelDoc::Fitted { estimate: EstimateDoc::from_estimate(e) },
                        SubModel::Constant { rate } => SubModelDoc::Constant { rate: *rate },
                    })
                    .collect(),
                repair: m.repair.clone(),
            }),
        };
        ModelDocument { format: MODEL_FORMAT.into(), version: FORMAT_VERSION, body }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(KaneError::Document(format!("format '{}' is not {MODEL_FORMAT}", doc.format)));
        }
        if doc.version != FORMAT_VERSION {
            return Err(KaneError::Version { found: doc.version, expected: FORMAT_VERSION });
        }
        match &doc.body {
            ModelBody::Network(e) => Ok(Model::Network(e.to_estimate()?)),
            ModelBody::FrankHall(o) => {
                if o.categories < 2 || o.sub_models.len() + 1 != o.categories {
                    return Err(KaneError::Shape(format!(
                        "{} sub-models for {} categories",
                        o.sub_models.len(),
                        o.categories
                    )));
                }
                check_scaling(&o.scaling, o.dim)?;
                let sub_models = o
                    .sub_models
                    .iter()
                    .map(|s| match s {
                        SubModelDoc::Fitted { estimate } => {
                            let e = estimate.to_estimate()?;
                            if e.network.input_dim() != o.dim || e.network.output_dim() != 1 {
                                return Err(KaneError::Shape("sub-model shape differs from container".into()));
                            }
                            Ok(SubModel::Fitted(e))
                        }
                        SubModelDoc::Constant { rate } if (0.0..=1.0).contains(rate) => {
                            Ok(SubModel::Constant { rate: *rate })
                        }
                        SubModelDoc::Constant { rate } => {
                            Err(KaneError::Document(format!("constant rate {rate} outside [0, 1]")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Model::FrankHall(OrdinalModel {
                    categories: o.categories,
                    dim: o.dim,
                    threshold: o.threshold.unwrap_or(f64::NAN),
                    quantile_level: o.quantile_level.unwrap_or(f64::NAN),
                    scaling: o.scaling.clone(),
                    sub_models,
                    reports: vec![None; o.categories - 1],
                    repair: o.repair.clone(),
                }))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_document())?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
            if v != FORMAT_VERSION as u64 {
                return Err(KaneError::Version { found: v as u32, expected: FORMAT_VERSION });
            }
        }
        Self::from_document(&serde_json::from_value(value)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
