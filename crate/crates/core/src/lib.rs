//! Probability-of-cascade surfaces estimated with spline Kolmogorov-Arnold networks.

pub mod csv_io;
pub mod diagnostics;
pub mod document;
pub mod error;
pub mod evt;
pub mod grad;
pub mod lbfgs;
pub mod loss;
pub mod net;
pub mod numeric;
pub mod ordinal;
pub mod rng;
pub mod simulation;
pub mod spline;
pub mod training;

pub use document::Model;
pub use error::{KaneError, Result};
pub use loss::{LossKind, Targets};
pub use net::{GLayer, KaneNetwork, LayerCoefficients};
pub use spline::SplineSpec;
pub use training::{fit, FitConfig, FitReport, PocEstimate, PocSurface};
