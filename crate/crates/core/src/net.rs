//! KANE networks: stacked layers of spline univariate functions summed into
//! nodes, followed by a range-enforcing output activation (the g-layer).
//!
//! Layer `l` maps `n_l` inputs to `n_{l+1}` outputs,
//!
//! ```text
//! s_i = sum_j sum_k beta[i, j, k] * B_k(h_j)
//! ```
//!
//! The first layer consumes the raw features. Every later layer consumes
//! `squash(s)` of the previous layer so that its spline arguments stay in
//! `[0, 1]`. The final sums pass through the g-layer.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{KaneError, Result};
use crate::spline::{LocalBasis, SplineSpec};

/// Standard deviation of the normal coefficient initialization.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GLayer {
    Sigmoid,
    Softmax { categories: usize },
    Identity,
}

impl GLayer {
    pub fn tag(&self) -> &'static str {
        match self {
            GLayer::Sigmoid => "sigmoid",
            GLayer::Softmax { .. } => "softmax",
            GLayer::Identity => "identity",
        }
    }

    /// Required width of the final node layer.
    pub fn output_width(&self) -> usize {
        match self {
            GLayer::Softmax { categories } => *categories,
            _ => 1,
        }
    }

    pub fn from_tag(tag: &str, output_width: usize) -> Result<Self> {
        match tag {
            "sigmoid" => Ok(GLayer::Sigmoid),
            "softmax" => Ok(GLayer::Softmax { categories: output_width }),
            "identity" => Ok(GLayer::Identity),
            other => Err(KaneError::InvalidArgument(format!("unknown g-layer '{other}'"))),
        }
    }
}

impl fmt::Display for GLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GLayer {
    type Err = KaneError;
    /// Parses `sigmoid`, `identity`, or `softmax:J`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("softmax", j)) => {
                let categories = j
                    .parse()
                    .map_err(|_| KaneError::InvalidArgument(format!("bad category count in '{s}'")))?;
                Ok(GLayer::Softmax { categories })
            }
            _ => GLayer::from_tag(s, 1),
        }
    }
}

/// Logistic map `1 / (1 + e^{-s})`, evaluated without overflow for any sign.
pub fn squash(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `sum_k coeffs[k] * B_k(x)`.
pub fn univariate_eval(coeffs: &[f64], spec: &SplineSpec, x: f64) -> Result<f64> {
    if coeffs.len() != spec.basis_count() {
        return Err(KaneError::Shape(format!(
            "{} coefficients for {} basis functions",
            coeffs.len(),
            spec.basis_count()
        )));
    }
    let row = spec.design_row(x)?;
    Ok(coeffs.iter().zip(&row).map(|(c, b)| c * b).sum())
}

/// Coefficient tensor of one layer with shape `(outputs, inputs, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCoefficients(Array3<f64>);

impl LayerCoefficients {
    pub fn zeros(outputs: usize, inputs: usize, basis: usize) -> Self {
        Self(Array3::zeros((outputs, inputs, basis)))
    }

    pub fn from_array(a: Array3<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(KaneError::NonFinite { layer: 0, what: "coefficient".into() });
        }
        Ok(Self(a.as_standard_layout().into_owned()))
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn outputs(&self) -> usize {
        self.0.dim().0
    }

    pub fn inputs(&self) -> usize {
        self.0.dim().1
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.0.as_slice_mut().expect("standard layout")
    }

    /// Coefficients of the univariate function feeding output `i` from input `j`.
    pub fn function(&self, i: usize, j: usize) -> &[f64] {
        let k = self.0.dim().2;
        let start = (i * self.inputs() + j) * k;
        &self.as_slice()[start..start + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KaneNetwork {
    spec: SplineSpec,
    widths: Vec<usize>,
    layers: Vec<LayerCoefficients>,
    g_layer: GLayer,
}

/// Per-row activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Tape {
    /// `inputs[l]` feeds layer `l`; entries of `inputs[l]` for `l > 0` are squash outputs.
    pub inputs: Vec<Vec<f64>>,
    pub bases: Vec<Vec<LocalBasis>>,
    pub pre_output: Vec<f64>,
    pub output: Vec<f64>,
}

impl KaneNetwork {
    /// All-zero network. `widths = (n_1, ..., n_L)` with `n_1` the feature count.
    pub fn zeros(widths: &[usize], spec: SplineSpec, g_layer: GLayer) -> Result<Self> {
        if widths.len() < 2 {
            return Err(KaneError::Shape("a network needs at least an input and an output width".into()));
        }
        if widths.contains(&0) {
            return Err(KaneError::Shape(format!("zero width in {widths:?}")));
        }
        let last = *widths.last().unwrap();
        match g_layer {
            GLayer::Softmax { categories } if categories < 2 => {
                return Err(KaneError::Shape("softmax needs at least two categories".into()))
            }
            _ if g_layer.output_width() != last => {
                return Err(KaneError::Shape(format!(
                    "{g_layer} g-layer needs final width {}, got {last}",
                    g_layer.output_width()
                )))
            }
            _ => {}
        }
        let k = spec.basis_count();
        let layers = widths.windows(2).map(|w| LayerCoefficients::zeros(w[1], w[0], k)).collect();
        Ok(Self { spec, widths: widths.to_vec(), layers, g_layer })
    }

    /// Every coefficient drawn from `N(0, 0.1^2)` using a ChaCha8 stream seeded by `seed`.
    pub fn initialized(widths: &[usize], spec: SplineSpec, g_layer: GLayer, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths, spec, g_layer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(crate::rng::INIT_STREAM);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        for layer in &mut net.layers {
            for v in layer.as_slice_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Canonical three-layer widths `(d, 2d + 1, out)`.
    pub fn canonical_widths(features: usize, g_layer: GLayer) -> Vec<usize> {
        vec![features, 2 * features + 1, g_layer.output_width()]
    }

    pub fn from_layers(
        widths: &[usize],
        spec: SplineSpec,
        g_layer: GLayer,
        layers: Vec<LayerCoefficients>,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, spec, g_layer)?;
        if layers.len() != net.layers.len() {
            return Err(KaneError::Shape(format!(
                "{} coefficient tensors for {} layers",
                layers.len(),
                net.layers.len()
            )));
        }
        for (l, (have, want)) in layers.iter().zip(&net.layers).enumerate() {
            if have.array().dim() != want.array().dim() {
                return Err(KaneError::Shape(format!(
                    "layer {} has shape {:?}, expected {:?}",
                    l + 1,
                    have.array().dim(),
                    want.array().dim()
                )));
            }
            if have.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(KaneError::NonFinite { layer: l + 1, what: "coefficient".into() });
            }
        }
        net.layers = layers;
        Ok(net)
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[LayerCoefficients] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerCoefficients] {
        &mut self.layers
    }

    pub fn g_layer(&self) -> GLayer {
        self.g_layer
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.as_slice().len()).sum()
    }

    /// Coefficients of all layers concatenated in row-major order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.as_slice().iter().copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(KaneError::Shape(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let dst = layer.as_slice_mut();
            dst.copy_from_slice(&params[offset..offset + dst.len()]);
            offset += dst.len();
        }
        Ok(())
    }

    pub(crate) fn new_tape(&self) -> Tape {
        let n_layers = self.layers.len();
        Tape {
            inputs: self.widths[..n_layers].iter().map(|&w| vec![0.0; w]).collect(),
            bases: self.widths[..n_layers]
                .iter()
                .map(|&w| Vec::with_capacity(w))
                .collect(),
            pre_output: vec![0.0; self.output_dim()],
            output: vec![0.0; self.output_dim()],
        }
    }

    pub(crate) fn check_features(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(KaneError::Shape(format!(
                "feature vector has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(KaneError::Domain { value: bad });
        }
        Ok(())
    }

    /// Forward pass recording activations. When `first_layer` is given it
    /// replaces the basis evaluation of the raw features.
    pub(crate) fn forward_tape(
        &self,
        x: &[f64],
        first_layer: Option<&[LocalBasis]>,
        tape: &mut Tape,
    ) -> Result<()> {
        let p = self.spec.degree();
        let k = self.spec.basis_count();
        tape.inputs[0].copy_from_slice(x);
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let bases = &mut tape.bases[l];
            bases.clear();
            match (l, first_layer) {
                (0, Some(pre)) => bases.extend_from_slice(pre),
                _ => bases.extend(tape.inputs[l].iter().map(|&h| self.spec.local_unchecked(h))),
            }
            let beta = layer.as_slice();
            for i in 0..n_out {
                let mut s = 0.0;
                for (j, b) in bases.iter().enumerate() {
                    let row = &beta[(i * n_in + j) * k + b.first..];
                    for r in 0..=p {
                        s += row[r] * b.values[r];
                    }
                }
                if !s.is_finite() {
                    return Err(KaneError::NonFinite { layer: l + 1, what: format!("node sum {i}") });
                }
                if l + 1 < n_layers {
                    tape.inputs[l + 1][i] = squash(s);
                } else {
                    tape.pre_output[i] = s;
                }
            }
        }
        apply_g_layer(self.g_layer, &tape.pre_output, &mut tape.output);
        Ok(())
    }

    /// Network output at a feature vector in `[0, 1]^d`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_features(x)?;
        let mut tape = self.new_tape();
        self.forward_tape(x, None, &mut tape)?;
        Ok(tape.output)
    }

    /// Row-wise forward pass; output has one row per input row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() && x.nrows() > 0 {
            return Err(KaneError::Shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        let mut tape = self.new_tape();
        let mut row_buf = vec![0.0; self.input_dim()];
        for (i, row) in x.rows().into_iter().enumerate() {
            for (dst, src) in row_buf.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
            self.check_features(&row_buf)?;
            self.forward_tape(&row_buf, None, &mut tape)?;
            for (o, v) in tape.output.iter().enumerate() {
                out[[i, o]] = *v;
            }
        }
        Ok(out)
    }
}

pub(crate) fn apply_g_layer(g: GLayer, z: &[f64], out: &mut [f64]) {
    match g {
        GLayer::Sigmoid => out[0] = squash(z[0]),
        GLayer::Identity => out.copy_from_slice(z),
        GLayer::Softmax { .. } => {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(z) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn spec() -> SplineSpec {
        SplineSpec::cubic_two_interval()
    }

    #[test]
    fn squash_reference_values() {
        assert_eq!(squash(0.0), 0.5);
        // 0.88079707797788244405972913...
        assert!((squash(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        assert!(squash(40.0) >= 1.0 - 1e-16 && squash(40.0) <= 1.0);
        assert!(squash(-800.0) >= 0.0 && squash(800.0) <= 1.0);
        assert!(squash(-1.0) < squash(-0.5));
    }

    #[test]
    fn univariate_constant_and_zero() {
        let s = spec();
        assert_eq!(univariate_eval(&[0.0; 5], &s, 0.3).unwrap(), 0.0);
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            assert!((univariate_eval(&[2.5; 5], &s, x).unwrap() - 2.5).abs() < 1e-14);
        }
        let c = [0.3, -1.2, 0.8, 2.0, -0.4];
        let row = s.design_row(0.42).unwrap();
        let want: f64 = c.iter().zip(&row).map(|(a, b)| a * b).sum();
        assert!((univariate_eval(&c, &s, 0.42).unwrap() - want).abs() < 1e-12);
        assert!(univariate_eval(&c[..4], &s, 0.4).is_err());
    }

    #[test]
    fn zero_network_outputs() {
        let net = KaneNetwork::zeros(&[2, 5, 1], spec(), GLayer::Sigmoid).unwrap();
        assert_eq!(net.forward(&[0.2, 0.9]).unwrap(), vec![0.5]);
        let net = KaneNetwork::zeros(&[2, 5, 3], spec(), GLayer::Softmax { categories: 3 }).unwrap();
        let out = net.forward(&[0.2, 0.9]).unwrap();
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_layer_matches_hand_composition() {
        let s = spec();
        let net = KaneNetwork::initialized(&[2, 5, 1], s.clone(), GLayer::Sigmoid, 11).unwrap();
        let inner = &net.layers()[0];
        let outer = &net.layers()[1];
        let x = [0.31, 0.84];
        let mut total = 0.0;
        for i in 0..5 {
            let mut sum = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let row = s.design_row(xj).unwrap();
                sum += inner.function(i, j).iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
            }
            let h = 1.0 / (1.0 + (-sum).exp());
            let row = s.design_row(h).unwrap();
            total += outer.function(0, i).iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
        }
        let want = 1.0 / (1.0 + (-total).exp());
        assert!((net.forward(&x).unwrap()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn batch_matches_single_rows() {
        let net = KaneNetwork::initialized(&[2, 5, 3], spec(), GLayer::Softmax { categories: 3 }, 3).unwrap();
        let empty = net.forward_batch(Array2::<f64>::zeros((0, 2)).view()).unwrap();
        assert_eq!(empty.dim(), (0, 3));
        let x = ndarray::array![[0.0, 1.0], [0.5, 0.25], [0.9, 0.1]];
        let out = net.forward_batch(x.view()).unwrap();
        for i in 0..3 {
            let single = net.forward(&x.row(i).to_vec()).unwrap();
            assert_eq!(out.row(i).to_vec(), single);
        }
    }

    #[test]
    fn sigmoid_range_sweep() {
        let net = KaneNetwork::initialized(&[3, 7, 1], spec(), GLayer::Sigmoid, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((1000, 3), |_| rng.random::<f64>());
        let out = net.forward_batch(x.view()).unwrap();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn domain_and_shape_errors() {
        let net = KaneNetwork::zeros(&[2, 5, 1], spec(), GLayer::Sigmoid).unwrap();
        assert!(matches!(net.forward(&[0.5, 1.5]), Err(KaneError::Domain { .. })));
        assert!(matches!(net.forward(&[0.5]), Err(KaneError::Shape(_))));
        assert!(KaneNetwork::zeros(&[2, 5, 2], spec(), GLayer::Sigmoid).is_err());
        assert!(KaneNetwork::zeros(&[2, 5, 1], spec(), GLayer::Softmax { categories: 1 }).is_err());
        assert!(KaneNetwork::zeros(&[2], spec(), GLayer::Sigmoid).is_err());
    }

    #[test]
    fn parameters_round_trip_and_seed_determinism() {
        let a = KaneNetwork::initialized(&[2, 5, 1], spec(), GLayer::Sigmoid, 42).unwrap();
        let b = KaneNetwork::initialized(&[2, 5, 1], spec(), GLayer::Sigmoid, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameter_count(), 5 * 2 * 5 + 5 * 5);
        let mut c = KaneNetwork::zeros(&[2, 5, 1], spec(), GLayer::Sigmoid).unwrap();
        c.set_parameters(&a.parameters()).unwrap();
        assert_eq!(a, c);
        assert!(c.set_parameters(&[0.0; 3]).is_err());
    }

    #[test]
    fn g_layer_parsing() {
        assert_eq!("sigmoid".parse::<GLayer>().unwrap(), GLayer::Sigmoid);
        assert_eq!("softmax:4".parse::<GLayer>().unwrap(), GLayer::Softmax { categories: 4 });
        assert!("relu".parse::<GLayer>().is_err());
    }
}
