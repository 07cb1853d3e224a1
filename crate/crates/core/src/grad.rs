//! Reverse-mode gradients of the mean cross-entropy with respect to every
//! spline coefficient.

use ndarray::ArrayView2;

use crate::error::{KaneError, Result};
use crate::loss::{bce_term, ce_term, LossKind, TargetRow, Targets, PROB_FLOOR};
use crate::net::{GLayer, KaneNetwork, LayerCoefficients, Tape};
use crate::numeric::pairwise_accumulate;
use crate::spline::LocalBasis;

/// Checks that the g-layer, loss, and targets fit together.
pub fn check_compatible(net: &KaneNetwork, targets: &Targets, loss: LossKind) -> Result<()> {
    match (loss, net.g_layer(), targets) {
        (LossKind::BinaryCrossEntropy, GLayer::Sigmoid, Targets::Binary(_)) => Ok(()),
        (LossKind::MultiCrossEntropy, GLayer::Softmax { categories }, Targets::OneHot(a))
            if a.ncols() == categories =>
        {
            Ok(())
        }
        (loss, g, t) => Err(KaneError::InvalidArgument(format!(
            "{loss:?} with a {g} g-layer cannot train on targets of width {}",
            t.width()
        ))),
    }
}

/// Loss term of one row and its derivative with respect to the pre-output.
fn output_delta(tape: &Tape, target: TargetRow<'_>, dz: &mut [f64]) -> f64 {
    match target {
        TargetRow::Binary(delta) => {
            let alpha = tape.output[0];
            dz[0] = alpha - delta;
            bce_term(alpha, delta)
        }
        TargetRow::OneHot(delta) => {
            let alpha = &tape.output;
            // a_k = alpha_k * dL/dalpha_k; clamping only guards the divisions
            let mut total = 0.0;
            for (k, (&a, &d)) in alpha.iter().zip(delta).enumerate() {
                let c = a.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                let ak = -d * a / c + (1.0 - d) * a / (1.0 - c);
                dz[k] = ak;
                total += ak;
            }
            for (k, &a) in alpha.iter().enumerate() {
                dz[k] -= a * total;
            }
            ce_term(alpha, delta)
        }
    }
}

/// Adds `d(row loss)/d(beta)` to `grad` given `dz = d(row loss)/d(pre-output)`.
pub(crate) fn backward(
    net: &KaneNetwork,
    tape: &Tape,
    dz: &[f64],
    grad: &mut [f64],
    buffers: &mut (Vec<f64>, Vec<f64>),
) -> Result<()> {
    let p = net.spec().degree();
    let k = net.spec().basis_count();
    let widths = net.widths();
    let (delta, next) = buffers;
    delta.clear();
    delta.extend_from_slice(dz);
    let mut offset_end = grad.len();
    for (l, layer) in net.layers().iter().enumerate().rev() {
        let n_in = widths[l];
        let n_out = widths[l + 1];
        let beta = layer.as_slice();
        let start = offset_end - beta.len();
        let g = &mut grad[start..offset_end];
        offset_end = start;
        let bases = &tape.bases[l];
        next.clear();
        next.resize(n_in, 0.0);
        for (i, &di) in delta.iter().enumerate().take(n_out) {
            for (j, b) in bases.iter().enumerate() {
                let base = (i * n_in + j) * k + b.first;
                for r in 0..=p {
                    g[base + r] += di * b.values[r];
                }
                if l > 0 {
                    let slope: f64 = (0..=p).map(|r| beta[base + r] * b.derivatives[r]).sum();
                    next[j] += di * slope;
                }
            }
        }
        if l > 0 {
            for (nj, &h) in next.iter_mut().zip(&tape.inputs[l]) {
                *nj *= h * (1.0 - h);
                if !nj.is_finite() {
                    return Err(KaneError::NonFinite { layer: l, what: "back-propagated sensitivity".into() });
                }
            }
            std::mem::swap(delta, next);
        }
    }
    Ok(())
}

/// Mean loss and its gradient, flattened in [`KaneNetwork::parameters`] order.
/// `first_layer` optionally supplies the basis of every feature, row-major.
pub(crate) fn mean_loss_and_gradient(
    net: &KaneNetwork,
    features: ArrayView2<f64>,
    first_layer: Option<&[LocalBasis]>,
    targets: &Targets,
) -> Result<(f64, Vec<f64>)> {
    let n = features.nrows();
    if n == 0 {
        return Err(KaneError::Empty("no rows to evaluate the loss on".into()));
    }
    if targets.len() != n {
        return Err(KaneError::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    let d = net.input_dim();
    let mut tape = net.new_tape();
    let mut dz = vec![0.0; net.output_dim()];
    let mut buffers = (Vec::new(), Vec::new());
    let mut row = vec![0.0; d];
    let mut leaf = |i: usize, loss: &mut f64, grad: &mut [f64]| -> Result<()> {
        for (dst, src) in row.iter_mut().zip(features.row(i).iter()) {
            *dst = *src;
        }
        let pre = first_layer.map(|b| &b[i * d..(i + 1) * d]);
        if pre.is_none() {
            net.check_features(&row)?;
        }
        net.forward_tape(&row, pre, &mut tape)?;
        *loss += output_delta(&tape, targets.row(i), &mut dz);
        backward(net, &tape, &dz, grad, &mut buffers)
    };
    let (total, mut grad) = pairwise_accumulate(n, net.parameter_count(), &mut leaf)?;
    let nf = n as f64;
    for g in &mut grad {
        *g /= nf;
    }
    let loss = total / nf;
    if !loss.is_finite() {
        return Err(KaneError::NonFinite { layer: net.layers().len() + 1, what: "loss".into() });
    }
    Ok((loss, grad))
}

/// Mean loss over a batch.
pub fn mean_loss(net: &KaneNetwork, features: ArrayView2<f64>, targets: &Targets, loss: LossKind) -> Result<f64> {
    check_compatible(net, targets, loss)?;
    Ok(mean_loss_and_gradient(net, features, None, targets)?.0)
}

/// Exact gradient of the mean loss with respect to every coefficient, shaped like the layers.
pub fn gradient(
    net: &KaneNetwork,
    features: ArrayView2<f64>,
    targets: &Targets,
    loss: LossKind,
) -> Result<Vec<LayerCoefficients>> {
    check_compatible(net, targets, loss)?;
    let (_, flat) = mean_loss_and_gradient(net, features, None, targets)?;
    let mut out: Vec<LayerCoefficients> = net
        .layers()
        .iter()
        .map(|l| LayerCoefficients::zeros(l.outputs(), l.inputs(), net.spec().basis_count()))
        .collect();
    let mut offset = 0;
    for layer in &mut out {
        let dst = layer.as_slice_mut();
        dst.copy_from_slice(&flat[offset..offset + dst.len()]);
        offset += dst.len();
    }
    Ok(out)
}

/// Loss evaluator for training: caches the basis of the fixed input features.
pub(crate) struct Objective<'a> {
    net: KaneNetwork,
    features: ArrayView2<'a, f64>,
    first_layer: Vec<LocalBasis>,
    targets: &'a Targets,
}

impl<'a> Objective<'a> {
    pub fn new(net: KaneNetwork, features: ArrayView2<'a, f64>, targets: &'a Targets, loss: LossKind) -> Result<Self> {
        check_compatible(&net, targets, loss)?;
        if features.ncols() != net.input_dim() {
            return Err(KaneError::Shape(format!(
                "data has {} features, network expects {}",
                features.ncols(),
                net.input_dim()
            )));
        }
        let mut first_layer = Vec::with_capacity(features.len());
        for row in features.rows() {
            let row: Vec<f64> = row.to_vec();
            net.check_features(&row)?;
            first_layer.extend(row.iter().map(|&x| net.spec().local_unchecked(x)));
        }
        Ok(Self { net, features, first_layer, targets })
    }

    pub fn evaluate(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.net.set_parameters(params)?;
        mean_loss_and_gradient(&self.net, self.features, Some(&self.first_layer), self.targets)
    }

    pub fn into_network(mut self, params: &[f64]) -> Result<KaneNetwork> {
        self.net.set_parameters(params)?;
        Ok(self.net)
    }
}
