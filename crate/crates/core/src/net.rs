//! Two-stage MLP classifier with hand-written backpropagation.
//!
//! The shallow stage is a single affine + ReLU block whose output is the
//! feature vector tapped for scoring. The deep stage is `deep_hidden_layers`
//! affine + ReLU blocks followed by an affine head and softmax cross-entropy.
//! Only retained rows ever enter the deep stage; their cached shallow features
//! are reused, never recomputed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PfbError, Result};
use crate::pruner::PruneDecision;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PfbError::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PfbError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }
}

/// Affine layer `y = W x + b` with `W` stored `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn he_init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        let weights = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Multiply-accumulates per input row.
    pub fn macs(&self) -> u64 {
        (self.inputs * self.outputs) as u64
    }

    fn forward(&self, x: &Matrix, relu: bool) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let yr = out.row_mut(r);
            for (o, y) in yr.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let z = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                *y = if relu { z.max(0.0) } else { z };
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub deep_hidden_layers: usize,
}

impl NetDims {
    pub fn new(input_dim: usize, feature_dim: usize, hidden_dim: usize, class_count: usize) -> Self {
        Self { input_dim, feature_dim, hidden_dim, class_count, deep_hidden_layers: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.class_count < 2 {
            return Err(PfbError::InvalidConfig(format!("invalid net dims {self:?}")));
        }
        if self.deep_hidden_layers > 0 && self.hidden_dim == 0 {
            return Err(PfbError::InvalidConfig("hidden dim must be positive".into()));
        }
        Ok(())
    }

    fn deep_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.feature_dim;
        for _ in 0..self.deep_hidden_layers {
            shapes.push((prev, self.hidden_dim));
            prev = self.hidden_dim;
        }
        shapes.push((prev, self.class_count));
        shapes
    }

    pub fn shallow_macs_per_row(&self) -> u64 {
        (self.input_dim * self.feature_dim) as u64
    }

    pub fn deep_macs_per_row(&self) -> u64 {
        self.deep_shapes().iter().map(|(i, o)| (i * o) as u64).sum()
    }
}

/// Forward cost of one iteration in multiply-accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FlopCount {
    pub shallow: u64,
    pub deep: u64,
    pub saved: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.shallow + self.deep
    }
}

/// Shallow cost for every row, deep cost only for the retained ones.
pub fn flops_forward(dims: &NetDims, n_total: usize, n_retained: usize) -> FlopCount {
    let deep_row = dims.deep_macs_per_row();
    FlopCount {
        shallow: dims.shallow_macs_per_row() * n_total as u64,
        deep: deep_row * n_retained as u64,
        saved: deep_row * n_total.saturating_sub(n_retained) as u64,
    }
}

/// One batch as seen by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTensors {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    /// Cached shallow outputs, one row per input row.
    pub features: Matrix,
}

impl BatchTensors {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Output of the deep stage over the retained rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepPass {
    pub losses: Vec<f64>,
    pub mean_loss: f64,
    pub logits: Matrix,
    /// Input to every deep layer, starting with the features.
    activations: Vec<Matrix>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageNet {
    dims: NetDims,
    shallow: Dense,
    deep: Vec<Dense>,
}

fn log_softmax_loss(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TwoStageNet {
    pub fn new<R: Rng + ?Sized>(dims: NetDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let shallow = Dense::he_init(dims.input_dim, dims.feature_dim, rng);
        let deep = dims.deep_shapes().into_iter().map(|(i, o)| Dense::he_init(i, o, rng)).collect();
        Ok(Self { dims, shallow, deep })
    }

    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let deep = dims.deep_shapes().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self { dims, shallow: Dense::zeros(dims.input_dim, dims.feature_dim), deep })
    }

    /// Assembles a net from explicit layers, checking shapes.
    pub fn from_layers(dims: NetDims, shallow: Dense, deep: Vec<Dense>) -> Result<Self> {
        dims.validate()?;
        let mut shapes = vec![(dims.input_dim, dims.feature_dim)];
        shapes.extend(dims.deep_shapes());
        let layers = std::iter::once(&shallow).chain(&deep);
        if deep.len() + 1 != shapes.len() {
            return Err(PfbError::ShapeMismatch("wrong number of deep layers".into()));
        }
        for (layer, &(i, o)) in layers.zip(&shapes) {
            if layer.inputs != i || layer.outputs != o || layer.weights.len() != i * o || layer.bias.len() != o {
                return Err(PfbError::ShapeMismatch(format!("layer shape does not match {i}x{o}")));
            }
        }
        let net = Self { dims, shallow, deep };
        if !net.is_finite() {
            return Err(PfbError::SchemaViolation("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn shallow(&self) -> &Dense {
        &self.shallow
    }

    pub fn deep(&self) -> &[Dense] {
        &self.deep
    }

    pub fn shallow_mut(&mut self) -> &mut Dense {
        &mut self.shallow
    }

    pub fn deep_mut(&mut self) -> &mut [Dense] {
        &mut self.deep
    }

    pub fn is_finite(&self) -> bool {
        self.shallow.is_finite() && self.deep.iter().all(Dense::is_finite)
    }

    pub fn param_count(&self) -> usize {
        self.shallow.param_count() + self.deep.iter().map(Dense::param_count).sum::<usize>()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in std::iter::once(&self.shallow).chain(&self.deep) {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(PfbError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for layer in std::iter::once(&mut self.shallow).chain(self.deep.iter_mut()) {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn shallow_forward(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols != self.dims.input_dim {
            return Err(PfbError::ShapeMismatch(format!(
                "inputs have {} columns, net expects {}",
                inputs.cols, self.dims.input_dim
            )));
        }
        Ok(self.shallow.forward(inputs, true))
    }

    /// Deep stage and per-sample cross-entropy over already-selected rows.
    pub fn deep_forward_loss(&self, features: &Matrix, labels: &[usize]) -> Result<DeepPass> {
        if features.rows == 0 {
            return Err(PfbError::EmptySubset);
        }
        if features.cols != self.dims.feature_dim || features.rows != labels.len() {
            return Err(PfbError::ShapeMismatch(format!(
                "features {}x{} vs labels {} (feature dim {})",
                features.rows,
                features.cols,
                labels.len(),
                self.dims.feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.dims.class_count) {
            return Err(PfbError::ShapeMismatch(format!("label {bad} out of range")));
        }
        let mut activations = vec![features.clone()];
        let last = self.deep.len() - 1;
        for (i, layer) in self.deep.iter().enumerate() {
            let out = layer.forward(activations.last().unwrap(), i != last);
            activations.push(out);
        }
        let logits = activations.pop().unwrap();
        let losses: Vec<f64> = (0..logits.rows).map(|r| log_softmax_loss(logits.row(r), labels[r])).collect();
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        Ok(DeepPass { losses, mean_loss, logits, activations, labels: labels.to_vec() })
    }

    /// Gradient of the mean retained loss, flattened like [`Self::flat_params`].
    pub fn gradient(&self, batch: &BatchTensors, decision: &PruneDecision, pass: &DeepPass) -> Result<Vec<f64>> {
        let retained = &decision.retained_indices;
        if retained.len() != pass.losses.len() {
            return Err(PfbError::ShapeMismatch("deep pass does not match the retained rows".into()));
        }
        let m = retained.len() as f64;
        // dL/dlogits for the mean loss.
        let mut delta = Matrix::zeros(pass.logits.rows, pass.logits.cols);
        for r in 0..pass.logits.rows {
            let probs = softmax(pass.logits.row(r));
            let d = delta.row_mut(r);
            for (c, p) in probs.into_iter().enumerate() {
                d[c] = (p - if c == pass.labels[r] { 1.0 } else { 0.0 }) / m;
            }
        }
        let mut deep_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.deep.len());
        for (layer, input) in self.deep.iter().zip(&pass.activations).rev() {
            let (gw, gb, d_input) = layer_backward(layer, input, &delta);
            deep_grads.push((gw, gb));
            // Every deep layer input is a ReLU output.
            delta = relu_mask(d_input, input);
        }
        deep_grads.reverse();
        let inputs = batch.inputs.select_rows(retained);
        let (sw, sb, _) = layer_backward(&self.shallow, &inputs, &delta);
        let mut grad = Vec::with_capacity(self.param_count());
        grad.extend(sw);
        grad.extend(sb);
        for (w, b) in deep_grads {
            grad.extend(w);
            grad.extend(b);
        }
        Ok(grad)
    }

    /// Plain gradient descent on the mean retained loss.
    pub fn backward_and_step(
        &mut self,
        batch: &BatchTensors,
        decision: &PruneDecision,
        pass: &DeepPass,
        lr: f64,
    ) -> Result<()> {
        let grad = self.gradient(batch, decision, pass)?;
        let params: Vec<f64> = self.flat_params().iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
        self.set_flat_params(&params)
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let mut act = self.shallow_forward(inputs)?;
        let last = self.deep.len() - 1;
        for (i, layer) in self.deep.iter().enumerate() {
            act = layer.forward(&act, i != last);
        }
        Ok((0..act.rows)
            .map(|r| {
                let row = act.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }

    pub fn accuracy(&self, inputs: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(f64::NAN);
        }
        let pred = self.predict(inputs)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Returns `(dW, db, d_input)` for upstream gradient `delta` on the layer output.
fn layer_backward(layer: &Dense, input: &Matrix, delta: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
    let mut gw = vec![0.0; layer.weights.len()];
    let mut gb = vec![0.0; layer.outputs];
    let mut d_input = Matrix::zeros(input.rows, layer.inputs);
    for r in 0..input.rows {
        let x = input.row(r);
        let d = delta.row(r);
        for o in 0..layer.outputs {
            let g = d[o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            let gw_row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
            for k in 0..layer.inputs {
                gw_row[k] += g * x[k];
            }
            let di = d_input.row_mut(r);
            for k in 0..layer.inputs {
                di[k] += g * w[k];
            }
        }
    }
    (gw, gb, d_input)
}

fn relu_mask(mut grad: Matrix, activation: &Matrix) -> Matrix {
    for (g, a) in grad.data.iter_mut().zip(&activation.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetDims {
        NetDims::new(3, 4, 5, 3)
    }

    #[test]
    fn zero_shallow_gives_zero_features() {
        let net = TwoStageNet::zeros(dims()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let f = net.shallow_forward(&x).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_shallow_passes_non_negative_input() {
        let d = NetDims::new(3, 3, 2, 2);
        let mut net = TwoStageNet::zeros(d).unwrap();
        for i in 0..3 {
            net.shallow_mut().weights[i * 3 + i] = 1.0;
        }
        let x = Matrix::from_rows(&[vec![0.0, 2.5, 7.0]]).unwrap();
        assert_eq!(net.shallow_forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_deep_loss_is_log_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = TwoStageNet::new(dims(), &mut rng).unwrap();
        for layer in net.deep_mut() {
            *layer = Dense::zeros(layer.inputs, layer.outputs);
        }
        let f = Matrix::from_rows(&[vec![1.0, 2.0, 0.0, 4.0], vec![0.0; 4]]).unwrap();
        let pass = net.deep_forward_loss(&f, &[0, 2]).unwrap();
        for l in &pass.losses {
            assert_eq!(*l, 3.0f64.ln());
        }
        assert_eq!(pass.mean_loss, 3.0f64.ln());
    }

    #[test]
    fn confident_prediction_has_vanishing_loss() {
        assert!(log_softmax_loss(&[800.0, 0.0, -3.0], 0) < 1e-300);
        assert!(log_softmax_loss(&[40.0, 0.0, -3.0], 0) < 1e-15);
    }

    #[test]
    fn empty_subset_is_an_error() {
        let net = TwoStageNet::zeros(dims()).unwrap();
        let r = net.deep_forward_loss(&Matrix::zeros(0, 4), &[]);
        assert!(matches!(r, Err(PfbError::EmptySubset)));
    }

    #[test]
    fn shape_errors() {
        let net = TwoStageNet::zeros(dims()).unwrap();
        assert!(net.shallow_forward(&Matrix::zeros(2, 4)).is_err());
        assert!(net.deep_forward_loss(&Matrix::zeros(2, 4), &[0]).is_err());
        assert!(net.deep_forward_loss(&Matrix::zeros(1, 4), &[7]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = TwoStageNet::new(dims(), &mut rng).unwrap();
        let before = net.clone();
        let inputs = Matrix::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.1, 0.3, 0.9]]).unwrap();
        let features = net.shallow_forward(&inputs).unwrap();
        let batch = BatchTensors { inputs, labels: vec![0, 1], features };
        let decision = PruneDecision::keep_all(2);
        let pass = net.deep_forward_loss(&batch.features, &batch.labels).unwrap();
        net.backward_and_step(&batch, &decision, &pass, 0.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = TwoStageNet::new(dims(), &mut rng).unwrap();
        let p = net.flat_params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 3 + 3);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_flat_params(&shifted).unwrap();
        assert_eq!(net.flat_params(), shifted);
        assert!(net.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn flop_counts() {
        let d = NetDims::new(8, 8, 16, 4);
        assert_eq!(d.deep_macs_per_row(), 192);
        assert_eq!(flops_forward(&d, 128, 128).saved, 0);
        let f = flops_forward(&d, 128, 64);
        assert_eq!(f.saved, 64 * 192);
        assert_eq!(f.shallow, 128 * 64);
        assert_eq!(f.deep, 64 * 192);
    }

    #[test]
    fn predict_picks_argmax() {
        let d = NetDims { deep_hidden_layers: 0, ..NetDims::new(2, 2, 0, 2) };
        let mut net = TwoStageNet::zeros(d).unwrap();
        net.shallow_mut().weights = vec![1.0, 0.0, 0.0, 1.0];
        net.deep_mut()[0].weights = vec![1.0, 0.0, 0.0, 1.0];
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), vec![0, 1]);
        assert_eq!(net.accuracy(&x, &[0, 0]).unwrap(), 0.5);
    }
}
