//! Minimal dense-network engine: forward pass to logits, analytic input
//! gradients via layer-wise backpropagation, weight serialization, and a
//! deterministic full-batch trainer (plain and adversarial).
//!
//! Models are immutable after construction; `forward`, `predict` and the
//! gradient operations are pure and safe to call concurrently on a shared
//! classifier.

mod io;
mod train;

pub use io::{load_dataset, load_model, save_dataset, save_model};
pub use train::{train, AdversarialSpec, TrainSpec};

use crate::error::{Error, Result};
use crate::losses::{self, Objective, SurrogateKind};

/// A point in input space: the clean image, a PGD iterate, or an adversary.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector(pub Vec<f64>);

impl InputVector {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "input vector must have dimension > 0");
        InputVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Euclidean distance to another point of the same dimension.
    pub fn l2_distance(&self, other: &InputVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Pre-softmax class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest logit; ties broken by lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            // ReLU subgradient at 0 is 0, so max(0, v) with the strict
            // derivative mask below is consistent.
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value (valid for
    /// identity and ReLU; ReLU derivative at 0 is defined as 0).
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One dense layer: `out = activation(W x + b)` with `W` stored row-major,
/// shape `(rows, cols) = (out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>, activation: Activation) -> Self {
        assert_eq!(weights.len(), rows * cols, "weight matrix shape mismatch");
        assert_eq!(biases.len(), rows, "bias vector shape mismatch");
        Layer { weights, biases, rows, cols, activation }
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut sum = self.biases[r];
            for (w, x) in row.iter().zip(input) {
                sum += w * x;
            }
            out.push(self.activation.apply(sum));
        }
    }
}

/// A dense classifier mapping `R^D` to `C` logits. A zero-hidden-layer
/// instance is exactly the linear map `z = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<Layer>,
    input_dim: usize,
    num_classes: usize,
}

impl Classifier {
    /// Builds a classifier, checking that consecutive layer dimensions
    /// compose and the final layer yields `num_classes` outputs.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("classifier needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::InconsistentDimensions(format!(
                    "layer output {} does not match next layer input {}",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        let input_dim = layers[0].cols;
        let num_classes = layers.last().unwrap().rows;
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "classifier must emit at least 2 logits, got {num_classes}"
            )));
        }
        Ok(Classifier { layers, input_dim, num_classes })
    }

    /// Single linear layer `z = W x` with zero bias.
    pub fn linear(weights: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        Classifier::new(vec![Layer::new(rows, cols, weights, vec![0.0; rows], Activation::Identity)])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input(&self, x: &InputVector) -> Result<()> {
        if x.dim() != self.input_dim {
            return Err(Error::ShapeMismatch { expected: self.input_dim, got: x.dim() });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's post-activation output, for
    /// backpropagation. Index 0 holds the input itself.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// Smallest absolute pre-activation over all ReLU units, used by tests to
    /// reject inputs too close to a ReLU kink for finite differencing.
    pub fn relu_margin(&self, x: &InputVector) -> f64 {
        let mut margin = f64::INFINITY;
        let mut cur = x.0.clone();
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut sum = layer.biases[r];
                for (w, v) in row.iter().zip(&cur) {
                    sum += w * v;
                }
                pre.push(sum);
            }
            if layer.activation == Activation::Relu {
                for &p in &pre {
                    margin = margin.min(p.abs());
                }
            }
            cur = pre.iter().map(|&p| layer.activation.apply(p)).collect();
        }
        margin
    }
}

/// Computes the logits `z(x)`. Pure and deterministic.
pub fn forward(model: &Classifier, x: &InputVector) -> Result<Logits> {
    model.check_input(x)?;
    let mut cur = x.0.clone();
    let mut next = Vec::new();
    for layer in &model.layers {
        layer.forward_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Logits(cur))
}

/// The classification decision: argmax of the logits, lowest index on ties.
pub fn predict(model: &Classifier, x: &InputVector) -> Result<usize> {
    Ok(forward(model, x)?.argmax())
}

/// Backpropagates a logit-space gradient to the input.
fn backprop_input(model: &Classifier, acts: &[Vec<f64>], dlogits: Vec<f64>) -> Vec<f64> {
    let mut grad = dlogits;
    for (l, layer) in model.layers.iter().enumerate().rev() {
        // d(pre-activation) from d(post-activation)
        let out = &acts[l + 1];
        for (g, &o) in grad.iter_mut().zip(out) {
            *g *= layer.activation.grad_from_output(o);
        }
        let mut dinput = vec![0.0; layer.cols];
        for r in 0..layer.rows {
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            let g = grad[r];
            for (di, &w) in dinput.iter_mut().zip(row) {
                *di += w * g;
            }
        }
        grad = dinput;
    }
    grad
}

/// Gradient of the surrogate loss with respect to the input, via the chain
/// rule through the analytic logit gradient and layer-wise backpropagation.
pub fn input_gradient(
    model: &Classifier,
    x: &InputVector,
    y: usize,
    loss: SurrogateKind,
) -> Result<Vec<f64>> {
    input_gradient_objective(model, x, y, &Objective::Single(loss)).map(|(_, g)| g)
}

/// As `input_gradient`, for any objective (single surrogate or convex
/// combination). Also returns the loss value at `x`.
pub fn input_gradient_objective(
    model: &Classifier,
    x: &InputVector,
    y: usize,
    objective: &Objective,
) -> Result<(f64, Vec<f64>)> {
    model.check_input(x)?;
    let acts = model.forward_trace(&x.0);
    let z = Logits(acts.last().unwrap().clone());
    let (value, dlogits) = objective.value_and_logit_gradient(&z, y)?;
    Ok((value, backprop_input(model, &acts, dlogits)))
}

/// Per-layer parameter gradients, used by the trainer.
pub(crate) struct ParameterGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParameterGradients {
    pub(crate) fn zeros(model: &Classifier) -> Self {
        ParameterGradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= factor;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= factor;
            }
        }
    }
}

/// Accumulates dL/dW and dL/db for one example into `grads`, and returns the
/// loss value. Loss kind is fixed per training objective.
pub(crate) fn accumulate_parameter_gradients(
    model: &Classifier,
    x: &InputVector,
    y: usize,
    loss: SurrogateKind,
    grads: &mut ParameterGradients,
) -> Result<f64> {
    model.check_input(x)?;
    let acts = model.forward_trace(&x.0);
    let z = Logits(acts.last().unwrap().clone());
    let (value, dlogits) = losses::loss_value_and_logit_gradient(loss, &z, y)?;

    let mut grad = dlogits;
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let out = &acts[l + 1];
        let input = &acts[l];
        for (g, &o) in grad.iter_mut().zip(out) {
            *g *= layer.activation.grad_from_output(o);
        }
        let dw = &mut grads.weights[l];
        let db = &mut grads.biases[l];
        for r in 0..layer.rows {
            let g = grad[r];
            db[r] += g;
            let row = &mut dw[r * layer.cols..(r + 1) * layer.cols];
            for (w, &xi) in row.iter_mut().zip(input) {
                *w += g * xi;
            }
        }
        let mut dinput = vec![0.0; layer.cols];
        for r in 0..layer.rows {
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            let g = grad[r];
            for (di, &w) in dinput.iter_mut().zip(row) {
                *di += w * g;
            }
        }
        grad = dinput;
    }
    Ok(value)
}

pub(crate) fn apply_parameter_step(model: &mut Classifier, grads: &ParameterGradients, step: f64) {
    for (l, layer) in model.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
            *w -= step * g;
        }
        for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
            *b -= step * g;
        }
    }
}

/// A labeled example `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: InputVector,
    pub y: usize,
}

/// A named collection of examples sharing input dimension and class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub input_dim: usize,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, examples: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let input_dim = examples[0].x.dim();
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.dim() != input_dim {
                return Err(Error::MalformedDataset(format!(
                    "example {i} has dimension {}, expected {input_dim}",
                    ex.x.dim()
                )));
            }
            if ex.y >= num_classes {
                return Err(Error::ClassOutOfRange { index: ex.y, classes: num_classes });
            }
        }
        Ok(Dataset { examples, input_dim, num_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Fraction of examples the model classifies correctly.
pub fn clean_accuracy(model: &Classifier, dataset: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for ex in &dataset.examples {
        if predict(model, &ex.x)? == ex.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_difference_input, random_mlp, relative_error, toy_classifier};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_toy_matrix_matches_hand_product() {
        // Brute-force dot-product oracle for z = W x.
        let model = toy_classifier();
        let x = InputVector::new(vec![-0.45, -0.8]);
        let z = forward(&model, &x).unwrap();
        let w = [[0.3, -0.3], [1.0, -0.01], [-0.25, 0.75]];
        for (i, row) in w.iter().enumerate() {
            let oracle: f64 = row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
            assert!((z.0[i] - oracle).abs() < 1e-15, "logit {i}: {} vs {}", z.0[i], oracle);
        }
        assert!((z.0[0] - 0.105).abs() < 1e-12);
        assert!((z.0[1] - -0.442).abs() < 1e-12);
        assert!((z.0[2] - -0.4875).abs() < 1e-12);
    }

    #[test]
    fn forward_identity_model() {
        let model = Classifier::linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let z = forward(&model, &InputVector::new(vec![0.3, 0.7])).unwrap();
        assert_eq!(z.0, vec![0.3, 0.7]);
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let model = random_mlp(3, &[8, 8], 4, 11);
        let x = InputVector::new(vec![0.2, -0.4, 0.9]);
        let a = forward(&model, &x).unwrap();
        let b = forward(&model, &x).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = toy_classifier();
        let err = forward(&model, &InputVector::new(vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn predict_toy_input_is_class_zero() {
        let model = toy_classifier();
        let pred = predict(&model, &InputVector::new(vec![-0.45, -0.8])).unwrap();
        assert_eq!(pred, 0);
    }

    #[test]
    fn predict_breaks_ties_by_lowest_index() {
        assert_eq!(Logits(vec![1.0, 1.0, 1.0]).argmax(), 0);
        assert_eq!(Logits(vec![1.0, 3.0, 2.0]).argmax(), 1);
    }

    #[test]
    fn cw_input_gradient_of_linear_model_is_row_difference() {
        // For z = W x and CW loss, the gradient is W^T (e_{j*} - e_y).
        let model = toy_classifier();
        let x = InputVector::new(vec![-0.45, -0.8]);
        let grad = input_gradient(&model, &x, 0, SurrogateKind::Cw).unwrap();
        // j* = argmax_{j != 0} z_j = 1 at this point.
        let expected = [1.0 - 0.3, -0.01 - -0.3];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
        let fd = finite_difference_input(&model, &x, 0, SurrogateKind::Cw, 1e-5);
        assert!(relative_error(&grad, &fd) < 1e-7);
    }

    #[test]
    fn ce_gradient_vanishes_at_full_confidence() {
        // Softmax probability 1 - delta on the true class drives the CE
        // input gradient to zero.
        let model = Classifier::linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        // logits (30, 0): softmax gap delta < 1e-12
        let x = InputVector::new(vec![30.0, 0.0]);
        let grad = input_gradient(&model, &x, 0, SurrogateKind::Ce).unwrap();
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm} not vanishing");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        // 100 random (model, x, y) triples per surrogate, central differences
        // with step 1e-5, relative error <= 1e-4.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let kinds = [SurrogateKind::Ce, SurrogateKind::Cw, SurrogateKind::Dlr];
        let mut checked = 0;
        while checked < 100 {
            let d = rng.gen_range(2..6);
            let c = rng.gen_range(3..6);
            let model = random_mlp(d, &[10, 6], c, rng.gen());
            let x = InputVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
            // Keep clear of ReLU kinks and损 loss kinks so the FD oracle is valid.
            if model.relu_margin(&x) < 1e-3 {
                continue;
            }
            let z = forward(&model, &x).unwrap();
            let mut sorted = z.0.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted[0] - sorted[1] < 1e-3 || sorted[1] - sorted[2] < 1e-3 {
                continue;
            }
            let y = rng.gen_range(0..c);
            for kind in kinds {
                let grad = input_gradient(&model, &x, y, kind).unwrap();
                let fd = finite_difference_input(&model, &x, y, kind, 1e-5);
                let err = relative_error(&grad, &fd);
                assert!(err <= 1e-4, "{kind:?} rel err {err} at sample {checked}");
            }
            checked += 1;
        }
    }

    #[test]
    fn linearity_of_zero_hidden_layer_model() {
        // forward(x + delta) - forward(x) = W delta for linear models.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = Classifier::linear(w.clone(), 3, 2).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xs = InputVector::new(x.clone());
            let xd = InputVector::new(x.iter().zip(&delta).map(|(a, b)| a + b).collect());
            let za = forward(&model, &xs).unwrap();
            let zb = forward(&model, &xd).unwrap();
            for r in 0..3 {
                let wd: f64 = w[r * 2..r * 2 + 2].iter().zip(&delta).map(|(a, b)| a * b).sum();
                assert!((zb.0[r] - za.0[r] - wd).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dataset_rejects_mixed_dimensions_and_bad_labels() {
        let a = LabeledExample { x: InputVector::new(vec![0.0, 1.0]), y: 0 };
        let b = LabeledExample { x: InputVector::new(vec![0.0]), y: 0 };
        assert!(matches!(
            Dataset::new("bad", vec![a.clone(), b], 2),
            Err(Error::MalformedDataset(_))
        ));
        let c = LabeledExample { x: InputVector::new(vec![0.0, 1.0]), y: 5 };
        assert!(matches!(
            Dataset::new("bad", vec![a, c], 2),
            Err(Error::ClassOutOfRange { .. })
        ));
        assert!(matches!(Dataset::new("empty", vec![], 2), Err(Error::EmptyDataset)));
    }
}
