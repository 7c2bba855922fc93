//! Small differentiable classifiers with exact analytic gradients.
//!
//! Parameters live in one flat vector segmented into named tensors, mirroring
//! how a framework exposes per-layer weights; the dispersion pipeline works
//! over those segments. Both models use softmax cross-entropy; the MLP has a
//! single tanh hidden layer. Gradients are written out by hand, so the only
//! oracle that keeps them honest is the finite-difference check in the tests.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model dimension `{field}` must be at least 1")]
    ZeroDim { field: &'static str },
    #[error("mlp requires hidden_dim")]
    MissingHiddenDim,
    #[error("batch input width {got} does not match model input_dim {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("label {label} out of range for output_dim {output_dim}")]
    LabelOutOfRange { label: usize, output_dim: usize },
    #[error("parameter vector length {got} does not match model size {expected}")]
    ParamLenMismatch { got: usize, expected: usize },
    #[error("non-finite loss")]
    NonFiniteLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// Architecture plus the seed that fixes its initialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: Option<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Tensor segmentation of a parameter vector. Segments tile the vector
/// exactly, in a stable order shared by every replica.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    segments: Vec<Segment>,
    total_len: usize,
}

impl Layout {
    fn new(specs: Vec<(String, Vec<usize>)>) -> Self {
        let mut segments = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (name, shape) in specs {
            let len = shape.iter().product();
            segments.push(Segment {
                name,
                offset,
                len,
                shape,
            });
            offset += len;
        }
        Layout {
            segments,
            total_len: offset,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }
}

/// Flat parameter (or gradient) vector with a shared tensor segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Arc<Layout>,
}

impl<T: Scalar> ParamVector<T> {
    fn new(values: Vec<T>, layout: Arc<Layout>) -> Self {
        assert_eq!(
            values.len(),
            layout.total_len(),
            "segments must tile the vector"
        );
        ParamVector { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![T::zero(); self.values.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Whether two vectors carry the same segmentation.
    pub fn shares_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn segment_values(&self, seg_idx: usize) -> &[T] {
        let seg = &self.layout.segments[seg_idx];
        &self.values[seg.offset..seg.offset + seg.len]
    }

    pub fn segment_norm(&self, seg_idx: usize) -> T {
        self.segment_values(seg_idx)
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Euclidean norm per tensor segment, in segment order.
    pub fn tensor_l2_norms(&self) -> Vec<(String, T)> {
        self.layout
            .segments
            .iter()
            .enumerate()
            .map(|(i, seg)| (seg.name.clone(), self.segment_norm(i)))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A mini-batch of inputs and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// Row-major `[batch_size x input_dim]`.
    pub inputs: Vec<T>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, b: usize) -> &[T] {
        &self.inputs[b * self.input_dim..(b + 1) * self.input_dim]
    }
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: Option<usize>,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 {
            return Err(ModelError::ZeroDim { field: "input_dim" });
        }
        if output_dim == 0 {
            return Err(ModelError::ZeroDim {
                field: "output_dim",
            });
        }
        match kind {
            ModelKind::Linear => {}
            ModelKind::Mlp => match hidden_dim {
                None => return Err(ModelError::MissingHiddenDim),
                Some(0) => {
                    return Err(ModelError::ZeroDim {
                        field: "hidden_dim",
                    })
                }
                Some(_) => {}
            },
        }
        Ok(ModelSpec {
            kind,
            input_dim,
            hidden_dim: if kind == ModelKind::Mlp {
                hidden_dim
            } else {
                None
            },
            output_dim,
            seed,
        })
    }

    pub fn layout(&self) -> Arc<Layout> {
        let specs = match self.kind {
            ModelKind::Linear => vec![
                ("weight".to_string(), vec![self.input_dim, self.output_dim]),
                ("bias".to_string(), vec![self.output_dim]),
            ],
            ModelKind::Mlp => {
                let h = self.hidden_dim.expect("validated");
                vec![
                    ("hidden.weight".to_string(), vec![self.input_dim, h]),
                    ("hidden.bias".to_string(), vec![h]),
                    ("output.weight".to_string(), vec![h, self.output_dim]),
                    ("output.bias".to_string(), vec![self.output_dim]),
                ]
            }
        };
        Arc::new(Layout::new(specs))
    }

    pub fn param_len(&self) -> usize {
        self.layout().total_len()
    }

    /// Deterministic initialization: weights uniform in
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero. Replicas seeded
    /// identically are bit-identical.
    pub fn init_params<T: Scalar>(&self) -> ParamVector<T> {
        let layout = self.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut values = vec![T::zero(); layout.total_len()];
        for seg in layout.segments() {
            if seg.shape.len() != 2 {
                continue; // biases stay zero
            }
            let fan_in = seg.shape[0] as f64;
            let bound = 1.0 / fan_in.sqrt();
            for v in &mut values[seg.offset..seg.offset + seg.len] {
                *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        }
        ParamVector::new(values, layout)
    }

    fn check_batch<T: Scalar>(&self, batch: &Batch<T>) -> Result<(), ModelError> {
        if batch.size() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if batch.input_dim != self.input_dim {
            return Err(ModelError::InputDimMismatch {
                got: batch.input_dim,
                expected: self.input_dim,
            });
        }
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= self.output_dim) {
            return Err(ModelError::LabelOutOfRange {
                label,
                output_dim: self.output_dim,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch plus its analytic gradient, with
    /// the same segmentation as `params`.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
    ) -> Result<(T, ParamVector<T>), ModelError> {
        self.check_batch(batch)?;
        if params.len() != self.param_len() {
            return Err(ModelError::ParamLenMismatch {
                got: params.len(),
                expected: self.param_len(),
            });
        }
        let (loss, grad) = match self.kind {
            ModelKind::Linear => self.linear_loss_grad(params, batch),
            ModelKind::Mlp => self.mlp_loss_grad(params, batch),
        };
        if !loss.is_finite() || !grad.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok((loss, grad))
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
    ) -> Result<T, ModelError> {
        self.loss_and_grad(params, batch).map(|(loss, _)| loss)
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
    ) -> Result<T, ModelError> {
        self.check_batch(batch)?;
        let mut hits = 0usize;
        for b in 0..batch.size() {
            let logits = self.forward_logits(params, batch.row(b));
            let mut best = 0usize;
            for (c, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = c;
                }
            }
            if best == batch.labels[b] {
                hits += 1;
            }
        }
        Ok(T::from_count(hits) / T::from_count(batch.size()))
    }

    fn forward_logits<T: Scalar>(&self, params: &ParamVector<T>, row: &[T]) -> Vec<T> {
        match self.kind {
            ModelKind::Linear => {
                let w = params.segment_values(0);
                let bias = params.segment_values(1);
                affine(row, w, bias, self.input_dim, self.output_dim)
            }
            ModelKind::Mlp => {
                let h = self.hidden_dim.expect("validated");
                let w1 = params.segment_values(0);
                let b1 = params.segment_values(1);
                let w2 = params.segment_values(2);
                let b2 = params.segment_values(3);
                let mut hidden = affine(row, w1, b1, self.input_dim, h);
                for v in &mut hidden {
                    *v = v.tanh();
                }
                affine(&hidden, w2, b2, h, self.output_dim)
            }
        }
    }

    fn linear_loss_grad<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
    ) -> (T, ParamVector<T>) {
        let (d, c, bsz) = (self.input_dim, self.output_dim, batch.size());
        let inv_b = T::one() / T::from_count(bsz);
        let w = params.segment_values(0);
        let bias = params.segment_values(1);
        let mut grad = params.zeros_like();
        let mut loss = T::zero();
        for b in 0..bsz {
            let row = batch.row(b);
            let logits = affine(row, w, bias, d, c);
            let (nll, probs) = softmax_nll(&logits, batch.labels[b]);
            loss = loss + nll;
            // dlogit[o] = (p[o] - y[o]) / bsz
            let gvals = grad.values_mut();
            for o in 0..c {
                let mut delta = probs[o];
                if o == batch.labels[b] {
                    delta = delta - T::one();
                }
                delta = delta * inv_b;
                for i in 0..d {
                    gvals[i * c + o] = gvals[i * c + o] + row[i] * delta;
                }
                gvals[d * c + o] = gvals[d * c + o] + delta;
            }
        }
        (loss * inv_b, grad)
    }

    fn mlp_loss_grad<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &Batch<T>,
    ) -> (T, ParamVector<T>) {
        let (d, c, bsz) = (self.input_dim, self.output_dim, batch.size());
        let h = self.hidden_dim.expect("validated");
        let inv_b = T::one() / T::from_count(bsz);
        let w1 = params.segment_values(0).to_vec();
        let b1 = params.segment_values(1).to_vec();
        let w2 = params.segment_values(2).to_vec();
        let b2 = params.segment_values(3).to_vec();
        let layout = params.layout();
        let off_b1 = layout.segments()[1].offset;
        let off_w2 = layout.segments()[2].offset;
        let off_b2 = layout.segments()[3].offset;

        let mut grad = params.zeros_like();
        let mut loss = T::zero();
        for b in 0..bsz {
            let row = batch.row(b);
            let mut act = affine(row, &w1, &b1, d, h);
            for v in &mut act {
                *v = v.tanh();
            }
            let logits = affine(&act, &w2, &b2, h, c);
            let (nll, probs) = softmax_nll(&logits, batch.labels[b]);
            loss = loss + nll;

            let mut dlogits = probs;
            dlogits[batch.labels[b]] = dlogits[batch.labels[b]] - T::one();
            for v in &mut dlogits {
                *v = *v * inv_b;
            }
            let gvals = grad.values_mut();
            // output layer
            let mut dact = vec![T::zero(); h];
            for j in 0..h {
                for o in 0..c {
                    gvals[off_w2 + j * c + o] = gvals[off_w2 + j * c + o] + act[j] * dlogits[o];
                    dact[j] = dact[j] + w2[j * c + o] * dlogits[o];
                }
            }
            for o in 0..c {
                gvals[off_b2 + o] = gvals[off_b2 + o] + dlogits[o];
            }
            // through tanh: dz = dact * (1 - act^2)
            for j in 0..h {
                let dz = dact[j] * (T::one() - act[j] * act[j]);
                for i in 0..d {
                    gvals[i * h + j] = gvals[i * h + j] + row[i] * dz;
                }
                gvals[off_b1 + j] = gvals[off_b1 + j] + dz;
            }
        }
        (loss * inv_b, grad)
    }
}

/// `x * W + b` with `W` row-major `[in x out]`.
fn affine<T: Scalar>(x: &[T], w: &[T], bias: &[T], input: usize, output: usize) -> Vec<T> {
    let mut out = bias.to_vec();
    for i in 0..input {
        let xi = x[i];
        for (o, acc) in out.iter_mut().enumerate() {
            *acc = *acc + xi * w[i * output + o];
        }
    }
    out
}

/// Numerically stable negative log likelihood plus the softmax probabilities.
fn softmax_nll<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |acc, &v| acc + v);
    let log_total = total.ln();
    let nll = log_total - (logits[label] - max);
    let probs = exps.iter().map(|&e| e / total).collect();
    (nll, probs)
}
