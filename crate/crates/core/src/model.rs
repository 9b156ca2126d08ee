//! Classifier heads trained on top of frozen embeddings.
//!
//! Two small architectures cover every experiment in this crate: a
//! softmax-linear probe (the default) and a one-hidden-layer tanh network
//! for tasks where the probe underfits. Parameters live in one flat
//! `Vec<f64>`, so federated averaging and proximal penalties are plain
//! element-wise loops and bit-for-bit reproducibility costs nothing.
//!
//! Gradients are computed analytically and checked against central finite
//! differences in the tests; both shapes share the cross-entropy head from
//! [`crate::linalg::softmax_xent_grad`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{softmax, softmax_xent_grad};
use crate::rng::SeededStream;

/// Half-width of the uniform initialization range.
const INIT_RANGE: f64 = 0.05;

/// Architecture descriptor binding a flat parameter vector to a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelShape {
    /// Multinomial logistic regression: `logits = W·x + b`.
    ///
    /// Layout: `W` row-major (`num_classes × dim`), then `b` (`num_classes`).
    SoftmaxLinear { dim: usize, num_classes: usize },
    /// One tanh hidden layer: `logits = W2·tanh(W1·x + b1) + b2`.
    ///
    /// Layout: `W1` (`hidden × dim`), `b1` (`hidden`), `W2`
    /// (`num_classes × hidden`), `b2` (`num_classes`).
    OneHidden {
        dim: usize,
        hidden: usize,
        num_classes: usize,
    },
}

impl ModelShape {
    /// Input dimension this shape consumes.
    pub fn dim(&self) -> usize {
        match *self {
            ModelShape::SoftmaxLinear { dim, .. } => dim,
            ModelShape::OneHidden { dim, .. } => dim,
        }
    }

    /// Number of output classes.
    pub fn num_classes(&self) -> usize {
        match *self {
            ModelShape::SoftmaxLinear { num_classes, .. } => num_classes,
            ModelShape::OneHidden { num_classes, .. } => num_classes,
        }
    }

    /// Length of the flat parameter vector for this shape.
    pub fn num_params(&self) -> usize {
        match *self {
            ModelShape::SoftmaxLinear { dim, num_classes } => num_classes * (dim + 1),
            ModelShape::OneHidden {
                dim,
                hidden,
                num_classes,
            } => hidden * (dim + 1) + num_classes * (hidden + 1),
        }
    }

    /// Reject degenerate shapes (any zero dimension).
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelShape::SoftmaxLinear { dim, num_classes } => dim > 0 && num_classes > 0,
            ModelShape::OneHidden {
                dim,
                hidden,
                num_classes,
            } => dim > 0 && hidden > 0 && num_classes > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid!("model shape", "zero-sized dimension in {self:?}"))
        }
    }

    /// Draw fresh parameters uniformly from `[-0.05, 0.05)`.
    ///
    /// The caller keys `stream` so that identical keys give identical
    /// initializations on every platform and thread count.
    pub fn init(&self, stream: &mut SeededStream) -> ModelParams {
        let values = (0..self.num_params())
            .map(|_| (stream.random::<f64>() * 2.0 - 1.0) * INIT_RANGE)
            .collect();
        ModelParams {
            shape: *self,
            values,
        }
    }
}

/// A model's flat parameter vector plus the shape that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters (uniform predictions regardless of input).
    pub fn zeros(shape: ModelShape) -> ModelParams {
        ModelParams {
            shape,
            values: vec![0.0; shape.num_params()],
        }
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Raw class scores for one input vector.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.shape.dim());
        match self.shape {
            ModelShape::SoftmaxLinear { dim, num_classes } => {
                let (w, b) = self.values.split_at(num_classes * dim);
                (0..num_classes)
                    .map(|c| b[c] + row_dot(&w[c * dim..(c + 1) * dim], x))
                    .collect()
            }
            ModelShape::OneHidden { .. } => {
                let h = self.hidden_activations(x);
                self.output_logits(&h)
            }
        }
    }

    /// Class probabilities (softmax over [`Self::logits`]).
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Probability rows for every sample in `data`, in dataset order.
    ///
    /// Errors if the dataset's dimensionality or class count disagrees with
    /// this model's shape.
    pub fn predict_batch(&self, data: &EmbeddingDataset) -> Result<Vec<Vec<f64>>> {
        if data.dim() != self.shape.dim() {
            return Err(Error::DimensionMismatch {
                context: "model input",
                expected: self.shape.dim(),
                actual: data.dim(),
            });
        }
        if data.num_classes() != self.shape.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "model classes",
                expected: self.shape.num_classes(),
                actual: data.num_classes(),
            });
        }
        Ok((0..data.len())
            .map(|i| self.predict_proba(data.feature(i)))
            .collect())
    }

    /// Mean cross-entropy loss and mean gradient over `batch` (indices into
    /// `data`), gradient aligned with `self.values`.
    ///
    /// Panics in debug builds on an empty batch or mismatched dimensions;
    /// callers slice batches from a validated dataset.
    pub fn batch_loss_grad(&self, data: &EmbeddingDataset, batch: &[usize]) -> (f64, Vec<f64>) {
        debug_assert!(!batch.is_empty());
        debug_assert_eq!(data.dim(), self.shape.dim());
        let mut total_loss = 0.0;
        let mut grad = vec![0.0; self.values.len()];
        for &i in batch {
            let x = data.feature(i);
            let y = data.label(i);
            total_loss += self.accumulate_sample_grad(x, y, &mut grad);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
        (total_loss * inv, grad)
    }

    /// Add one sample's parameter gradient into `grad`; returns its loss.
    fn accumulate_sample_grad(&self, x: &[f64], y: usize, grad: &mut [f64]) -> f64 {
        match self.shape {
            ModelShape::SoftmaxLinear { dim, num_classes } => {
                let logits = self.logits(x);
                let (loss, g) = softmax_xent_grad(&logits, y);
                for c in 0..num_classes {
                    let row = &mut grad[c * dim..(c + 1) * dim];
                    for (gw, &xj) in row.iter_mut().zip(x) {
                        *gw += g[c] * xj;
                    }
                    grad[num_classes * dim + c] += g[c];
                }
                loss
            }
            ModelShape::OneHidden {
                dim,
                hidden,
                num_classes,
            } => {
                let h = self.hidden_activations(x);
                let logits = self.output_logits(&h);
                let (loss, g) = softmax_xent_grad(&logits, y);

                // layout offsets: W1 | b1 | W2 | b2
                let ob1 = hidden * dim;
                let ow2 = ob1 + hidden;
                let ob2 = ow2 + num_classes * hidden;
                let w2 = &self.values[ow2..ob2];

                // Output layer: dW2[c][k] = g[c]·h[k], db2[c] = g[c];
                // backprop into the hidden pre-activation through tanh'.
                let mut da = vec![0.0; hidden];
                for c in 0..num_classes {
                    for k in 0..hidden {
                        grad[ow2 + c * hidden + k] += g[c] * h[k];
                        da[k] += g[c] * w2[c * hidden + k];
                    }
                    grad[ob2 + c] += g[c];
                }
                for k in 0..hidden {
                    da[k] *= 1.0 - h[k] * h[k];
                    let row = &mut grad[k * dim..(k + 1) * dim];
                    for (gw, &xj) in row.iter_mut().zip(x) {
                        *gw += da[k] * xj;
                    }
                    grad[ob1 + k] += da[k];
                }
                loss
            }
        }
    }

    /// tanh hidden-layer activations (OneHidden only).
    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let ModelShape::OneHidden { dim, hidden, .. } = self.shape else {
            unreachable!("hidden_activations on a linear model");
        };
        let w1 = &self.values[..hidden * dim];
        let b1 = &self.values[hidden * dim..hidden * dim + hidden];
        (0..hidden)
            .map(|k| (b1[k] + row_dot(&w1[k * dim..(k + 1) * dim], x)).tanh())
            .collect()
    }

    /// Output-layer logits from hidden activations (OneHidden only).
    fn output_logits(&self, h: &[f64]) -> Vec<f64> {
        let ModelShape::OneHidden {
            dim,
            hidden,
            num_classes,
        } = self.shape
        else {
            unreachable!("output_logits on a linear model");
        };
        let ow2 = hidden * dim + hidden;
        let ob2 = ow2 + num_classes * hidden;
        let w2 = &self.values[ow2..ob2];
        let b2 = &self.values[ob2..];
        (0..num_classes)
            .map(|c| b2[c] + row_dot(&w2[c * hidden..(c + 1) * hidden], h))
            .collect()
    }
}

/// Dot product between a parameter row and an input slice.
#[inline]
fn row_dot(row: &[f64], x: &[f64]) -> f64 {
    crate::linalg::dot(row, x)
}
