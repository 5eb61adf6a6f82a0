//! Two-layer MLP generator mapping Gaussian noise to synthetic entity embeddings:
//! `tanh(W2 · dropout(relu(W1 · z + b1)) + b2)`.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeneratorError {
    #[error("embedding dimension {0} is too small for a d/8 hidden layer (need d >= 8)")]
    DimensionTooSmall(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Train,
    Inference,
}

/// Generator weights. `w1` is `hidden x dim`, `w2` is `dim x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient with the same layout as [`GeneratorParams`] weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GeneratorGrad {
    pub fn zeros_like(gen: &GeneratorParams) -> Self {
        GeneratorGrad {
            w1: vec![0.0; gen.w1.len()],
            b1: vec![0.0; gen.b1.len()],
            w2: vec![0.0; gen.w2.len()],
            b2: vec![0.0; gen.b2.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &GeneratorGrad, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Activations recorded by [`GeneratorParams::generate`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub z: Vec<f64>,
    /// `W1 z + b1`
    pub pre_hidden: Vec<f64>,
    /// Per hidden unit multiplier: 0 for dropped, `1/(1-p)` for kept, 1 at inference.
    pub mask: Vec<f64>,
    /// `mask * relu(pre_hidden)`
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl GeneratorParams {
    /// Glorot-uniform weights, zero biases, `hidden = floor(d / 8)`.
    pub fn init<R: Rng + ?Sized>(dim: usize, dropout: f64, rng: &mut R) -> Result<Self, GeneratorError> {
        if dim < 8 {
            return Err(GeneratorError::DimensionTooSmall(dim));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(GeneratorError::InvalidDropout(dropout.to_string()));
        }
        let hidden = dim / 8;
        let bound = (6.0 / (dim + hidden) as f64).sqrt();
        let w1 = (0..hidden * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let w2 = (0..dim * hidden).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(GeneratorParams {
            dim,
            hidden,
            dropout,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dim],
        })
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Forward pass. Train mode applies inverted dropout to the hidden layer.
    pub fn generate<R: Rng + ?Sized>(&self, z: &[f64], mode: GenMode, rng: &mut R) -> (Vec<f64>, Tape) {
        assert_eq!(z.len(), self.dim, "noise has wrong dimension");
        let (d, h) = (self.dim, self.hidden);

        let pre_hidden: Vec<f64> = (0..h)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                self.b1[j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();

        let mask: Vec<f64> = match mode {
            GenMode::Inference => vec![1.0; h],
            GenMode::Train => {
                let keep = 1.0 / (1.0 - self.dropout);
                (0..h)
                    .map(|_| {
                        if self.dropout > 0.0 && rng.random_bool(self.dropout) {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect()
            }
        };

        let hidden: Vec<f64> = pre_hidden
            .iter()
            .zip(&mask)
            .map(|(&a, &m)| if a > 0.0 { a * m } else { 0.0 })
            .collect();

        let output: Vec<f64> = (0..d)
            .map(|i| {
                let row = &self.w2[i * h..(i + 1) * h];
                let a = self.b2[i] + row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>();
                a.tanh()
            })
            .collect();

        let tape = Tape {
            z: z.to_vec(),
            pre_hidden,
            mask,
            hidden,
            output: output.clone(),
        };
        (output, tape)
    }

    /// Backward pass through tanh, the affine layers, the recorded dropout mask
    /// and ReLU (derivative 0 at 0). Returns parameter and noise gradients.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64]) -> (GeneratorGrad, Vec<f64>) {
        let mut grad = GeneratorGrad::zeros_like(self);
        let grad_z = self.backward_into(tape, grad_output, &mut grad);
        (grad, grad_z)
    }

    /// Like [`GeneratorParams::backward`], adding the parameter gradient into `acc`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward_into(&self, tape: &Tape, grad_output: &[f64], acc: &mut GeneratorGrad) -> Vec<f64> {
        let (d, h) = (self.dim, self.hidden);
        assert_eq!(grad_output.len(), d);

        // d tanh(a)/da = 1 - tanh^2
        let grad_a2: Vec<f64> = grad_output
            .iter()
            .zip(&tape.output)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();

        let mut grad_hidden = vec![0.0; h];
        for i in 0..d {
            let gi = grad_a2[i];
            acc.b2[i] += gi;
            for j in 0..h {
                acc.w2[i * h + j] += gi * tape.hidden[j];
                grad_hidden[j] += gi * self.w2[i * h + j];
            }
        }

        let mut grad_z = vec![0.0; d];
        for j in 0..h {
            let gj = if tape.pre_hidden[j] > 0.0 {
                grad_hidden[j] * tape.mask[j]
            } else {
                0.0
            };
            acc.b1[j] += gj;
            for k in 0..d {
                acc.w1[j * d + k] += gj * tape.z[k];
                grad_z[k] += gj * self.w1[j * d + k];
            }
        }
        grad_z
    }
}
