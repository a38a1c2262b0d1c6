//! Multinomial logistic regression trained by full-batch gradient descent.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, axpy, chunked_sum, dot, softmax_in_place, Matrix};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    /// `k × d`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the step size after every accepted step.
    pub lr_growth: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            learning_rate: 0.5,
            lr_growth: 1.1,
            epochs: 300,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Outcome of one step-halving descent step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub loss: f64,
    pub halvings: u32,
    pub accepted: bool,
}

const MAX_HALVINGS: u32 = 60;
const MAX_LR: f64 = 1e6;

/// One gradient step on `params` with step-size backtracking: a step that
/// raises the loss is undone, the rate halved and the step retried. If no
/// rate decreases the loss the parameters are left unchanged.
pub fn descend(
    params: &mut [f64],
    grad: &[f64],
    loss: f64,
    lr: &mut f64,
    growth: f64,
    eval: impl Fn(&[f64]) -> f64,
) -> Step {
    let start = params.to_vec();
    let mut halvings = 0;
    loop {
        for ((p, s), g) in params.iter_mut().zip(&start).zip(grad) {
            *p = s - *lr * g;
        }
        let new = eval(params);
        if new.is_finite() && new <= loss {
            *lr = (*lr * growth).min(MAX_LR);
            return Step {
                loss: new,
                halvings,
                accepted: true,
            };
        }
        halvings += 1;
        *lr *= 0.5;
        if halvings >= MAX_HALVINGS {
            params.copy_from_slice(&start);
            return Step {
                loss,
                halvings,
                accepted: false,
            };
        }
    }
}

impl Logistic {
    pub fn zeros(k: usize, d: usize) -> Self {
        Logistic {
            weights: Matrix::zeros(k, d),
            bias: vec![0.0; k],
        }
    }

    pub fn random(k: usize, d: usize, scale: f64, seed: u64, index: u64) -> Self {
        let mut rng = stream(seed, Purpose::Init, index);
        Logistic {
            weights: Matrix::from_fn(k, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
            bias: vec![0.0; k],
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows
    }

    pub fn dim(&self) -> usize {
        self.weights.cols
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes()).map(|c| dot(self.weights.row(c), x) + self.bias[c]).collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = (0..features.rows).filter(|&i| self.predict(features.row(i)) == labels[i]).count();
        hits as f64 / labels.len() as f64
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        let mut v = self.weights.data.clone();
        v.extend_from_slice(&self.bias);
        v
    }

    pub(crate) fn from_flat(k: usize, d: usize, flat: &[f64]) -> Self {
        Logistic {
            weights: Matrix {
                rows: k,
                cols: d,
                data: flat[..k * d].to_vec(),
            },
            bias: flat[k * d..].to_vec(),
        }
    }

    /// Mean cross-entropy over the rows of `features`.
    pub fn loss(&self, features: &Matrix, labels: &[usize]) -> f64 {
        let n = features.rows;
        if n == 0 {
            return 0.0;
        }
        let s = chunked_sum(n, 1, |range, acc| {
            for i in range {
                let z = self.logits(features.row(i));
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                acc[0] += lse - z[labels[i]];
            }
        });
        s[0] / n as f64
    }

    /// Mean cross-entropy and its gradient, flattened as weights then bias.
    pub fn loss_and_grad(&self, features: &Matrix, labels: &[usize]) -> (f64, Vec<f64>) {
        let (n, k, d) = (features.rows, self.classes(), self.dim());
        let len = k * d + k + 1;
        if n == 0 {
            return (0.0, vec![0.0; len - 1]);
        }
        let mut acc = chunked_sum(n, len, |range, acc| {
            for i in range {
                let x = features.row(i);
                let mut p = self.logits(x);
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                acc[len - 1] += lse - p[labels[i]];
                softmax_in_place(&mut p);
                p[labels[i]] -= 1.0;
                for (c, &pc) in p.iter().enumerate() {
                    axpy(pc, x, &mut acc[c * d..(c + 1) * d]);
                    acc[k * d + c] += pc;
                }
            }
        });
        let nf = n as f64;
        let loss = acc.pop().unwrap() / nf;
        acc.iter_mut().for_each(|g| *g /= nf);
        (loss, acc)
    }

    /// Runs one backtracking step; returns the new loss.
    pub(crate) fn step(&mut self, features: &Matrix, labels: &[usize], lr: &mut f64, growth: f64) -> (f64, Step) {
        let (k, d) = (self.classes(), self.dim());
        let (loss, grad) = self.loss_and_grad(features, labels);
        let mut flat = self.flatten();
        let step = descend(&mut flat, &grad, loss, lr, growth, |p| {
            Logistic::from_flat(k, d, p).loss(features, labels)
        });
        *self = Logistic::from_flat(k, d, &flat);
        (loss, step)
    }

    /// Trains from a Gaussian initialization; `index` selects the init stream.
    pub fn train(features: &Matrix, labels: &[usize], k: usize, cfg: &DescentConfig, index: u64) -> Result<Self> {
        if features.rows == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if labels.len() != features.rows {
            return Err(Error::Dimension {
                context: "logistic labels",
                expected: features.rows,
                found: labels.len(),
            });
        }
        let mut model = Logistic::random(k, features.cols, cfg.init_scale, cfg.seed, index);
        let mut lr = cfg.learning_rate;
        for epoch in 0..cfg.epochs {
            let (loss, step) = model.step(features, labels, &mut lr, cfg.lr_growth);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    term: "cross_entropy".into(),
                });
            }
            if !step.accepted {
                break;
            }
        }
        Ok(model)
    }
}
