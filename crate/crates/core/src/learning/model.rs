use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::Dataset;

/// Model families with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// `z = W x + b`, parameters `W` (classes × dim, row-major) then `b`.
    #[default]
    Linear,
    /// `z = W₂ tanh(W₁ x + b₁) + b₂`, parameters `W₁, b₁, W₂, b₂`.
    Mlp { hidden: usize },
}

/// A classifier with softmax cross-entropy loss over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    dim: usize,
    classes: usize,
    params: Vec<f64>,
}

pub fn num_params(arch: Architecture, dim: usize, classes: usize) -> usize {
    match arch {
        Architecture::Linear => classes * dim + classes,
        Architecture::Mlp { hidden } => hidden * dim + hidden + classes * hidden + classes,
    }
}

impl Model {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::Dimension(
                "model needs dim >= 1 and at least two classes".into(),
            ));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::Dimension("hidden layer must be nonempty".into()));
        }
        Ok(Self {
            arch,
            dim,
            classes,
            params: vec![0.0; num_params(arch, dim, classes)],
        })
    }

    /// Zero weights for the linear model; scaled Gaussian weights and zero
    /// biases for the perceptron.
    pub fn init<R: Rng + ?Sized>(
        arch: Architecture,
        dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = Self::zeros(arch, dim, classes)?;
        if let Architecture::Mlp { hidden } = arch {
            let (w1, _, w2, _) = m.mlp_offsets(hidden);
            let s1 = 1.0 / (dim as f64).sqrt();
            for p in &mut m.params[w1..w1 + hidden * dim] {
                let z: f64 = StandardNormal.sample(rng);
                *p = s1 * z;
            }
            let s2 = 1.0 / (hidden as f64).sqrt();
            for p in &mut m.params[w2..w2 + classes * hidden] {
                let z: f64 = StandardNormal.sample(rng);
                *p = s2 * z;
            }
        }
        Ok(m)
    }

    pub fn from_params(
        arch: Architecture,
        dim: usize,
        classes: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(arch, dim, classes)?;
        if params.len() != m.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mlp_offsets(&self, hidden: usize) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = hidden * self.dim;
        let w2 = b1 + hidden;
        let b2 = w2 + self.classes * hidden;
        (w1, b1, w2, b2)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim || data.num_classes() != self.classes {
            return Err(Error::Dimension(format!(
                "data is {}-dimensional with {} classes, model expects {} and {}",
                data.dim(),
                data.num_classes(),
                self.dim,
                self.classes
            )));
        }
        Ok(())
    }

    /// Logits for one sample, plus the hidden activations for the perceptron.
    fn forward(&self, x: &[f64], logits: &mut [f64], hidden_act: &mut Vec<f64>) {
        match self.arch {
            Architecture::Linear => {
                let b = self.classes * self.dim;
                for (c, z) in logits.iter_mut().enumerate() {
                    let row = &self.params[c * self.dim..(c + 1) * self.dim];
                    *z = self.params[b + c] + dot(row, x);
                }
            }
            Architecture::Mlp { hidden } => {
                let (w1, b1, w2, b2) = self.mlp_offsets(hidden);
                hidden_act.clear();
                for j in 0..hidden {
                    let row = &self.params[w1 + j * self.dim..w1 + (j + 1) * self.dim];
                    hidden_act.push((self.params[b1 + j] + dot(row, x)).tanh());
                }
                for (c, z) in logits.iter_mut().enumerate() {
                    let row = &self.params[w2 + c * hidden..w2 + (c + 1) * hidden];
                    *z = self.params[b2 + c] + dot(row, hidden_act);
                }
            }
        }
    }

    /// Predicted class of every sample (lowest index among ties).
    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        self.check_data(data)?;
        let mut z = vec![0.0; self.classes];
        let mut h = Vec::new();
        Ok((0..data.len())
            .map(|i| {
                self.forward(data.features(i), &mut z, &mut h);
                argmax(&z)
            })
            .collect())
    }

    /// Mean cross-entropy over the samples in `idx`.
    pub fn loss(&self, data: &Dataset, idx: &[usize]) -> Result<f64> {
        self.check_data(data)?;
        if idx.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let mut z = vec![0.0; self.classes];
        let mut h = Vec::new();
        let mut total = 0.0;
        for &i in idx {
            self.forward(data.features(i), &mut z, &mut h);
            total += log_sum_exp(&z) - z[data.label(i)];
        }
        Ok(total / idx.len() as f64)
    }

    /// Mean loss and its gradient over the samples in `idx`.
    pub fn loss_and_grad(&self, data: &Dataset, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_data(data)?;
        if idx.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut z = vec![0.0; self.classes];
        let mut h = Vec::new();
        let mut total = 0.0;
        for &i in idx {
            let x = data.features(i);
            let y = data.label(i);
            self.forward(x, &mut z, &mut h);
            let lse = log_sum_exp(&z);
            total += lse - z[y];
            // dz = softmax - onehot
            for (c, v) in z.iter_mut().enumerate() {
                *v = (*v - lse).exp() - if c == y { 1.0 } else { 0.0 };
            }
            match self.arch {
                Architecture::Linear => {
                    let b = self.classes * self.dim;
                    for (c, &dz) in z.iter().enumerate() {
                        axpy(dz, x, &mut grad[c * self.dim..(c + 1) * self.dim]);
                        grad[b + c] += dz;
                    }
                }
                Architecture::Mlp { hidden } => {
                    let (w1, b1, w2, b2) = self.mlp_offsets(hidden);
                    let mut dh = vec![0.0; hidden];
                    for (c, &dz) in z.iter().enumerate() {
                        axpy(dz, &h, &mut grad[w2 + c * hidden..w2 + (c + 1) * hidden]);
                        grad[b2 + c] += dz;
                        axpy(
                            dz,
                            &self.params[w2 + c * hidden..w2 + (c + 1) * hidden],
                            &mut dh,
                        );
                    }
                    for j in 0..hidden {
                        let da = dh[j] * (1.0 - h[j] * h[j]);
                        axpy(da, x, &mut grad[w1 + j * self.dim..w1 + (j + 1) * self.dim]);
                        grad[b1 + j] += da;
                    }
                }
            }
        }
        let n = idx.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((total / n, grad))
    }

    /// Mean-loss gradient over the samples in `idx`.
    pub fn gradient(&self, data: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(data, idx)?.1)
    }
}

/// Accuracy and mean loss on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let pred = model.predict(data)?;
    let correct = pred
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: model.loss(data, &all)?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
