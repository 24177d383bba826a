use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::Dimension(
                "dataset needs dim >= 1 and at least one class".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "{} features do not match {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::OutOfRange(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.features(i));
        }
        Dataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
        }
    }

    /// Sample indices grouped by label.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Concatenate datasets with identical shape.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim || p.classes != first.classes {
                return Err(Error::Dimension("datasets differ in shape".into()));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(features, labels, first.dim, first.classes)
    }
}

/// Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Expected distance between a class mean and the origin.
    pub separation: f64,
    pub noise_std: f64,
    pub test_per_class: usize,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            separation: 4.0,
            noise_std: 1.0,
            test_per_class: 500,
        }
    }
}

impl BlobConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(
                "data.num_classes",
                "need at least two classes",
            ));
        }
        if self.dim == 0 {
            return Err(Error::config("data.dim", "must be positive"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config("data.separation", "must be positive"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("data.noise_std", "must be positive"));
        }
        if self.test_per_class == 0 {
            return Err(Error::config("data.test_per_class", "must be positive"));
        }
        Ok(())
    }
}

/// Draw class means, then `train_per_class` training and
/// `cfg.test_per_class` test samples per class around them.
pub fn generate_blobs<R: Rng + ?Sized>(
    cfg: &BlobConfig,
    train_per_class: usize,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let scale = cfg.separation / (cfg.dim as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        })
        .collect();
    let draw = |per_class: usize, rng: &mut R| {
        let mut features = Vec::with_capacity(per_class * cfg.num_classes * cfg.dim);
        let mut labels = Vec::with_capacity(per_class * cfg.num_classes);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for m in mean {
                    let z: f64 = StandardNormal.sample(rng);
                    features.push(m + cfg.noise_std * z);
                }
                labels.push(c);
            }
        }
        Dataset::new(features, labels, cfg.dim, cfg.num_classes)
    };
    let train = draw(train_per_class, rng)?;
    let test = draw(cfg.test_per_class, rng)?;
    Ok((train, test))
}
