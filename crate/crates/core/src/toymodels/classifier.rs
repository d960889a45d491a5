//! One-hidden-layer tanh classifier with hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Featurizer;
use crate::matrix::FeatureMatrix;
use crate::rng;

/// `input -> tanh(hidden) -> softmax(classes)`.
///
/// Weight matrices are row-major: `w1` is `hidden x input`, `w2` is
/// `classes x hidden`. The hidden activations double as semantic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, laid out like [`ToyClassifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ClassifierGrads {
    fn zeros(model: &ToyClassifier) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    /// Gradients flattened in [`ToyClassifier::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_x: Vec<f64>,
    pub grad_params: ClassifierGrads,
}

impl ToyClassifier {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// Gaussian initialization scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden, classes);
        let s1 = 1.0 / (input as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        m.w1.iter_mut()
            .for_each(|w| *w = s1 * rng.sample::<f64, _>(StandardNormal));
        m.w2.iter_mut()
            .for_each(|w| *w = s2 * rng.sample::<f64, _>(StandardNormal));
        m
    }

    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let (a, rest) = theta.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input)
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh())
            .collect()
    }

    fn softmax_from_hidden(&self, a: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(row, b)| row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.softmax_from_hidden(&self.hidden_activations(x)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.forward(x)?;
        Ok(p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0))
    }

    /// Cross-entropy loss `-log p_label`.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        Ok(self.forward_backward(x, label)?.loss)
    }

    /// Loss together with exact gradients with respect to the input and
    /// every parameter.
    pub fn forward_backward(&self, x: &[f64], label: usize) -> Result<LossGrad> {
        self.check_input(x)?;
        if label >= self.classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        let a = self.hidden_activations(x);
        let p = self.softmax_from_hidden(&a);
        let loss = -p[label].max(f64::MIN_POSITIVE).ln();

        let mut grads = ClassifierGrads::zeros(self);
        let mut d_logits = p;
        d_logits[label] -= 1.0;
        let mut d_a = vec![0.0; self.hidden];
        for (c, dl) in d_logits.iter().enumerate() {
            grads.b2[c] = *dl;
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            for h in 0..self.hidden {
                grads.w2[c * self.hidden + h] = dl * a[h];
                d_a[h] += dl * row[h];
            }
        }
        let mut grad_x = vec![0.0; self.input];
        for h in 0..self.hidden {
            let dz = d_a[h] * (1.0 - a[h] * a[h]);
            grads.b1[h] = dz;
            let row = &self.w1[h * self.input..(h + 1) * self.input];
            for i in 0..self.input {
                grads.w1[h * self.input + i] = dz * x[i];
                grad_x[i] += dz * row[i];
            }
        }
        Ok(LossGrad {
            loss,
            grad_x,
            grad_params: grads,
        })
    }

    /// Hidden-layer activations, one row per input row.
    pub fn semantic_features(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.cols() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                actual: x.cols(),
            });
        }
        let data: Vec<f64> = x.iter_rows().flat_map(|r| self.hidden_activations(r)).collect();
        FeatureMatrix::new(x.rows(), self.hidden, data)
    }

    pub fn accuracy(&self, data: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        let mut hits = 0usize;
        for (row, &l) in data.iter_rows().zip(labels) {
            if self.predict(row)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.rows() as f64)
    }
}

impl Featurizer for ToyClassifier {
    fn features(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.semantic_features(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 50,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minibatch gradient descent on mean cross-entropy.
pub fn train_toy_classifier(data: &FeatureMatrix, labels: &[usize], cfg: &ClassifierConfig) -> Result<ToyClassifier> {
    if labels.len() != data.rows() {
        return Err(Error::Dimension {
            expected: data.rows(),
            actual: labels.len(),
        });
    }
    let classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::invalid("training needs at least two classes present"));
    }
    if cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("hidden width and batch size must be positive"));
    }
    let mut rng = rng::stream(cfg.seed, 0);
    let mut model = ToyClassifier::random(data.cols(), cfg.hidden, classes, &mut rng);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut theta = model.params();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = vec![0.0; theta.len()];
            for &i in batch {
                let g = model.forward_backward(data.row(i), labels[i])?.grad_params.flatten();
                acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            theta.iter_mut().zip(&acc).for_each(|(t, g)| *t -= scale * g);
            model.set_params(&theta);
        }
    }
    Ok(model)
}
