//! Synthetic data: IID Gaussian and blob draws, a sequentially dependent
//! Gaussian process with IID-matching marginals, and non-IID adversarial sets.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attacks::{attack_batch, attack_restarts, AttackConfig, AttackKind};
use super::classifier::ToyClassifier;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::resampling::wild_weights;
use crate::rng;

/// Adversarial variants generated per natural row in flavor (b).
pub const VARIANTS_PER_POINT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Isotropic Gaussian `N(mean, std^2 I)`.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Equal-weight isotropic Gaussian blobs; the label is the blob index.
    Blobs { centers: Vec<Vec<f64>>, std: f64 },
}

impl SyntheticKind {
    pub fn standard_gaussian(dim: usize) -> Self {
        SyntheticKind::Gaussian {
            mean: vec![0.0; dim],
            std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SyntheticKind::Gaussian { mean, .. } => mean.len(),
            SyntheticKind::Blobs { centers, .. } => centers.first().map_or(0, |c| c.len()),
        }
    }

    fn validate(&self) -> Result<()> {
        let std = match self {
            SyntheticKind::Gaussian { std, .. } | SyntheticKind::Blobs { std, .. } => *std,
        };
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::invalid("standard deviation must be positive"));
        }
        if self.dim() == 0 {
            return Err(Error::invalid("generator dimension must be positive"));
        }
        if let SyntheticKind::Blobs { centers, .. } = self {
            if centers.iter().any(|c| c.len() != self.dim()) {
                return Err(Error::invalid("blob centers must share one dimension"));
            }
        }
        Ok(())
    }
}

/// `n` seeded IID draws with labels (all zero for the Gaussian family).
pub fn gen_synthetic(kind: &SyntheticKind, n: usize, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
    kind.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let mut rng = rng::stream(seed, 0);
    let d = kind.dim();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (center, std, label) = match kind {
            SyntheticKind::Gaussian { mean, std } => (mean, *std, 0),
            SyntheticKind::Blobs { centers, std } => {
                let c = rng.random_range(0..centers.len());
                (&centers[c], *std, c)
            }
        };
        for &mu in center {
            data.push(mu + std * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(label);
    }
    Ok((FeatureMatrix::new(n, d, data)?, labels))
}

/// `n` rows of a Gaussian AR(1) sequence `z_t = e^{-1/l} z_{t-1} + sqrt(1 - e^{-2/l}) e_t`
/// per coordinate, mapped through the base Gaussian's mean and scale. Every
/// row has the base marginal; consecutive rows are correlated.
pub fn gen_dependent_h0(n: usize, l: f64, base: &SyntheticKind, seed: u64) -> Result<FeatureMatrix> {
    base.validate()?;
    if n < 2 {
        return Err(Error::invalid("dependent generator needs n >= 2"));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::invalid("l must be positive"));
    }
    let (mean, std) = match base {
        SyntheticKind::Gaussian { mean, std } => (mean, *std),
        SyntheticKind::Blobs { .. } => {
            return Err(Error::invalid("dependent generator supports a Gaussian base only"))
        }
    };
    let d = mean.len();
    let mut rng = rng::stream(seed, 0);
    let columns: Vec<Vec<f64>> = (0..d).map(|_| wild_weights(n, l, &mut rng)).collect();
    let mut data = Vec::with_capacity(n * d);
    for t in 0..n {
        for (j, col) in columns.iter().enumerate() {
            data.push(mean[j] + std * col[t]);
        }
    }
    FeatureMatrix::new(n, d, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonIidFlavor {
    /// Attack the rows the classifier was trained on.
    A,
    /// Several random-restart attacks of each natural row.
    B,
}

/// Non-IID adversarial data.
///
/// Flavor (a) attacks each row of `base` (the classifier's own training rows)
/// with PGD under `cfg`, keeping row order. Flavor (b) emits
/// [`VARIANTS_PER_POINT`] random-restart PGD variants per base row; the order
/// of base rows is shuffled and each row's variants stay adjacent.
pub fn gen_non_iid(
    flavor: NonIidFlavor,
    base: &FeatureMatrix,
    labels: &[usize],
    model: &ToyClassifier,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<FeatureMatrix> {
    match flavor {
        NonIidFlavor::A => attack_batch(model, base, labels, AttackKind::Pgd, cfg),
        NonIidFlavor::B => {
            let attacked = attack_restarts(model, base, labels, VARIANTS_PER_POINT, cfg, rng::derive_seed(seed, 0))?;
            let mut order: Vec<usize> = (0..base.rows()).collect();
            order.shuffle(&mut rng::stream(seed, 1));
            let rows: Vec<usize> = order
                .iter()
                .flat_map(|&i| (0..VARIANTS_PER_POINT).map(move |v| i * VARIANTS_PER_POINT + v))
                .collect();
            attacked.select(&rows)
        }
    }
}
