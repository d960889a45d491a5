//! Null-distribution simulation: wild bootstrap for dependent data,
//! permutation bootstrap for exchangeable data, and p-values.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::mmd_biased_squared;
use crate::kernels::{cross_gram, GramBundle, Kernel, Sample};
use crate::rng;

/// Wild-bootstrap process timescale used when nothing else is configured.
pub const DEFAULT_L: f64 = 0.2;
pub const DEFAULT_N_PERM: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WildBootstrapConfig {
    pub l: f64,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for WildBootstrapConfig {
    fn default() -> Self {
        Self {
            l: DEFAULT_L,
            n_perm: DEFAULT_N_PERM,
            seed: 0,
        }
    }
}

impl WildBootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::invalid(format!("l must be positive, got {}", self.l)));
        }
        if self.n_perm == 0 {
            return Err(Error::invalid("n_perm must be at least 1"));
        }
        Ok(())
    }
}

/// Resampled statistics together with the observed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDraws {
    pub observed: f64,
    pub values: Vec<f64>,
}

impl NullDraws {
    /// Empirical quantile of the draws (nearest-rank on the sorted values).
    pub fn quantile(&self, q: f64) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let idx = ((q.clamp(0.0, 1.0) * (v.len() - 1) as f64).round()) as usize;
        v[idx]
    }
}

/// `n` steps of `W_t = e^{-1/l} W_{t-1} + sqrt(1 - e^{-2/l}) eps_t` with
/// `W_0 ~ N(0, 1)`, so every `W_t` is marginally standard normal.
pub fn wild_weights<R: Rng + ?Sized>(n: usize, l: f64, rng: &mut R) -> Vec<f64> {
    let a = (-1.0 / l).exp();
    let b = (1.0 - (-2.0 / l).exp()).sqrt();
    let mut w = Vec::with_capacity(n);
    let mut prev: f64 = rng.sample(StandardNormal);
    if n > 0 {
        w.push(prev);
    }
    for _ in 1..n {
        let eps: f64 = rng.sample(StandardNormal);
        prev = a * prev + b * eps;
        w.push(prev);
    }
    w
}

pub fn center_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::invalid("cannot center an empty weight list"));
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Ok(w.iter().map(|v| v - mean).collect())
}

/// Weighted statistic
/// `1/n^2 wx' Kxx wx + 1/m^2 wy' Kyy wy - 2/(nm) wx' Kxy wy`.
///
/// This is a quadratic form of the pooled gram, hence nonnegative for the
/// kernels here; rounding noise below zero is clamped.
pub fn wild_statistic(bundle: &GramBundle, wx: &[f64], wy: &[f64]) -> Result<f64> {
    let (n, m) = (bundle.n(), bundle.m());
    if wx.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: wx.len(),
        });
    }
    if wy.len() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: wy.len(),
        });
    }
    let quad = |k: &[f64], cols: usize, a: &[f64], b: &[f64]| -> f64 {
        k.chunks_exact(cols)
            .zip(a)
            .map(|(row, ai)| ai * row.iter().zip(b).map(|(kij, bj)| kij * bj).sum::<f64>())
            .sum()
    };
    let (nf, mf) = (n as f64, m as f64);
    let value = quad(&bundle.k_xx.data, n, wx, wx) / (nf * nf)
        + quad(&bundle.k_yy.data, m, wy, wy) / (mf * mf)
        - 2.0 * quad(&bundle.k_xy.data, m, wx, wy) / (nf * mf);
    Ok(value.max(0.0))
}

/// Centered weight processes for X and Y used by draw `index`.
pub fn wild_draw_weights(n: usize, m: usize, cfg: &WildBootstrapConfig, index: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = rng::stream(cfg.seed, index);
    let wx = center_weights(&wild_weights(n, cfg.l, &mut rng))?;
    let wy = center_weights(&wild_weights(m, cfg.l, &mut rng))?;
    Ok((wx, wy))
}

pub fn wild_bootstrap_null(bundle: &GramBundle, cfg: &WildBootstrapConfig) -> Result<NullDraws> {
    cfg.validate()?;
    let observed = mmd_biased_squared(bundle)?;
    let (n, m) = (bundle.n(), bundle.m());
    let values = (0..cfg.n_perm as u64)
        .into_par_iter()
        .map(|i| {
            let (wx, wy) = wild_draw_weights(n, m, cfg, i)?;
            wild_statistic(bundle, &wx, &wy)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(NullDraws { observed, values })
}

/// Permutation null: pool both samples, shuffle, split at the original sizes
/// and recompute the biased statistic.
pub fn permutation_null(
    sx: &Sample,
    sy: &Sample,
    kernel: &Kernel,
    n_perm: usize,
    seed: u64,
) -> Result<NullDraws> {
    if n_perm == 0 {
        return Err(Error::invalid("n_perm must be at least 1"));
    }
    let (n, m) = (sx.len(), sy.len());
    let pooled = sx.vstack(sy)?;
    let k = cross_gram(&pooled, &pooled, kernel)?;
    let total = n + m;
    let split_stat = |order: &[usize]| -> f64 {
        let mut in_x = vec![false; total];
        for &row in &order[..n] {
            in_x[row] = true;
        }
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (r, krow) in k.data.chunks_exact(total).enumerate() {
            for (c, &v) in krow.iter().enumerate() {
                match (in_x[r], in_x[c]) {
                    (true, true) => sxx += v,
                    (false, false) => syy += v,
                    (true, false) => sxy += v,
                    (false, true) => {}
                }
            }
        }
        let (nf, mf) = (n as f64, m as f64);
        (sxx / (nf * nf) + syy / (mf * mf) - 2.0 * sxy / (nf * mf)).max(0.0)
    };
    let identity: Vec<usize> = (0..total).collect();
    let observed = split_stat(&identity);
    let values = (0..n_perm as u64)
        .into_par_iter()
        .map(|i| {
            let mut order = identity.clone();
            order.shuffle(&mut rng::stream(seed, i));
            split_stat(&order)
        })
        .collect();
    Ok(NullDraws { observed, values })
}

/// Fraction of resampled values at or above the observed statistic.
pub fn p_value(draws: &NullDraws) -> Result<f64> {
    if draws.values.is_empty() {
        return Err(Error::invalid("p-value needs at least one null draw"));
    }
    let hits = draws.values.iter().filter(|&&v| v >= draws.observed).count();
    Ok(hits as f64 / draws.values.len() as f64)
}
