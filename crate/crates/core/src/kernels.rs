//! Gaussian and semantic-aware deep kernels, plus gram-matrix construction.
//!
//! The Gaussian kernel is `exp(-|x - y|^2 / (2 sigma^2))`. The deep kernel mixes
//! a Gaussian on semantic features with a Gaussian on raw inputs:
//!
//! ```text
//! k(x, y) = [(1 - eps0) * kappa(phi(x), phi(y)) + eps0] * q(x, y)
//! ```
//!
//! All trainable quantities are stored unconstrained (`log sigma`, `logit eps0`)
//! so any real-valued update keeps the kernel valid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, FeatureMatrix};

/// Gaussian bandwidth, stored as `log sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBandwidth {
    pub log_sigma: f64,
}

impl GaussianBandwidth {
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { log_sigma: sigma.ln() })
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// `1 / sigma^2`.
    #[inline]
    fn inv_sigma_sq(&self) -> f64 {
        (-2.0 * self.log_sigma).exp()
    }
}

/// Trainable parameters of the deep kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepKernelParams {
    pub eps0_logit: f64,
    pub sigma_phi: GaussianBandwidth,
    pub sigma_q: GaussianBandwidth,
}

impl DeepKernelParams {
    /// Parameters with `eps0 = 0.5`.
    pub fn new(sigma_phi: GaussianBandwidth, sigma_q: GaussianBandwidth) -> Self {
        Self {
            eps0_logit: 0.0,
            sigma_phi,
            sigma_q,
        }
    }

    pub fn eps0(&self) -> f64 {
        sigmoid(self.eps0_logit)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("kernel input contains non-finite values"));
    }
    Ok(())
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], bw: GaussianBandwidth) -> Result<f64> {
    check_pair(x, y)?;
    Ok((-0.5 * squared_distance(x, y) * bw.inv_sigma_sq()).exp())
}

pub fn deep_kernel(
    x_raw: &[f64],
    y_raw: &[f64],
    x_feat: &[f64],
    y_feat: &[f64],
    params: &DeepKernelParams,
) -> Result<f64> {
    check_pair(x_raw, y_raw)?;
    check_pair(x_feat, y_feat)?;
    let kind = Kernel::Deep(*params);
    Ok(kind.eval_sq(squared_distance(x_raw, y_raw), squared_distance(x_feat, y_feat)))
}

/// A kernel together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Gaussian(GaussianBandwidth),
    Deep(DeepKernelParams),
}

impl Kernel {
    pub fn needs_features(&self) -> bool {
        matches!(self, Kernel::Deep(_))
    }

    /// Number of unconstrained parameters.
    pub fn n_params(&self) -> usize {
        match self {
            Kernel::Gaussian(_) => 1,
            Kernel::Deep(_) => 3,
        }
    }

    /// Unconstrained parameter vector: `[log sigma]` or
    /// `[eps0_logit, log sigma_phi, log sigma_q]`.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Kernel::Gaussian(bw) => vec![bw.log_sigma],
            Kernel::Deep(p) => vec![p.eps0_logit, p.sigma_phi.log_sigma, p.sigma_q.log_sigma],
        }
    }

    pub fn with_params(&self, theta: &[f64]) -> Kernel {
        match self {
            Kernel::Gaussian(_) => Kernel::Gaussian(GaussianBandwidth { log_sigma: theta[0] }),
            Kernel::Deep(_) => Kernel::Deep(DeepKernelParams {
                eps0_logit: theta[0],
                sigma_phi: GaussianBandwidth { log_sigma: theta[1] },
                sigma_q: GaussianBandwidth { log_sigma: theta[2] },
            }),
        }
    }

    /// Kernel value from squared raw and feature distances.
    #[inline]
    pub fn eval_sq(&self, raw_sq: f64, feat_sq: f64) -> f64 {
        match self {
            Kernel::Gaussian(bw) => (-0.5 * raw_sq * bw.inv_sigma_sq()).exp(),
            Kernel::Deep(p) => {
                let e = p.eps0();
                let kappa = (-0.5 * feat_sq * p.sigma_phi.inv_sigma_sq()).exp();
                let q = (-0.5 * raw_sq * p.sigma_q.inv_sigma_sq()).exp();
                ((1.0 - e) * kappa + e) * q
            }
        }
    }

    /// Kernel value and its gradient with respect to [`Kernel::params`].
    #[inline]
    pub fn eval_sq_grad(&self, raw_sq: f64, feat_sq: f64, grad: &mut [f64]) -> f64 {
        match self {
            Kernel::Gaussian(bw) => {
                let s = bw.inv_sigma_sq();
                let k = (-0.5 * raw_sq * s).exp();
                grad[0] = k * raw_sq * s;
                k
            }
            Kernel::Deep(p) => {
                let e = p.eps0();
                let sp = p.sigma_phi.inv_sigma_sq();
                let sq = p.sigma_q.inv_sigma_sq();
                let kappa = (-0.5 * feat_sq * sp).exp();
                let q = (-0.5 * raw_sq * sq).exp();
                let mix = (1.0 - e) * kappa + e;
                let k = mix * q;
                grad[0] = (1.0 - kappa) * q * e * (1.0 - e);
                grad[1] = (1.0 - e) * q * kappa * feat_sq * sp;
                grad[2] = k * raw_sq * sq;
                k
            }
        }
    }
}

/// Raw observations paired with their semantic features (when a deep kernel
/// is in use). Row `i` of `features` must be the featurizer output of row `i`
/// of `raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raw: FeatureMatrix,
    pub features: Option<FeatureMatrix>,
}

impl Sample {
    pub fn raw(raw: FeatureMatrix) -> Self {
        Self { raw, features: None }
    }

    pub fn with_features(raw: FeatureMatrix, features: FeatureMatrix) -> Result<Self> {
        if raw.rows() != features.rows() {
            return Err(Error::invalid(format!(
                "{} raw rows but {} feature rows",
                raw.rows(),
                features.rows()
            )));
        }
        Ok(Self {
            raw,
            features: Some(features),
        })
    }

    pub fn len(&self) -> usize {
        self.raw.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            raw: self.raw.select(indices)?,
            features: self.features.as_ref().map(|f| f.select(indices)).transpose()?,
        })
    }

    pub fn vstack(&self, other: &Self) -> Result<Self> {
        let features = match (&self.features, &other.features) {
            (Some(a), Some(b)) => Some(a.vstack(b)?),
            (None, None) => None,
            _ => return Err(Error::invalid("cannot stack samples with and without features")),
        };
        Ok(Self {
            raw: self.raw.vstack(&other.raw)?,
            features,
        })
    }

    /// Feature matrix required by `kernel`, if any.
    fn features_for(&self, kernel: &Kernel) -> Result<Option<&FeatureMatrix>> {
        if kernel.needs_features() {
            self.features
                .as_ref()
                .map(Some)
                .ok_or_else(|| Error::invalid("deep kernel requires semantic features"))
        } else {
            Ok(None)
        }
    }
}

/// Row-major dense matrix of kernel evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Gram {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Cached kernel evaluations for one `(S_X, S_Y, kernel)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBundle {
    pub k_xx: Gram,
    pub k_yy: Gram,
    pub k_xy: Gram,
}

impl GramBundle {
    pub fn n(&self) -> usize {
        self.k_xx.rows
    }

    pub fn m(&self) -> usize {
        self.k_yy.rows
    }
}

/// Row count above which gram rows are filled in parallel.
const PAR_THRESHOLD: usize = 64 * 64;

/// Kernel gram between the rows of `a` and `b`.
pub fn cross_gram(a: &Sample, b: &Sample, kernel: &Kernel) -> Result<Gram> {
    let (rows, cols) = (a.len(), b.len());
    if a.raw.cols() != b.raw.cols() {
        return Err(Error::Dimension {
            expected: a.raw.cols(),
            actual: b.raw.cols(),
        });
    }
    let fa = a.features_for(kernel)?;
    let fb = b.features_for(kernel)?;
    if let (Some(fa), Some(fb)) = (fa, fb) {
        if fa.cols() != fb.cols() {
            return Err(Error::Dimension {
                expected: fa.cols(),
                actual: fb.cols(),
            });
        }
    }
    let fill_row = |i: usize, out: &mut [f64]| {
        let xr = a.raw.row(i);
        for (j, slot) in out.iter_mut().enumerate() {
            let raw_sq = squared_distance(xr, b.raw.row(j));
            let feat_sq = match (fa, fb) {
                (Some(fa), Some(fb)) => squared_distance(fa.row(i), fb.row(j)),
                _ => 0.0,
            };
            *slot = kernel.eval_sq(raw_sq, feat_sq);
        }
    };
    let mut data = vec![0.0; rows * cols];
    if rows * cols >= PAR_THRESHOLD {
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, out)| fill_row(i, out));
    } else {
        data.chunks_mut(cols)
            .enumerate()
            .for_each(|(i, out)| fill_row(i, out));
    }
    Ok(Gram { rows, cols, data })
}

pub fn gram_bundle(sx: &Sample, sy: &Sample, kernel: &Kernel) -> Result<GramBundle> {
    Ok(GramBundle {
        k_xx: cross_gram(sx, sx, kernel)?,
        k_yy: cross_gram(sy, sy, kernel)?,
        k_xy: cross_gram(sx, sy, kernel)?,
    })
}

/// Median of pooled pairwise Euclidean distances, ignoring zero distances.
/// Falls back to `sigma = 1` when every point coincides.
pub fn median_heuristic(sx: &FeatureMatrix, sy: &FeatureMatrix) -> Result<GaussianBandwidth> {
    if sx.cols() != sy.cols() {
        return Err(Error::Dimension {
            expected: sx.cols(),
            actual: sy.cols(),
        });
    }
    let total = sx.rows() + sy.rows();
    if total < 2 {
        return Err(Error::invalid("median heuristic needs at least 2 rows"));
    }
    let pooled: Vec<&[f64]> = sx.iter_rows().chain(sy.iter_rows()).collect();
    let mut dists: Vec<f64> = Vec::with_capacity(total * (total - 1) / 2);
    for i in 0..total {
        for j in (i + 1)..total {
            let d = squared_distance(pooled[i], pooled[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return GaussianBandwidth::from_sigma(1.0);
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    GaussianBandwidth::from_sigma(median)
}

/// Maps raw observations to semantic features.
pub trait Featurizer: Sync {
    fn features(&self, x: &FeatureMatrix) -> Result<FeatureMatrix>;

    /// Pairs `x` with its features.
    fn sample(&self, x: &FeatureMatrix) -> Result<Sample> {
        Sample::with_features(x.clone(), self.features(x)?)
    }
}

/// Uses the raw inputs as their own features.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFeaturizer;

impl Featurizer for IdentityFeaturizer {
    fn features(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        Ok(x.clone())
    }
}
