//! MMD / SAMMD estimators, the regularized variance estimate, the
//! test-power criterion and HSIC.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    cross_gram, gram_bundle, median_heuristic, GaussianBandwidth, GramBundle, Kernel, Sample,
};
use crate::matrix::FeatureMatrix;
use crate::rng;

/// Default variance regularizer.
pub const DEFAULT_LAMBDA: f64 = 1e-8;

/// `H_ij = k(x_i, x_j) + k(y_i, y_j) - k(x_i, y_j) - k(y_i, x_j)` for paired samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub n: usize,
    pub h: Vec<f64>,
}

impl HMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    /// Row sums `sum_j H_ij`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.h.chunks_exact(self.n).map(|r| r.iter().sum()).collect()
    }
}

/// Unbiased squared-MMD estimate, its regularized standard deviation and
/// their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub mmd_sq: f64,
    pub sigma_hat: f64,
    pub j_hat: f64,
}

pub fn h_matrix(bundle: &GramBundle) -> Result<HMatrix> {
    let (n, m) = (bundle.n(), bundle.m());
    if n != m {
        return Err(Error::UnequalSample { n, m });
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = bundle.k_xx.get(i, j) + bundle.k_yy.get(i, j)
                - bundle.k_xy.get(i, j)
                - bundle.k_xy.get(j, i);
        }
    }
    Ok(HMatrix { n, h })
}

/// Off-diagonal mean of `H`. Unbiased, so it can be negative.
pub fn mmd_u_squared(h: &HMatrix) -> Result<f64> {
    let n = h.n;
    if n < 2 {
        return Err(Error::invalid("unbiased MMD needs n >= 2"));
    }
    let total: f64 = h.h.iter().sum();
    let trace: f64 = (0..n).map(|i| h.get(i, i)).sum();
    Ok((total - trace) / (n * (n - 1)) as f64)
}

/// V-statistic `mean(K_xx) + mean(K_yy) - 2 mean(K_xy)`; `n` and `m` may differ.
/// Nonnegative for positive semi-definite kernels; rounding below zero is clamped.
pub fn mmd_biased_squared(bundle: &GramBundle) -> Result<f64> {
    if bundle.k_xx.data.is_empty() || bundle.k_yy.data.is_empty() || bundle.k_xy.data.is_empty() {
        return Err(Error::invalid("biased MMD needs non-empty gram blocks"));
    }
    Ok((bundle.k_xx.mean() + bundle.k_yy.mean() - 2.0 * bundle.k_xy.mean()).max(0.0))
}

/// `4/n^3 sum_i (sum_j H_ij)^2 - 4/n^4 (sum_ij H_ij)^2 + lambda`, floored at `lambda`.
pub fn sigma_h1_hat_sq(h: &HMatrix, lambda: f64) -> f64 {
    let n = h.n as f64;
    let rows = h.row_sums();
    let sum_sq: f64 = rows.iter().map(|r| r * r).sum();
    let total: f64 = rows.iter().sum();
    let raw = 4.0 / n.powi(3) * sum_sq - 4.0 / n.powi(4) * total * total;
    (raw + lambda).max(lambda)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

pub fn j_hat(sx: &Sample, sy: &Sample, kernel: &Kernel, lambda: f64) -> Result<CriterionValue> {
    check_lambda(lambda)?;
    if sx.len() != sy.len() {
        return Err(Error::UnequalSample {
            n: sx.len(),
            m: sy.len(),
        });
    }
    let bundle = gram_bundle(sx, sy, kernel)?;
    let h = h_matrix(&bundle)?;
    let mmd_sq = mmd_u_squared(&h)?;
    let sigma_hat = sigma_h1_hat_sq(&h, lambda).sqrt();
    let j = mmd_sq / sigma_hat;
    if !(mmd_sq.is_finite() && sigma_hat.is_finite() && j.is_finite()) {
        return Err(Error::numerical("non-finite criterion value"));
    }
    Ok(CriterionValue {
        mmd_sq,
        sigma_hat,
        j_hat: j,
    })
}

/// Biased HSIC between paired samples with Gaussian kernels.
///
/// Sum of the joint term `1/n^2 sum_ij Kx_ij Ky_ij`, the marginal product
/// `mean(Kx) mean(Ky)`, and minus twice the mixed term
/// `1/n^3 sum_ijl Kx_ij Ky_il`.
pub fn hsic(
    sx: &FeatureMatrix,
    sy: &FeatureMatrix,
    bwx: GaussianBandwidth,
    bwy: GaussianBandwidth,
) -> Result<f64> {
    let n = sx.rows();
    if n != sy.rows() {
        return Err(Error::UnequalSample { n, m: sy.rows() });
    }
    if n < 2 {
        return Err(Error::invalid("HSIC needs n >= 2 paired observations"));
    }
    let x = Sample::raw(sx.clone());
    let y = Sample::raw(sy.clone());
    let kx = cross_gram(&x, &x, &Kernel::Gaussian(bwx))?;
    let ky = cross_gram(&y, &y, &Kernel::Gaussian(bwy))?;
    let nf = n as f64;
    let joint: f64 = kx.data.iter().zip(&ky.data).map(|(a, b)| a * b).sum::<f64>() / (nf * nf);
    let marginal = kx.mean() * ky.mean();
    let mixed: f64 = kx
        .data
        .chunks_exact(n)
        .zip(ky.data.chunks_exact(n))
        .map(|(rx, ry)| rx.iter().sum::<f64>() * ry.iter().sum::<f64>())
        .sum::<f64>()
        / (nf * nf * nf);
    Ok(joint + marginal - 2.0 * mixed)
}

/// Mean HSIC between two disjoint random subsets of `data`, over `repeats` draws.
///
/// Each repeat samples `2 * subset_size` distinct rows uniformly, keeps them in
/// their original row order and deals them alternately into the two subsets,
/// so pair `i` joins neighbouring rows of the sequence. Both kernels use one
/// median-heuristic bandwidth computed on the whole data set.
pub fn hsic_dependence_protocol(
    data: &FeatureMatrix,
    subset_size: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    if subset_size < 2 {
        return Err(Error::invalid("subset size must be at least 2"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    if data.rows() < 2 * subset_size {
        return Err(Error::invalid(format!(
            "need at least {} rows for two disjoint subsets, got {}",
            2 * subset_size,
            data.rows()
        )));
    }
    let bw = median_heuristic(data, data)?;
    let mut total = 0.0;
    for r in 0..repeats {
        let (a, b) = draw_paired_subsets(data.rows(), subset_size, seed, r as u64);
        total += hsic(&data.select(&a)?, &data.select(&b)?, bw, bw)?;
    }
    Ok(total / repeats as f64)
}

/// Row indices of the two subsets used by repeat `repeat` of the HSIC protocol.
pub fn draw_paired_subsets(
    rows: usize,
    subset_size: usize,
    seed: u64,
    repeat: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed, repeat);
    let mut picked = index::sample(&mut rng, rows, 2 * subset_size).into_vec();
    picked.sort_unstable();
    let a = picked.iter().step_by(2).copied().collect();
    let b = picked.iter().skip(1).step_by(2).copied().collect();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Gram;
    use approx::assert_abs_diff_eq;

    fn gram(rows: usize, cols: usize, data: &[f64]) -> Gram {
        Gram {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    #[test]
    fn h_matrix_hand_computed() {
        let bundle = GramBundle {
            k_xx: gram(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            k_yy: gram(2, 2, &[1.0, 0.25, 0.25, 1.0]),
            k_xy: gram(2, 2, &[0.9, 0.2, 0.4, 0.8]),
        };
        let h = h_matrix(&bundle).unwrap();
        // H_00 = 1 + 1 - 0.9 - 0.9, H_01 = 0.5 + 0.25 - 0.2 - 0.4
        // H_10 = 0.5 + 0.25 - 0.4 - 0.2, H_11 = 1 + 1 - 0.8 - 0.8
        let expected = [0.2, 0.15, 0.15, 0.4];
        for (a, b) in h.h.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(mmd_u_squared(&h).unwrap(), 0.15, epsilon = 1e-15);
    }

    #[test]
    fn h_matrix_rejects_unequal() {
        let bundle = GramBundle {
            k_xx: gram(1, 1, &[1.0]),
            k_yy: gram(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            k_xy: gram(1, 2, &[0.3, 0.3]),
        };
        assert_eq!(h_matrix(&bundle), Err(Error::UnequalSample { n: 1, m: 2 }));
        // The biased form accepts unequal sizes.
        let b = mmd_biased_squared(&bundle).unwrap();
        assert_abs_diff_eq!(b, 1.0 + 0.75 - 0.6, epsilon = 1e-15);
    }

    #[test]
    fn mmd_u_examples() {
        let zero = HMatrix { n: 3, h: vec![0.0; 9] };
        assert_eq!(mmd_u_squared(&zero).unwrap(), 0.0);
        let h = HMatrix {
            n: 2,
            h: vec![5.0, 0.3, 0.3, -7.0],
        };
        assert_abs_diff_eq!(mmd_u_squared(&h).unwrap(), 0.3, epsilon = 1e-15);
        let one = HMatrix { n: 1, h: vec![0.0] };
        assert!(mmd_u_squared(&one).is_err());
    }

    #[test]
    fn biased_mmd_point_masses() {
        let sigma = 0.7;
        let sx = Sample::raw(FeatureMatrix::from_rows(&[[0.0]]).unwrap());
        let sy = Sample::raw(FeatureMatrix::from_rows(&[[sigma * 2f64.sqrt()]]).unwrap());
        let k = Kernel::Gaussian(GaussianBandwidth::from_sigma(sigma).unwrap());
        let b = mmd_biased_squared(&gram_bundle(&sx, &sy, &k).unwrap()).unwrap();
        assert_abs_diff_eq!(b, 2.0 - 2.0 * (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(b, 1.264_241, epsilon = 1e-6);
        let same = mmd_biased_squared(&gram_bundle(&sx, &sx, &k).unwrap()).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn sigma_examples() {
        let lambda = 1e-8;
        assert_eq!(sigma_h1_hat_sq(&HMatrix { n: 4, h: vec![0.0; 16] }, lambda), lambda);
        let c = HMatrix { n: 5, h: vec![0.37; 25] };
        assert_abs_diff_eq!(sigma_h1_hat_sq(&c, lambda), lambda, epsilon = 1e-15);
    }

    #[test]
    fn j_hat_identical_samples() {
        let s = Sample::raw(FeatureMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.5], [2.0, 2.0]]).unwrap());
        let k = Kernel::Gaussian(GaussianBandwidth::from_sigma(1.0).unwrap());
        let c = j_hat(&s, &s, &k, 1e-8).unwrap();
        assert_eq!(c.mmd_sq, 0.0);
        assert_abs_diff_eq!(c.sigma_hat, 1e-4, epsilon = 1e-18);
        assert_eq!(c.j_hat, 0.0);
        assert!(j_hat(&s, &s, &k, 0.0).is_err());
    }

    #[test]
    fn hsic_constant_y_vanishes() {
        let x = FeatureMatrix::from_rows(&[[0.0], [1.0], [2.5], [-1.0]]).unwrap();
        let y = FeatureMatrix::from_rows(&[[3.0, 3.0]; 4]).unwrap();
        let bw = GaussianBandwidth::from_sigma(1.0).unwrap();
        assert_abs_diff_eq!(hsic(&x, &y, bw, bw).unwrap(), 0.0, epsilon = 1e-15);
        let short = FeatureMatrix::from_rows(&[[0.0]; 3]).unwrap();
        assert!(matches!(hsic(&x, &short, bw, bw), Err(Error::UnequalSample { .. })));
    }

    #[test]
    fn protocol_preconditions() {
        let data = FeatureMatrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        assert!(hsic_dependence_protocol(&data, 1, 3, 0).is_err());
        assert!(hsic_dependence_protocol(&data, 6, 3, 0).is_err());
        assert!(hsic_dependence_protocol(&data, 5, 0, 0).is_err());
        assert!(hsic_dependence_protocol(&data, 5, 2, 0).is_ok());
    }

    #[test]
    fn paired_subsets_are_disjoint_and_ordered() {
        let (a, b) = draw_paired_subsets(50, 10, 3, 1);
        assert_eq!((a.len(), b.len()), (10, 10));
        for (x, y) in a.iter().zip(&b) {
            assert!(x < y);
        }
        assert!(a.iter().all(|i| !b.contains(i)));
    }
}
