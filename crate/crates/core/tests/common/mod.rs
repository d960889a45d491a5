#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use sammd_core::rng::stream;
use sammd_core::toymodels::{gen_synthetic, SyntheticKind};
use sammd_core::{FeatureMatrix, GaussianBandwidth};

pub fn normal_matrix(rows: usize, cols: usize, shift: f64, seed: u64) -> FeatureMatrix {
    let mut r = stream(seed, 77);
    let data = (0..rows * cols).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect();
    FeatureMatrix::new(rows, cols, data).unwrap()
}

pub fn gaussian(n: usize, mean: &[f64], seed: u64) -> FeatureMatrix {
    let kind = SyntheticKind::Gaussian {
        mean: mean.to_vec(),
        std: 1.0,
    };
    gen_synthetic(&kind, n, seed).unwrap().0
}

pub fn bw(sigma: f64) -> GaussianBandwidth {
    GaussianBandwidth::from_sigma(sigma).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Lag-`k` sample autocorrelation.
pub fn autocorr(v: &[f64], k: usize) -> f64 {
    let m = mean(v);
    let var: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    let cov: f64 = v.windows(k + 1).map(|w| (w[0] - m) * (w[k] - m)).sum();
    cov / var
}
