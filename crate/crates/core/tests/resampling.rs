mod common;

use common::{autocorr, bw, mean, normal_matrix, std_dev};
use proptest::prelude::*;
use rayon::prelude::*;
use sammd_core::rng::stream;
use sammd_core::toymodels::{gen_dependent_h0, SyntheticKind};
use sammd_core::{
    center_weights, gram_bundle, median_heuristic, p_value, permutation_null, wild_bootstrap_null, wild_statistic,
    wild_weights, FeatureMatrix, GramBundle, Kernel, NullDraws, Sample, WildBootstrapConfig,
};

const DRAWS: usize = 100_000;

#[test]
fn weights_are_marginally_standard_normal() {
    for (i, l) in [0.1, 0.2, 1.0, 10.0].into_iter().enumerate() {
        // One value per independent chain, at a position cycling through 0..64,
        // so the draws are independent and every step of the recursion counts.
        let w: Vec<f64> = (0..DRAWS as u64)
            .into_par_iter()
            .map(|c| wild_weights(64, l, &mut stream(i as u64, c))[(c % 64) as usize])
            .collect();
        assert_eq!(w.len(), DRAWS);
        let var = std_dev(&w).powi(2);
        assert!(mean(&w).abs() <= 0.02, "l {l}: mean {}", mean(&w));
        assert!((var - 1.0).abs() <= 0.05, "l {l}: variance {var}");
    }
}

#[test]
fn weights_have_exponential_autocorrelation() {
    for l in [0.2, 5.0] {
        let w = wild_weights(DRAWS, l, &mut stream(11, 0));
        for k in [1, 2, 5] {
            let r = autocorr(&w, k);
            let target = (-(k as f64) / l).exp();
            assert!((r - target).abs() <= 0.02, "l {l} k {k}: {r} vs {target}");
        }
        assert!((std_dev(&w).powi(2) - 1.0).abs() <= 0.05);
    }
}

#[test]
fn tiny_l_is_near_iid() {
    let w = wild_weights(DRAWS, 1e-6, &mut stream(5, 0));
    assert!(autocorr(&w, 1).abs() <= 0.01);
    assert!((std_dev(&w).powi(2) - 1.0).abs() <= 0.02);
}

fn naive_wild(x: &FeatureMatrix, y: &FeatureMatrix, k: &Kernel, wx: &[f64], wy: &[f64]) -> f64 {
    let Kernel::Gaussian(b) = k else { unreachable!() };
    let kv = |a: &[f64], c: &[f64]| sammd_core::gaussian_kernel(a, c, *b).unwrap();
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            xx += wx[i] * wx[j] * kv(x.row(i), x.row(j));
        }
        for j in 0..y.rows() {
            xy += wx[i] * wy[j] * kv(x.row(i), y.row(j));
        }
    }
    for i in 0..y.rows() {
        for j in 0..y.rows() {
            yy += wy[i] * wy[j] * kv(y.row(i), y.row(j));
        }
    }
    (xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)).max(0.0)
}

#[test]
fn wild_statistic_matches_naive_loop() {
    for seed in 0..30u64 {
        let n = 1 + (seed as usize % 10);
        let m = 1 + (seed as usize * 7 % 10);
        let x = normal_matrix(n, 2, 0.0, seed);
        let y = normal_matrix(m, 2, 0.4, seed + 100);
        let k = Kernel::Gaussian(bw(0.9));
        let b = gram_bundle(&Sample::raw(x.clone()), &Sample::raw(y.clone()), &k).unwrap();
        let mut r = stream(seed, 3);
        let wx = center_weights(&wild_weights(n, 0.5, &mut r)).unwrap();
        let wy = center_weights(&wild_weights(m, 0.5, &mut r)).unwrap();
        let fast = wild_statistic(&b, &wx, &wy).unwrap();
        assert!((fast - naive_wild(&x, &y, &k, &wx, &wy)).abs() <= 1e-12);
    }
}

#[test]
fn wild_statistic_zero_weights_and_length_errors() {
    let x = normal_matrix(4, 2, 0.0, 1);
    let b = gram_bundle(&Sample::raw(x.clone()), &Sample::raw(x), &Kernel::Gaussian(bw(1.0))).unwrap();
    assert_eq!(wild_statistic(&b, &[0.0; 4], &[0.0; 4]).unwrap(), 0.0);
    assert!(wild_statistic(&b, &[0.0; 3], &[0.0; 4]).is_err());
}

fn reject(draws: &NullDraws) -> bool {
    p_value(draws).unwrap() < 0.05
}

fn bundle(x: &FeatureMatrix, y: &FeatureMatrix) -> (GramBundle, Kernel) {
    let k = Kernel::Gaussian(median_heuristic(x, y).unwrap());
    (gram_bundle(&Sample::raw(x.clone()), &Sample::raw(y.clone()), &k).unwrap(), k)
}

#[test]
fn iid_null_calibration_bands() {
    let base = SyntheticKind::standard_gaussian(2);
    let (wild, perm): (Vec<bool>, Vec<bool>) = (0..500u64)
        .into_par_iter()
        .map(|t| {
            let x = sammd_core::toymodels::gen_synthetic(&base, 100, 2 * t).unwrap().0;
            let y = sammd_core::toymodels::gen_synthetic(&base, 100, 2 * t + 1).unwrap().0;
            let (b, k) = bundle(&x, &y);
            let cfg = WildBootstrapConfig { l: 0.2, n_perm: 200, seed: t };
            let w = reject(&wild_bootstrap_null(&b, &cfg).unwrap());
            let p = reject(&permutation_null(&Sample::raw(x), &Sample::raw(y), &k, 200, t).unwrap());
            (w, p)
        })
        .unzip();
    let rate = |v: &[bool]| v.iter().filter(|&&r| r).count() as f64 / v.len() as f64;
    assert!((0.02..=0.09).contains(&rate(&wild)), "wild {}", rate(&wild));
    assert!((0.02..=0.09).contains(&rate(&perm)), "permutation {}", rate(&perm));
}

#[test]
fn dependent_null_breaks_permutation_but_not_wild() {
    // Data timescale 1, bootstrap timescale 6; see the README on choosing l.
    let base = SyntheticKind::standard_gaussian(2);
    let (wild, perm): (Vec<bool>, Vec<bool>) = (0..500u64)
        .into_par_iter()
        .map(|t| {
            let x = gen_dependent_h0(100, 1.0, &base, 2 * t).unwrap();
            let y = gen_dependent_h0(100, 1.0, &base, 2 * t + 1).unwrap();
            let (b, k) = bundle(&x, &y);
            let cfg = WildBootstrapConfig { l: 6.0, n_perm: 200, seed: t };
            let w = reject(&wild_bootstrap_null(&b, &cfg).unwrap());
            let p = reject(&permutation_null(&Sample::raw(x), &Sample::raw(y), &k, 200, t).unwrap());
            (w, p)
        })
        .unzip();
    let rate = |v: &[bool]| v.iter().filter(|&&r| r).count() as f64 / v.len() as f64;
    assert!(rate(&perm) > 0.10, "permutation {}", rate(&perm));
    assert!(rate(&wild) <= 0.10, "wild {}", rate(&wild));
}

#[test]
fn null_draws_are_seed_deterministic() {
    let x = normal_matrix(30, 2, 0.0, 1);
    let y = normal_matrix(30, 2, 0.0, 2);
    let (b, k) = bundle(&x, &y);
    let cfg = WildBootstrapConfig { l: 0.2, n_perm: 50, seed: 4 };
    assert_eq!(wild_bootstrap_null(&b, &cfg).unwrap(), wild_bootstrap_null(&b, &cfg).unwrap());
    let (sx, sy) = (Sample::raw(x), Sample::raw(y));
    assert_eq!(permutation_null(&sx, &sy, &k, 50, 4).unwrap(), permutation_null(&sx, &sy, &k, 50, 4).unwrap());
    let d = wild_bootstrap_null(&b, &cfg).unwrap();
    assert_eq!(d.values.len(), 50);
    assert!(d.values.iter().all(|v| v.is_finite()));
}

#[test]
fn permutation_on_identical_sets_never_rejects() {
    let x = Sample::raw(normal_matrix(20, 2, 0.0, 9));
    let d = permutation_null(&x, &x, &Kernel::Gaussian(bw(1.0)), 100, 0).unwrap();
    assert_eq!(d.observed, 0.0);
    assert_eq!(p_value(&d).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn centered_weights_sum_to_zero(w in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let c = center_weights(&w).unwrap();
        prop_assert_eq!(c.len(), w.len());
        prop_assert!(c.iter().sum::<f64>().abs() <= 1e-12 * w.len() as f64 * 1e3);
    }

    #[test]
    fn p_value_nonincreasing_in_observed(
        values in prop::collection::vec(0.0f64..1.0, 1..100), a in 0.0f64..1.2, b in 0.0f64..1.2,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = p_value(&NullDraws { observed: lo, values: values.clone() }).unwrap();
        let p_hi = p_value(&NullDraws { observed: hi, values }).unwrap();
        prop_assert!(p_hi <= p_lo);
        prop_assert!((0.0..=1.0).contains(&p_lo));
    }
}
