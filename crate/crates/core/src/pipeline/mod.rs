//! End-to-end two-sample tests.
//!
//! Every method splits both samples once, fits its kernel on the training
//! halves and tests on the held-out halves:
//!
//! | method     | kernel                                   | null            |
//! |------------|------------------------------------------|-----------------|
//! | `sammd`    | deep kernel, trained                     | wild bootstrap  |
//! | `mmd-g`    | Gaussian, median-heuristic bandwidth     | permutation     |
//! | `mmd-o`    | Gaussian, trained bandwidth              | permutation     |
//! | `mmd-o-wb` | Gaussian, trained bandwidth              | wild bootstrap  |
//!
//! `H0` is rejected when the p-value is strictly below `alpha`.

pub mod harness;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_bundle, median_heuristic, DeepKernelParams, Featurizer, Kernel, Sample};
use crate::matrix::FeatureMatrix;
use crate::resampling::{p_value, permutation_null, wild_bootstrap_null, NullDraws, WildBootstrapConfig};
use crate::rng;
use crate::training::{split_data, train_kernel, SplitIndices, TrainConfig, TrainTrace};

pub use harness::*;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sammd")]
    Sammd,
    #[serde(rename = "mmd-g")]
    MmdG,
    #[serde(rename = "mmd-o")]
    MmdO,
    #[serde(rename = "mmd-o-wb")]
    MmdOWb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sammd, Method::MmdG, Method::MmdO, Method::MmdOWb];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sammd => "sammd",
            Method::MmdG => "mmd-g",
            Method::MmdO => "mmd-o",
            Method::MmdOWb => "mmd-o-wb",
        }
    }

    pub fn uses_wild_bootstrap(&self) -> bool {
        matches!(self, Method::Sammd | Method::MmdOWb)
    }

    pub fn trains_kernel(&self) -> bool {
        !matches!(self, Method::MmdG)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// Everything needed to run one test. The seeds inside `train` and
/// `bootstrap` are ignored; all randomness derives from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub method: Method,
    pub alpha: f64,
    pub train: TrainConfig,
    pub bootstrap: WildBootstrapConfig,
    pub seed: u64,
}

impl TestSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: DEFAULT_ALPHA,
            train: TrainConfig::default(),
            bootstrap: WildBootstrapConfig::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.train.validate()?;
        self.bootstrap.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub null_draws: NullDraws,
    /// Kernel used on the test halves.
    pub kernel: Kernel,
    pub trace: Option<TrainTrace>,
    pub split: SplitIndices,
}

/// Initial kernel for `method`, fitted on the training halves by the median
/// heuristic (`eps0 = 0.5` for the deep kernel).
pub fn initial_kernel(method: Method, sx_tr: &Sample, sy_tr: &Sample) -> Result<Kernel> {
    let sigma_raw = median_heuristic(&sx_tr.raw, &sy_tr.raw)?;
    match method {
        Method::Sammd => {
            let (fx, fy) = match (&sx_tr.features, &sy_tr.features) {
                (Some(fx), Some(fy)) => (fx, fy),
                _ => return Err(Error::invalid("SAMMD requires semantic features")),
            };
            let sigma_phi = median_heuristic(fx, fy)?;
            Ok(Kernel::Deep(DeepKernelParams::new(sigma_phi, sigma_raw)))
        }
        _ => Ok(Kernel::Gaussian(sigma_raw)),
    }
}

/// Subsamples the larger sample uniformly without replacement (row order
/// kept) so both have the smaller size.
pub fn equalize(sx: &Sample, sy: &Sample, seed: u64) -> Result<(Sample, Sample)> {
    let (n, m) = (sx.len(), sy.len());
    let shrink = |s: &Sample, k: usize| -> Result<Sample> {
        let mut idx = index::sample(&mut rng::stream(seed, 0), s.len(), k).into_vec();
        idx.sort_unstable();
        s.select(&idx)
    };
    match n.cmp(&m) {
        Ordering::Equal => Ok((sx.clone(), sy.clone())),
        Ordering::Greater => Ok((shrink(sx, m)?, sy.clone())),
        Ordering::Less => Ok((sx.clone(), shrink(sy, n)?)),
    }
}

/// Runs `spec.method` on two samples. Samples must carry features when the
/// method is SAMMD.
pub fn run_test(sx: &Sample, sy: &Sample, spec: &TestSpec) -> Result<TestResult> {
    let fitted = fit(sx, sy, spec)?;
    evaluate(&fitted, spec)
}

/// Split halves plus the kernel fitted on the training halves.
struct Fitted {
    split: crate::training::DataSplit,
    kernel: Kernel,
    trace: Option<TrainTrace>,
}

fn fit(sx: &Sample, sy: &Sample, spec: &TestSpec) -> Result<Fitted> {
    spec.validate()?;
    let (sx, sy) = equalize(sx, sy, rng::derive_seed(spec.seed, 3))?;
    let mut split_rng = rng::stream(spec.seed, 0);
    let split = split_data(&sx, &sy, spec.train.split_fraction, &mut split_rng)?;

    let init = initial_kernel(spec.method, &split.sx_train, &split.sy_train)?;
    let (kernel, trace) = if spec.method.trains_kernel() {
        let cfg = TrainConfig {
            seed: rng::derive_seed(spec.seed, 1),
            minibatch_size: spec
                .train
                .minibatch_size
                .min(split.sx_train.len())
                .min(split.sy_train.len()),
            ..spec.train
        };
        let trace = train_kernel(&split.sx_train, &split.sy_train, &init, &cfg)?;
        (trace.final_kernel, Some(trace))
    } else {
        (init, None)
    };
    Ok(Fitted { split, kernel, trace })
}

fn evaluate(fitted: &Fitted, spec: &TestSpec) -> Result<TestResult> {
    let split = &fitted.split;
    let boot_seed = rng::derive_seed(spec.seed, 2);
    let null_draws = if spec.method.uses_wild_bootstrap() {
        let bundle = gram_bundle(&split.sx_test, &split.sy_test, &fitted.kernel)?;
        let cfg = WildBootstrapConfig {
            seed: boot_seed,
            ..spec.bootstrap
        };
        wild_bootstrap_null(&bundle, &cfg)?
    } else {
        permutation_null(&split.sx_test, &split.sy_test, &fitted.kernel, spec.bootstrap.n_perm, boot_seed)?
    };
    let p = p_value(&null_draws)?;
    if !null_draws.observed.is_finite() || null_draws.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite test statistic"));
    }
    Ok(TestResult {
        method: spec.method,
        statistic: null_draws.observed,
        p_value: p,
        reject: p < spec.alpha,
        null_draws,
        kernel: fitted.kernel,
        trace: fitted.trace.clone(),
        split: split.indices.clone(),
    })
}

/// Runs several specs on the same pair of samples. MMD-O and MMD-O+WB specs
/// that agree on seed and training settings share one trained kernel; the
/// results equal separate [`any_test`] calls.
pub fn run_tests(
    sx: &FeatureMatrix,
    sy: &FeatureMatrix,
    featurizer: &dyn Featurizer,
    specs: &[TestSpec],
) -> Result<Vec<TestResult>> {
    let raw = (Sample::raw(sx.clone()), Sample::raw(sy.clone()));
    let mut with_features = None;
    let mut gaussian_fits: Vec<(TestSpec, Fitted)> = Vec::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let result = match spec.method {
            Method::Sammd => {
                if with_features.is_none() {
                    with_features = Some((featurizer.sample(sx)?, featurizer.sample(sy)?));
                }
                let (a, b) = with_features.as_ref().unwrap();
                run_test(a, b, spec)?
            }
            Method::MmdO | Method::MmdOWb => {
                let shares = |s: &TestSpec| s.seed == spec.seed && s.train == spec.train;
                match gaussian_fits.iter().find(|(s, _)| shares(s)) {
                    Some((_, f)) => evaluate(f, spec)?,
                    None => {
                        let f = fit(&raw.0, &raw.1, spec)?;
                        let r = evaluate(&f, spec)?;
                        gaussian_fits.push((*spec, f));
                        r
                    }
                }
            }
            Method::MmdG => run_test(&raw.0, &raw.1, spec)?,
        };
        out.push(result);
    }
    Ok(out)
}

/// The SAMMD test with semantic features from `featurizer`.
pub fn sammd_test(sx: &FeatureMatrix, sy: &FeatureMatrix, featurizer: &dyn Featurizer, spec: &TestSpec) -> Result<TestResult> {
    if spec.method != Method::Sammd {
        return Err(Error::invalid("sammd_test requires method = sammd"));
    }
    run_test(&featurizer.sample(sx)?, &featurizer.sample(sy)?, spec)
}

/// MMD-G, MMD-O or MMD-O+WB on raw inputs.
pub fn baseline_test(sx: &FeatureMatrix, sy: &FeatureMatrix, spec: &TestSpec) -> Result<TestResult> {
    if spec.method == Method::Sammd {
        return Err(Error::invalid("baseline_test does not run sammd"));
    }
    run_test(&Sample::raw(sx.clone()), &Sample::raw(sy.clone()), spec)
}

/// Dispatches to [`sammd_test`] or [`baseline_test`].
pub fn any_test(sx: &FeatureMatrix, sy: &FeatureMatrix, featurizer: &dyn Featurizer, spec: &TestSpec) -> Result<TestResult> {
    match spec.method {
        Method::Sammd => sammd_test(sx, sy, featurizer, spec),
        _ => baseline_test(sx, sy, spec),
    }
}
