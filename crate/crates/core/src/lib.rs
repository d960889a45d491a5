//! Semantic-aware MMD two-sample testing for adversarial-data detection.
//!
//! Samples are [`FeatureMatrix`] values (rows are points). A test splits both
//! samples, trains a kernel on one half by maximizing the regularized
//! test-power criterion, and tests the other half against a wild-bootstrap
//! or permutation null. See [`pipeline`] for the end-to-end entry points.

pub mod error;
pub mod estimators;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod pipeline;
pub mod resampling;
pub mod rng;
pub mod toymodels;
pub mod training;

pub use error::{Error, Result};
pub use estimators::{
    h_matrix, hsic, hsic_dependence_protocol, j_hat, mmd_biased_squared, mmd_u_squared, sigma_h1_hat_sq,
    CriterionValue, HMatrix, DEFAULT_LAMBDA,
};
pub use kernels::{
    cross_gram, deep_kernel, gaussian_kernel, gram_bundle, median_heuristic, DeepKernelParams, Featurizer,
    GaussianBandwidth, Gram, GramBundle, IdentityFeaturizer, Kernel, Sample,
};
pub use matrix::FeatureMatrix;
pub use pipeline::{any_test, baseline_test, run_test, sammd_test, Method, TestResult, TestSpec, DEFAULT_ALPHA};
pub use resampling::{
    center_weights, p_value, permutation_null, wild_bootstrap_null, wild_statistic, wild_weights, NullDraws,
    WildBootstrapConfig,
};
pub use training::{grad_j_hat, split_data, train_kernel, DataSplit, SplitIndices, TrainConfig, TrainTrace};
