use serde::{Deserialize, Serialize};

use crate::pipeline::{Method, TestResult, TestSpec};

/// Effective parameters of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParameters {
    pub alpha: f64,
    pub n_perm: usize,
    pub l: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub minibatch_size: usize,
    pub lambda: f64,
    pub split_fraction: f64,
    pub features: String,
    pub x_rows: usize,
    pub y_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub n: usize,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Machine-readable outcome of one CLI test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub parameters: RunParameters,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub null_draws: NullSummary,
    pub seed: u64,
    pub kernel: crate::kernels::Kernel,
    pub diverged: bool,
    /// Only filled on request; it would make reports non-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    pub fn new(result: &TestResult, spec: &TestSpec, features: &str, x_rows: usize, y_rows: usize) -> Self {
        let d = &result.null_draws;
        Self {
            method: result.method,
            parameters: RunParameters {
                alpha: spec.alpha,
                n_perm: spec.bootstrap.n_perm,
                l: spec.bootstrap.l,
                learning_rate: spec.train.learning_rate,
                max_iters: spec.train.max_iters,
                minibatch_size: spec.train.minibatch_size,
                lambda: spec.train.lambda,
                split_fraction: spec.train.split_fraction,
                features: features.to_string(),
                x_rows,
                y_rows,
            },
            statistic: result.statistic,
            p_value: result.p_value,
            reject: result.reject,
            null_draws: NullSummary {
                n: d.values.len(),
                q05: d.quantile(0.05),
                q50: d.quantile(0.5),
                q95: d.quantile(0.95),
            },
            seed: spec.seed,
            kernel: result.kernel,
            diverged: result.trace.as_ref().is_some_and(|t| t.diverged),
            wall_clock_seconds: None,
        }
    }
}
