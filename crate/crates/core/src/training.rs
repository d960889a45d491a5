//! Kernel training: gradient ascent on the test-power criterion
//! `J = MMD_u^2 / sigma_hat` over the unconstrained kernel parameters.
//!
//! The featurizer is frozen; only `eps0`, `sigma_phi` and `sigma_q` (or the
//! single Gaussian bandwidth) move. Gradients are analytic.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{check_lambda, CriterionValue, DEFAULT_LAMBDA};
use crate::kernels::{Kernel, Sample};
use crate::matrix::{squared_distance, FeatureMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub minibatch_size: usize,
    pub lambda: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            max_iters: 300,
            minibatch_size: 64,
            lambda: DEFAULT_LAMBDA,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            split_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split fraction must lie in (0, 1)"));
        }
        if self.minibatch_size < 2 {
            return Err(Error::invalid("minibatch size must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        check_lambda(self.lambda)
    }
}

/// Per-iteration criterion values and the final kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub iters: Vec<(usize, f64)>,
    pub final_kernel: Kernel,
    /// Set when training stopped early on a non-finite criterion or gradient.
    pub diverged: bool,
}

/// Row indices of a train/test split for both samples, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub x_train: Vec<usize>,
    pub x_test: Vec<usize>,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub sx_train: Sample,
    pub sx_test: Sample,
    pub sy_train: Sample,
    pub sy_test: Sample,
    pub indices: SplitIndices,
}

/// Train-side size: `fraction * n` rounded half up.
pub fn train_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

fn partition<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(n, fraction);
    if n_train < 2 || n - n_train.min(n) < 2 {
        return Err(Error::invalid(format!(
            "cannot split {n} rows at fraction {fraction}: each side needs at least 2 rows"
        )));
    }
    let mut train = index::sample(rng, n, n_train).into_vec();
    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// Uniform random disjoint train/test split of both samples.
///
/// Selected rows keep their original relative order, so sequential dependence
/// inside a sample survives into each half. Equal-size samples share one
/// index draw.
pub fn split_data<R: Rng + ?Sized>(sx: &Sample, sy: &Sample, fraction: f64, rng: &mut R) -> Result<DataSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0, 1)"));
    }
    let (x_train, x_test) = partition(sx.len(), fraction, rng)?;
    let (y_train, y_test) = if sy.len() == sx.len() {
        (x_train.clone(), x_test.clone())
    } else {
        partition(sy.len(), fraction, rng)?
    };
    Ok(DataSplit {
        sx_train: sx.select(&x_train)?,
        sx_test: sx.select(&x_test)?,
        sy_train: sy.select(&y_train)?,
        sy_test: sy.select(&y_test)?,
        indices: SplitIndices {
            x_train,
            x_test,
            y_train,
            y_test,
        },
    })
}

/// Squared distances of one block, raw and (optionally) feature space.
#[derive(Debug, Clone)]
struct BlockDistances {
    rows: usize,
    cols: usize,
    raw: Vec<f64>,
    feat: Vec<f64>,
}

impl BlockDistances {
    fn between(a: &Sample, b: &Sample, with_features: bool) -> Result<Self> {
        let feats = if with_features {
            match (&a.features, &b.features) {
                (Some(fa), Some(fb)) => Some((fa, fb)),
                _ => return Err(Error::invalid("deep kernel requires semantic features")),
            }
        } else {
            None
        };
        let block = |ma: &FeatureMatrix, mb: &FeatureMatrix| -> Vec<f64> {
            ma.iter_rows()
                .flat_map(|ra| mb.iter_rows().map(move |rb| squared_distance(ra, rb)))
                .collect()
        };
        let raw = block(&a.raw, &b.raw);
        let feat = match feats {
            Some((fa, fb)) => block(fa, fb),
            None => vec![0.0; raw.len()],
        };
        Ok(Self {
            rows: a.len(),
            cols: b.len(),
            raw,
            feat,
        })
    }

    fn gather(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut raw = Vec::with_capacity(rows.len() * cols.len());
        let mut feat = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                raw.push(self.raw[i * self.cols + j]);
                feat.push(self.feat[i * self.cols + j]);
            }
        }
        Self {
            rows: rows.len(),
            cols: cols.len(),
            raw,
            feat,
        }
    }
}

/// Kernel values and parameter gradients for one block (`grad` is
/// entry-major with `p` values per entry).
fn block_kernel(d: &BlockDistances, kernel: &Kernel, p: usize, symmetric: bool) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (d.rows, d.cols);
    let mut k = vec![0.0; rows * cols];
    let mut g = vec![0.0; rows * cols * p];
    let mut buf = [0.0; 3];
    for i in 0..rows {
        let start = if symmetric { i } else { 0 };
        for j in start..cols {
            let e = i * cols + j;
            let v = kernel.eval_sq_grad(d.raw[e], d.feat[e], &mut buf[..p]);
            k[e] = v;
            g[e * p..(e + 1) * p].copy_from_slice(&buf[..p]);
            if symmetric && j != i {
                let t = j * cols + i;
                k[t] = v;
                g[t * p..(t + 1) * p].copy_from_slice(&buf[..p]);
            }
        }
    }
    (k, g)
}

fn criterion_from_distances(
    xx: &BlockDistances,
    yy: &BlockDistances,
    xy: &BlockDistances,
    kernel: &Kernel,
    lambda: f64,
) -> Result<(CriterionValue, Vec<f64>)> {
    let n = xx.rows;
    if n != yy.rows {
        return Err(Error::UnequalSample { n, m: yy.rows });
    }
    if n < 2 {
        return Err(Error::invalid("criterion needs n >= 2"));
    }
    let p = kernel.n_params();
    let (kxx, gxx) = block_kernel(xx, kernel, p, true);
    let (kyy, gyy) = block_kernel(yy, kernel, p, true);
    let (kxy, gxy) = block_kernel(xy, kernel, p, false);

    let mut row_sum = vec![0.0; n];
    let mut row_grad = vec![0.0; n * p];
    let mut trace = 0.0;
    let mut trace_grad = vec![0.0; p];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (i * n + j, j * n + i);
            let h = kxx[a] + kyy[a] - kxy[a] - kxy[b];
            row_sum[i] += h;
            for q in 0..p {
                let dh = gxx[a * p + q] + gyy[a * p + q] - gxy[a * p + q] - gxy[b * p + q];
                row_grad[i * p + q] += dh;
                if i == j {
                    trace_grad[q] += dh;
                }
            }
            if i == j {
                trace += h;
            }
        }
    }
    let nf = n as f64;
    let total: f64 = row_sum.iter().sum();
    let mut total_grad = vec![0.0; p];
    for i in 0..n {
        for q in 0..p {
            total_grad[q] += row_grad[i * p + q];
        }
    }
    let norm = nf * (nf - 1.0);
    let mmd_sq = (total - trace) / norm;
    let sum_sq: f64 = row_sum.iter().map(|r| r * r).sum();
    let var_raw = 4.0 / nf.powi(3) * sum_sq - 4.0 / nf.powi(4) * total * total;
    let var = (var_raw + lambda).max(lambda);
    let sigma = var.sqrt();
    let j_hat = mmd_sq / sigma;

    let mut grad = vec![0.0; p];
    for q in 0..p {
        let dmmd = (total_grad[q] - trace_grad[q]) / norm;
        let dvar = if var_raw > 0.0 {
            let cross: f64 = (0..n).map(|i| row_sum[i] * row_grad[i * p + q]).sum();
            8.0 / nf.powi(3) * cross - 8.0 / nf.powi(4) * total * total_grad[q]
        } else {
            0.0
        };
        grad[q] = dmmd / sigma - mmd_sq * dvar / (2.0 * var * sigma);
    }
    if !j_hat.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite criterion or gradient"));
    }
    Ok((
        CriterionValue {
            mmd_sq,
            sigma_hat: sigma,
            j_hat,
        },
        grad,
    ))
}

/// Criterion value and its analytic gradient with respect to
/// [`Kernel::params`].
pub fn grad_j_hat(sx: &Sample, sy: &Sample, kernel: &Kernel, lambda: f64) -> Result<(CriterionValue, Vec<f64>)> {
    check_lambda(lambda)?;
    if sx.len() != sy.len() {
        return Err(Error::UnequalSample {
            n: sx.len(),
            m: sy.len(),
        });
    }
    let feats = kernel.needs_features();
    let xx = BlockDistances::between(sx, sx, feats)?;
    let yy = BlockDistances::between(sy, sy, feats)?;
    let xy = BlockDistances::between(sx, sy, feats)?;
    criterion_from_distances(&xx, &yy, &xy, kernel, lambda)
}

/// Adam optimizer state, used here for ascent.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(p: usize) -> Self {
        Self {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }

    fn ascend(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let c2 = 1.0 - cfg.adam_beta2.powi(self.t);
        for (q, g) in grad.iter().enumerate() {
            self.m[q] = cfg.adam_beta1 * self.m[q] + (1.0 - cfg.adam_beta1) * g;
            self.v[q] = cfg.adam_beta2 * self.v[q] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = self.m[q] / c1;
            let v_hat = self.v[q] / c2;
            theta[q] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Maximizes the criterion over the kernel parameters with minibatch Adam.
///
/// Each step draws `minibatch_size` rows without replacement from each
/// training sample independently. Training stops early, keeping the last
/// finite parameters, if the criterion or its gradient stops being finite.
pub fn train_kernel(sx_tr: &Sample, sy_tr: &Sample, init: &Kernel, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let b = cfg.minibatch_size;
    if sx_tr.len() < b || sy_tr.len() < b {
        return Err(Error::invalid(format!(
            "training sets ({} and {} rows) smaller than minibatch size {b}",
            sx_tr.len(),
            sy_tr.len()
        )));
    }
    let mut trace = TrainTrace {
        iters: Vec::with_capacity(cfg.max_iters),
        final_kernel: *init,
        diverged: false,
    };
    if cfg.max_iters == 0 {
        return Ok(trace);
    }
    let feats = init.needs_features();
    let xx = BlockDistances::between(sx_tr, sx_tr, feats)?;
    let yy = BlockDistances::between(sy_tr, sy_tr, feats)?;
    let xy = BlockDistances::between(sx_tr, sy_tr, feats)?;

    let mut rng = rng::stream(cfg.seed, 0);
    let mut theta = init.params();
    let mut adam = Adam::new(theta.len());
    for t in 0..cfg.max_iters {
        let ix = index::sample(&mut rng, sx_tr.len(), b).into_vec();
        let iy = index::sample(&mut rng, sy_tr.len(), b).into_vec();
        let kernel = init.with_params(&theta);
        let step = criterion_from_distances(
            &xx.gather(&ix, &ix),
            &yy.gather(&iy, &iy),
            &xy.gather(&ix, &iy),
            &kernel,
            cfg.lambda,
        );
        let (crit, grad) = match step {
            Ok(v) => v,
            Err(Error::Numerical(_)) => {
                trace.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        trace.iters.push((t, crit.j_hat));
        let mut next = theta.clone();
        adam.ascend(&mut next, &grad, cfg);
        if next.iter().any(|v| !v.is_finite()) {
            trace.diverged = true;
            break;
        }
        theta = next;
    }
    trace.final_kernel = init.with_params(&theta);
    Ok(trace)
}
