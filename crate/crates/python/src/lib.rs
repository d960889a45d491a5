//! Python bindings. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use sammd_core::io;
use sammd_core::pipeline::{self, Method, TestSpec};
use sammd_core::toymodels::{self, AttackConfig, AttackKind, ClassifierConfig, SyntheticKind};
use sammd_core::{estimators, kernels, resampling, rng, Error, FeatureMatrix, Featurizer, GaussianBandwidth, Kernel, Sample};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    FeatureMatrix::from_rows(&rows).map_err(to_py)
}

fn bandwidth(sigma: f64) -> PyResult<GaussianBandwidth> {
    GaussianBandwidth::from_sigma(sigma).map_err(to_py)
}

fn gaussian_bundle(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, sigma: f64) -> PyResult<kernels::GramBundle> {
    let k = Kernel::Gaussian(bandwidth(sigma)?);
    kernels::gram_bundle(&Sample::raw(matrix(x)?), &Sample::raw(matrix(y)?), &k).map_err(to_py)
}

#[pyfunction]
fn gaussian_kernel(x: Vec<f64>, y: Vec<f64>, sigma: f64) -> PyResult<f64> {
    kernels::gaussian_kernel(&x, &y, bandwidth(sigma)?).map_err(to_py)
}

/// Deep kernel on a raw pair `(x, y)` with feature pair `(fx, fy)`.
#[pyfunction]
#[pyo3(signature = (x, y, fx, fy, sigma_phi, sigma_q, eps0=0.5))]
fn deep_kernel(
    x: Vec<f64>,
    y: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    sigma_phi: f64,
    sigma_q: f64,
    eps0: f64,
) -> PyResult<f64> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(PyValueError::new_err("eps0 must lie in (0, 1)"));
    }
    let mut p = kernels::DeepKernelParams::new(bandwidth(sigma_phi)?, bandwidth(sigma_q)?);
    p.eps0_logit = (eps0 / (1.0 - eps0)).ln();
    kernels::deep_kernel(&x, &y, &fx, &fy, &p).map_err(to_py)
}

/// Median pooled pairwise distance (the bandwidth `sigma`).
#[pyfunction]
fn median_heuristic(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(kernels::median_heuristic(&matrix(x)?, &matrix(y)?).map_err(to_py)?.sigma())
}

#[pyfunction]
fn mmd_u_squared(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, sigma: f64) -> PyResult<f64> {
    let h = estimators::h_matrix(&gaussian_bundle(x, y, sigma)?).map_err(to_py)?;
    estimators::mmd_u_squared(&h).map_err(to_py)
}

#[pyfunction]
fn mmd_biased_squared(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, sigma: f64) -> PyResult<f64> {
    estimators::mmd_biased_squared(&gaussian_bundle(x, y, sigma)?).map_err(to_py)
}

/// `(mmd_sq, sigma_hat, j_hat)` for a Gaussian kernel.
#[pyfunction]
#[pyo3(signature = (x, y, sigma, lam=1e-8))]
fn j_hat(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, sigma: f64, lam: f64) -> PyResult<(f64, f64, f64)> {
    let k = Kernel::Gaussian(bandwidth(sigma)?);
    let v = estimators::j_hat(&Sample::raw(matrix(x)?), &Sample::raw(matrix(y)?), &k, lam).map_err(to_py)?;
    Ok((v.mmd_sq, v.sigma_hat, v.j_hat))
}

#[pyfunction]
fn hsic(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, sigma_x: f64, sigma_y: f64) -> PyResult<f64> {
    estimators::hsic(&matrix(x)?, &matrix(y)?, bandwidth(sigma_x)?, bandwidth(sigma_y)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (data, subset_size, repeats=20, seed=0))]
fn hsic_dependence_protocol(data: Vec<Vec<f64>>, subset_size: usize, repeats: usize, seed: u64) -> PyResult<f64> {
    estimators::hsic_dependence_protocol(&matrix(data)?, subset_size, repeats, seed).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n, l, seed=0))]
fn wild_weights(n: usize, l: f64, seed: u64) -> PyResult<Vec<f64>> {
    if !(l.is_finite() && l > 0.0) || n == 0 {
        return Err(PyValueError::new_err("need n >= 1 and l > 0"));
    }
    Ok(resampling::wild_weights(n, l, &mut rng::stream(seed, 0)))
}

#[pyclass(frozen, module = "sammd")]
struct TestResult {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    statistic: f64,
    #[pyo3(get)]
    p_value: f64,
    #[pyo3(get)]
    reject: bool,
    #[pyo3(get)]
    null_draws: Vec<f64>,
    /// Fitted kernel as JSON.
    #[pyo3(get)]
    kernel: String,
}

#[pymethods]
impl TestResult {
    fn __repr__(&self) -> String {
        format!(
            "TestResult(method={:?}, statistic={}, p_value={}, reject={})",
            self.method, self.statistic, self.p_value, self.reject
        )
    }
}

/// Trained one-hidden-layer classifier on 2-D-or-wider inputs.
#[pyclass(module = "sammd", skip_from_py_object)]
struct ToyClassifier {
    inner: toymodels::ToyClassifier,
}

#[pymethods]
impl ToyClassifier {
    #[staticmethod]
    #[pyo3(signature = (data, labels, hidden=16, epochs=50, lr=0.1, batch_size=32, seed=0))]
    fn train(
        data: Vec<Vec<f64>>,
        labels: Vec<usize>,
        hidden: usize,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ClassifierConfig {
            hidden,
            epochs,
            learning_rate: lr,
            batch_size,
            seed,
        };
        let inner = toymodels::train_toy_classifier(&matrix(data)?, &labels, &cfg).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn predict(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        data.iter().map(|r| self.inner.predict(r).map_err(to_py)).collect()
    }

    fn accuracy(&self, data: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        self.inner.accuracy(&matrix(data)?, &labels).map_err(to_py)
    }

    /// Semantic (hidden-layer) features.
    fn features(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.features(&matrix(data)?).map_err(to_py)?.to_rows())
    }

    /// FGSM or PGD attack of every row; bounds default to the data range.
    #[pyo3(signature = (data, labels, epsilon, kind="pgd"))]
    fn attack(&self, data: Vec<Vec<f64>>, labels: Vec<usize>, epsilon: f64, kind: &str) -> PyResult<Vec<Vec<f64>>> {
        let (kind, cfg) = match kind {
            "pgd" => (AttackKind::Pgd, AttackConfig::pgd(epsilon)),
            "fgsm" => (AttackKind::Fgsm, AttackConfig::fgsm(epsilon)),
            _ => return Err(PyValueError::new_err(format!("unknown attack {kind:?}"))),
        };
        let adv = toymodels::attack_batch(&self.inner, &matrix(data)?, &labels, kind, &cfg).map_err(to_py)?;
        Ok(adv.to_rows())
    }
}

/// Runs one two-sample test. With `method="sammd"`, features come from
/// `featurizer` when given, otherwise the raw inputs serve as features.
#[pyfunction]
#[pyo3(signature = (
    x, y, method="sammd", featurizer=None, alpha=0.05, seed=0, n_perm=200, l=0.2,
    lr=2e-4, iters=300, lam=1e-8
))]
#[allow(clippy::too_many_arguments)]
fn two_sample_test(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    method: &str,
    featurizer: Option<PyRef<'_, ToyClassifier>>,
    alpha: f64,
    seed: u64,
    n_perm: usize,
    l: f64,
    lr: f64,
    iters: usize,
    lam: f64,
) -> PyResult<TestResult> {
    let method: Method = method.parse().map_err(to_py)?;
    let mut spec = TestSpec::new(method).with_seed(seed);
    spec.alpha = alpha;
    spec.bootstrap.n_perm = n_perm;
    spec.bootstrap.l = l;
    spec.train.learning_rate = lr;
    spec.train.max_iters = iters;
    spec.train.lambda = lam;
    let (x, y) = (matrix(x)?, matrix(y)?);
    let featurizer = featurizer.map(|f| f.inner.clone());
    let result = py
        .detach(|| match &featurizer {
            Some(f) => pipeline::any_test(&x, &y, f, &spec),
            None => pipeline::any_test(&x, &y, &kernels::IdentityFeaturizer, &spec),
        })
        .map_err(to_py)?;
    Ok(TestResult {
        method: result.method.to_string(),
        statistic: result.statistic,
        p_value: result.p_value,
        reject: result.reject,
        null_draws: result.null_draws.values,
        kernel: serde_json::to_string(&result.kernel).map_err(|e| PyValueError::new_err(e.to_string()))?,
    })
}

/// `(rows, labels)` from equal-weight Gaussian blobs.
#[pyfunction]
#[pyo3(signature = (centers, std, n, seed=0))]
fn gen_blobs(centers: Vec<Vec<f64>>, std: f64, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let (m, labels) = toymodels::gen_synthetic(&SyntheticKind::Blobs { centers, std }, n, seed).map_err(to_py)?;
    Ok((m.to_rows(), labels))
}

#[pyfunction]
#[pyo3(signature = (n, l, dim=2, seed=0))]
fn gen_dependent_h0(n: usize, l: f64, dim: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let base = SyntheticKind::standard_gaussian(dim);
    Ok(toymodels::gen_dependent_h0(n, l, &base, seed).map_err(to_py)?.to_rows())
}

#[pyfunction]
fn read_samf(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(io::read_samf(path).map_err(to_py)?.to_rows())
}

#[pyfunction]
fn write_samf(path: &str, rows: Vec<Vec<f64>>) -> PyResult<()> {
    io::write_samf(path, &matrix(rows)?).map_err(to_py)
}

#[pyfunction]
fn read_csv(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(io::read_csv(path).map_err(to_py)?.to_rows())
}

#[pymodule]
fn sammd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TestResult>()?;
    m.add_class::<ToyClassifier>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(deep_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(median_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_u_squared, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_biased_squared, m)?)?;
    m.add_function(wrap_pyfunction!(j_hat, m)?)?;
    m.add_function(wrap_pyfunction!(hsic, m)?)?;
    m.add_function(wrap_pyfunction!(hsic_dependence_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(wild_weights, m)?)?;
    m.add_function(wrap_pyfunction!(two_sample_test, m)?)?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dependent_h0, m)?)?;
    m.add_function(wrap_pyfunction!(read_samf, m)?)?;
    m.add_function(wrap_pyfunction!(write_samf, m)?)?;
    m.add_function(wrap_pyfunction!(read_csv, m)?)?;
    m.add("DEFAULT_ALPHA", pipeline::DEFAULT_ALPHA)?;
    Ok(())
}
