//! Python bindings: `import co3py`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use co3::distfit::{self, FamilyParams};
use co3::entropy::{level_probabilities, Codebook, Frame};
use co3::fedsim::{self, ExperimentConfig, Parallelism, RunOptions};
use co3::fpquant::{self, grid_levels, Quantizer};
use co3::{theory, Error};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Generalized normal distribution with location `mu`, scale `alpha` and shape `beta`.
#[pyclass(name = "GenNorm", module = "co3py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGenNorm(co3::GenNormParams);

#[pymethods]
impl PyGenNorm {
    #[new]
    fn new(mu: f64, alpha: f64, beta: f64) -> PyResult<Self> {
        co3::GenNormParams::new(mu, alpha, beta).map(Self).map_err(err)
    }

    /// Kurtosis-matching fit.
    #[staticmethod]
    fn fit(samples: Vec<f64>) -> PyResult<Self> {
        distfit::fit_gennorm(&samples).map(Self).map_err(err)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    fn pdf(&self, x: f64) -> f64 {
        self.0.pdf(x)
    }
    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }
    fn quantile(&self, q: f64) -> PyResult<f64> {
        self.0.quantile(q).map_err(err)
    }
    fn variance(&self) -> f64 {
        self.0.variance()
    }
    fn std_dev(&self) -> f64 {
        self.0.std_dev()
    }
    fn excess_kurtosis(&self) -> f64 {
        self.0.excess_kurtosis()
    }
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.0.sample(n, seed)
    }

    fn __repr__(&self) -> String {
        format!("GenNorm(mu={}, alpha={}, beta={})", self.0.mu, self.0.alpha, self.0.beta)
    }
}

/// A scaled minifloat grid: `FpFormat(exp_bits, mant_bits, scale=1.0)`.
#[pyclass(name = "FpFormat", module = "co3py", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyFpFormat(co3::FpFormat);

#[pymethods]
impl PyFpFormat {
    #[new]
    #[pyo3(signature = (exp_bits, mant_bits, scale=1.0))]
    fn new(exp_bits: u8, mant_bits: u8, scale: f64) -> PyResult<Self> {
        co3::FpFormat::new(exp_bits, mant_bits).and_then(|f| f.with_scale(scale)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn fp4() -> Self {
        Self(co3::FpFormat::FP4)
    }
    #[staticmethod]
    fn fp8() -> Self {
        Self(co3::FpFormat::FP8)
    }

    #[getter]
    fn exp_bits(&self) -> u8 {
        self.0.exp_bits()
    }
    #[getter]
    fn mant_bits(&self) -> u8 {
        self.0.mant_bits()
    }
    #[getter]
    fn scale(&self) -> f64 {
        self.0.scale()
    }
    #[getter]
    fn gain(&self) -> f64 {
        self.0.gain()
    }
    #[getter]
    fn max_level(&self) -> f64 {
        self.0.max_level()
    }

    fn with_gain(&self, gain: f64) -> PyResult<Self> {
        self.0.with_gain(gain).map(Self).map_err(err)
    }
    fn with_scale(&self, scale: f64) -> PyResult<Self> {
        self.0.with_scale(scale).map(Self).map_err(err)
    }
    fn with_theory_scale(&self, smoothness: f64) -> PyResult<Self> {
        self.0.with_theory_scale(smoothness).map(Self).map_err(err)
    }

    /// Every representable value, ascending.
    fn levels(&self) -> Vec<f64> {
        grid_levels(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("FpFormat(exp_bits={}, mant_bits={}, scale={})", self.0.exp_bits(), self.0.mant_bits(), self.0.scale())
    }
}

/// Error-feedback memory for one user.
#[pyclass(name = "FeedbackState", module = "co3py")]
struct PyFeedbackState(co3::FeedbackState);

#[pymethods]
impl PyFeedbackState {
    #[new]
    #[pyo3(signature = (dim, gamma=co3::feedback::DEFAULT_GAMMA))]
    fn new(dim: usize, gamma: f64) -> PyResult<Self> {
        co3::FeedbackState::new(dim, gamma).map(Self).map_err(err)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }
    #[getter]
    fn memory(&self) -> Vec<f64> {
        self.0.memory().to_vec()
    }

    /// `g + γ·m`.
    fn preprocess(&self, g: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.preprocess(&g).map_err(err)
    }
    /// `m ← γ·m + g − ĝ`.
    fn update(&mut self, g: Vec<f64>, g_hat: Vec<f64>) -> PyResult<()> {
        self.0.update(&g, &g_hat).map_err(err)
    }
    fn reset(&mut self) {
        self.0.reset()
    }
}

/// Symbol indices of the nearest grid levels.
#[pyfunction]
fn quantize(values: Vec<f64>, format: PyFpFormat) -> PyResult<Vec<u32>> {
    fpquant::quantize(&values, &format.0).map(|b| b.symbols).map_err(err)
}

#[pyfunction]
fn dequantize(symbols: Vec<u32>, format: PyFpFormat) -> PyResult<Vec<f64>> {
    let q = Quantizer::new(format.0);
    symbols.into_iter().map(|s| q.value_of(s)).collect::<co3::Result<_>>().map_err(err)
}

/// Grid gain from the fitted polynomial in the shape.
#[pyfunction]
fn bias_polynomial(beta: f64, sigma: f64, format: PyFpFormat) -> PyResult<f64> {
    fpquant::bias_polynomial(beta, sigma, &format.0).map_err(err)
}

/// Grid gain minimizing the Monte-Carlo squared error.
#[pyfunction]
#[pyo3(signature = (model, format, n_samples=100_000, seed=0))]
fn optimal_bias_mc(py: Python<'_>, model: PyGenNorm, format: PyFpFormat, n_samples: usize, seed: u64) -> PyResult<f64> {
    py.detach(|| fpquant::optimal_bias_mc(&model.0, &format.0, n_samples, seed)).map_err(err)
}

/// Quantizes `values` and entropy-codes them under `model`; returns the frame bytes.
#[pyfunction]
fn encode_frame<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    format: PyFpFormat,
    model: PyGenNorm,
) -> PyResult<Bound<'py, PyBytes>> {
    let block = Quantizer::new(format.0).quantize(&values).map_err(err)?;
    let codebook = Codebook::new(format.0, model.0).map_err(err)?;
    let frame = Frame::encode(&block, &codebook).map_err(err)?;
    Ok(PyBytes::new(py, &frame.to_bytes()))
}

/// Parses a frame and returns `(values, format, model)`.
#[pyfunction]
fn decode_frame(bytes: &[u8]) -> PyResult<(Vec<f64>, PyFpFormat, PyGenNorm)> {
    let frame = Frame::from_bytes(bytes).map_err(err)?;
    let values = Quantizer::new(frame.format).dequantize(&frame.decode().map_err(err)?).map_err(err)?;
    Ok((values, PyFpFormat(frame.format), PyGenNorm(frame.model)))
}

/// Model probabilities of every grid level, in symbol order.
#[pyfunction]
fn level_pmf(model: PyGenNorm, format: PyFpFormat) -> PyResult<Vec<f64>> {
    level_probabilities(&model.0, &format.0).map(|p| p.probs).map_err(err)
}

/// Fits all four comparison families; each entry holds `family`, `w2`,
/// `params` and `best`.
#[pyfunction]
fn fit_families<'py>(py: Python<'py>, samples: Vec<f64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let fits = distfit::fit_all_families(&samples).map_err(err)?;
    let best = distfit::best_fit(&fits).map(|f| f.family);
    fits.iter()
        .map(|f| {
            let d = PyDict::new(py);
            d.set_item("family", f.family.name())?;
            d.set_item("w2", f.w2_distance)?;
            d.set_item("best", Some(f.family) == best)?;
            let p = PyDict::new(py);
            match f.params {
                FamilyParams::GenNorm(g) => {
                    p.set_item("mu", g.mu)?;
                    p.set_item("alpha", g.alpha)?;
                    p.set_item("beta", g.beta)?;
                }
                FamilyParams::Normal { mean, std_dev } => {
                    p.set_item("mean", mean)?;
                    p.set_item("std_dev", std_dev)?;
                }
                FamilyParams::Laplace { loc, scale } => {
                    p.set_item("loc", loc)?;
                    p.set_item("scale", scale)?;
                }
                FamilyParams::DoubleWeibull { loc, scale, shape } => {
                    p.set_item("loc", loc)?;
                    p.set_item("scale", scale)?;
                    p.set_item("shape", shape)?;
                }
            }
            d.set_item("params", p)?;
            Ok(d)
        })
        .collect()
}

/// Runs every scheme of a TOML experiment config. Returns one dict per
/// scheme with its CSV text and bit totals. `threads=0` runs on one thread.
#[pyfunction]
#[pyo3(signature = (config, seed=None, threads=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut config = ExperimentConfig::from_toml_str(config).map_err(err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let parallelism = match threads {
        None => Parallelism::Default,
        Some(0) => Parallelism::Sequential,
        Some(n) => Parallelism::Threads(n),
    };
    let options = RunOptions { parallelism, ..RunOptions::default() };
    let outputs = py
        .detach(|| {
            config.runs().iter().map(|sim| fedsim::run_experiment(sim, options)).collect::<co3::Result<Vec<_>>>()
        })
        .map_err(err)?;
    outputs
        .iter()
        .map(|o| {
            let d = PyDict::new(py);
            d.set_item("label", &o.label)?;
            d.set_item("csv", o.csv())?;
            d.set_item("payload_bits", o.ledger.payload_bits())?;
            d.set_item("header_bits", o.ledger.header_bits())?;
            d.set_item("total_bits", o.ledger.total_bits())?;
            d.set_item("final_loss", o.records.last().map(|r| r.loss))?;
            d.set_item("final_gap", o.final_gap())?;
            d.set_item("final_model", o.final_model.clone())?;
            Ok(d)
        })
        .collect()
}

/// Monte-Carlo error moments against the bound for each shape. Returns
/// `(passed, report_text)`.
#[pyfunction]
#[pyo3(signature = (format, betas, n=1_000_000, seed=0))]
fn verify_lemma1(py: Python<'_>, format: PyFpFormat, betas: Vec<f64>, n: usize, seed: u64) -> PyResult<(bool, String)> {
    let report = py.detach(|| theory::verify_lemma1(format.0, &betas, n, seed)).map_err(err)?;
    Ok((report.passed(), report.text()))
}

/// Convergence check on the default two-dimensional quadratic. Returns
/// `(satisfied, csv)` with columns `T,empirical_gap,bound`.
#[pyfunction]
#[pyo3(signature = (horizons, repeats=50, seed=0))]
fn verify_convergence(py: Python<'_>, horizons: Vec<usize>, repeats: usize, seed: u64) -> PyResult<(bool, String)> {
    let setup = theory::ConvergenceSetup { repeats, seed, ..Default::default() };
    let report = py.detach(|| theory::verify_convergence(&setup, &horizons)).map_err(err)?;
    Ok((report.satisfied(), report.csv()))
}

/// Reads newline-delimited reals from a file.
#[pyfunction]
fn read_samples(path: &str) -> PyResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| PyValueError::new_err(format!("not a number: `{l}`"))))
        .collect()
}

#[pymodule]
fn co3py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenNorm>()?;
    m.add_class::<PyFpFormat>()?;
    m.add_class::<PyFeedbackState>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(bias_polynomial, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_bias_mc, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(level_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_families, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify_lemma1, m)?)?;
    m.add_function(wrap_pyfunction!(verify_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(read_samples, m)?)?;
    Ok(())
}
