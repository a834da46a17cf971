//! Python bindings: NLG law, fitted mixtures, Poisson models, the samplers
//! and the grid oracle.

use auxmix::mixture::{components_for_shape, fit_mixture, FitConfig, GaussianMixture, MixtureBank};
use auxmix::model::{PoissonLgm, RandomEffectBlock, Sigma2Prior};
use auxmix::nlg::{self, NlgShape};
use auxmix::sampler::{run_chains, Algorithm, ChainOutput, SamplerConfig};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: auxmix::Error) -> PyErr {
    match e {
        auxmix::Error::Numerical(_) | auxmix::Error::Fit(_) | auxmix::Error::Io(_) | auxmix::Error::Cache(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn shape(nu: f64) -> PyResult<NlgShape> {
    NlgShape::new(nu).map_err(err)
}

/// Log density of NLG(nu, 1) at `u`.
#[pyfunction]
fn nlg_log_density(u: f64, nu: f64) -> PyResult<f64> {
    nlg::log_density(u, shape(nu)?).map_err(err)
}

#[pyfunction]
fn nlg_cdf(u: f64, nu: f64) -> PyResult<f64> {
    Ok(nlg::cdf(u, shape(nu)?))
}

/// `n` seeded NLG(nu, 1) draws.
#[pyfunction]
#[pyo3(signature = (nu, n, seed=1))]
fn nlg_sample(nu: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let s = shape(nu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| nlg::sample(s, &mut rng)).collect())
}

#[pyclass(name = "Mixture", frozen)]
struct PyMixture {
    inner: GaussianMixture,
    kl: f64,
    central_error: f64,
}

#[pymethods]
impl PyMixture {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.components().iter().map(|c| c.weight).collect()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.inner.components().iter().map(|c| c.mean).collect()
    }

    #[getter]
    fn variances(&self) -> Vec<f64> {
        self.inner.components().iter().map(|c| c.variance).collect()
    }

    #[getter]
    fn nu(&self) -> f64 {
        self.inner.target().nu()
    }

    #[getter]
    fn kl(&self) -> f64 {
        self.kl
    }

    #[getter]
    fn central_error(&self) -> f64 {
        self.central_error
    }

    fn log_density(&self, z: f64) -> f64 {
        self.inner.ln_pdf(z)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Mixture(nu={}, components={})", self.nu(), self.inner.len())
    }
}

/// Fits a K-component mixture to NLG(nu, 1); K defaults to the bank's choice.
#[pyfunction]
#[pyo3(signature = (nu, components=None))]
fn fit(py: Python<'_>, nu: f64, components: Option<usize>) -> PyResult<PyMixture> {
    let s = shape(nu)?;
    let k = components.unwrap_or_else(|| components_for_shape(s));
    let f = py.detach(|| fit_mixture(s, k, &FitConfig::default())).map_err(err)?;
    Ok(PyMixture { inner: f.mixture, kl: f.report.kl, central_error: f.report.central_error })
}

#[pyclass(name = "PoissonModel", frozen)]
struct PyModel {
    inner: PoissonLgm,
}

#[pymethods]
impl PyModel {
    /// `x` is a list of rows. `groups` adds one iid random-effect block whose
    /// variance has an inverse-gamma prior.
    #[new]
    #[pyo3(signature = (y, x, offset=None, groups=None, beta_variance=1000.0, prior_shape=1.0, prior_scale=0.001))]
    fn new(
        y: Vec<u64>,
        x: Vec<Vec<f64>>,
        offset: Option<Vec<f64>>,
        groups: Option<Vec<usize>>,
        beta_variance: f64,
        prior_shape: f64,
        prior_scale: f64,
    ) -> PyResult<Self> {
        let p = x.first().map_or(0, Vec::len);
        if x.len() != y.len() || x.iter().any(|r| r.len() != p) {
            return Err(PyValueError::new_err("x must be a rectangular list of rows, one per count"));
        }
        let design = DMatrix::from_fn(x.len(), p, |i, j| x[i][j]);
        let mut blocks = Vec::new();
        if let Some(g) = groups {
            let levels = g.iter().max().map_or(0, |m| m + 1);
            let prior = Sigma2Prior::InverseGamma { shape: prior_shape, scale: prior_scale };
            blocks.push(RandomEffectBlock::from_groups(&g, levels, prior).map_err(err)?);
        }
        let v0 = DMatrix::identity(p, p) * beta_variance;
        PoissonLgm::new(y, offset, design, blocks, Some(v0)).map(|inner| PyModel { inner }).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (y, beta_variance=1000.0))]
    fn intercept_only(y: Vec<u64>, beta_variance: f64) -> PyResult<Self> {
        PoissonLgm::intercept_only(y, beta_variance).map(|inner| PyModel { inner }).map_err(err)
    }

    #[getter]
    fn parameter_names(&self) -> Vec<String> {
        self.inner.parameter_names()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// Posterior mean and sd of each coefficient from a grid (one or two
    /// coefficients, no random effects).
    #[pyo3(signature = (resolution=None))]
    fn grid_posterior(&self, py: Python<'_>, resolution: Option<usize>) -> PyResult<Vec<(f64, f64)>> {
        let m = &self.inner;
        let grids = py
            .detach(|| match (m.p(), m.blocks().is_empty()) {
                (1, true) => auxmix::oracle::grid_posterior_1d(m, 0.0, m.v0()[(0, 0)], resolution.unwrap_or(20_001)).map(|g| vec![g]),
                (2, true) => auxmix::oracle::grid_posterior_2d(m, resolution.unwrap_or(400)).map(Vec::from),
                _ => Err(auxmix::Error::Usage("grid oracle needs one or two coefficients and no random effects".into())),
            })
            .map_err(err)?;
        Ok(grids.iter().map(|g| (g.mean(), g.sd())).collect())
    }
}

#[pyclass(name = "Chain", frozen)]
struct PyChain {
    inner: ChainOutput,
}

#[pymethods]
impl PyChain {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names.clone()
    }

    /// Kept draws as a list of rows.
    #[getter]
    fn draws(&self) -> Vec<Vec<f64>> {
        (0..self.inner.rows).map(|r| self.inner.row(r).to_vec()).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner.column_by_name(name).ok_or_else(|| PyValueError::new_err(format!("no parameter {name:?}")))
    }

    #[getter]
    fn chain(&self) -> u64 {
        self.inner.chain
    }

    #[getter]
    fn algorithm(&self) -> &'static str {
        self.inner.used.name()
    }

    /// Acceptance rate per MH block, keyed by block name.
    #[getter]
    fn acceptance(&self) -> Vec<(String, f64)> {
        self.inner.acceptance.iter().chain(&self.inner.sigma2_acceptance).map(|a| (a.block.clone(), a.rate())).collect()
    }

    /// `(observation, slot)` rows moved to the tail-adjusted mixture.
    #[getter]
    fn flagged(&self) -> Vec<(usize, usize)> {
        self.inner.flagged.clone()
    }

    #[getter]
    fn seconds_per_iteration(&self) -> f64 {
        self.inner.timings.per_iteration()
    }

    fn __len__(&self) -> usize {
        self.inner.rows
    }
}

/// Runs `chains` independent chains; chain `c` uses stream `c` of `seed`.
#[pyfunction]
#[pyo3(signature = (model, algorithm="auto", iterations=2000, burn_in=1000, thinning=1, seed=1, chains=1, workers=1))]
#[allow(clippy::too_many_arguments)]
fn sample(
    py: Python<'_>,
    model: &PyModel,
    algorithm: &str,
    iterations: usize,
    burn_in: usize,
    thinning: usize,
    seed: u64,
    chains: usize,
    workers: usize,
) -> PyResult<Vec<PyChain>> {
    let algorithm: Algorithm = algorithm.parse().map_err(err)?;
    let cfg = SamplerConfig { algorithm, iterations, burn_in, thinning, seed, ..Default::default() };
    let out = py.detach(|| run_chains(&cfg, &model.inner, MixtureBank::shared(), chains, workers)).map_err(err)?;
    Ok(out.into_iter().map(|inner| PyChain { inner }).collect())
}

/// Omitted-covariate toy data as `(y, x1, x2)`.
#[pyfunction]
fn simulate_toy(n: usize, c: f64, seed: u64) -> PyResult<(Vec<u64>, Vec<f64>, Vec<f64>)> {
    let d = auxmix::toy::simulate_toy(n, c, seed).map_err(err)?;
    Ok((d.y, d.x1, d.x2))
}

#[pyfunction]
fn effective_sample_size(trace: Vec<f64>) -> PyResult<f64> {
    auxmix::diagnostics::effective_sample_size(&trace).map(|e| e.ess).map_err(err)
}

#[pymodule]
fn auxmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixture>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(nlg_log_density, m)?)?;
    m.add_function(wrap_pyfunction!(nlg_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(nlg_sample, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_toy, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add("ALGORITHMS", Algorithm::ALL.iter().map(|a| a.name()).collect::<Vec<_>>())?;
    Ok(())
}
