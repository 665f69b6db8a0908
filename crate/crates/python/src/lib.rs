//! Python bindings: model evaluation, dependence measures, fitting and the
//! Beran estimator. Times are in model units (years / 100) unless a method
//! says otherwise; ages are in years.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use miph::data::{self, couple_design, Bandwidth, BeranEstimator, DataError};
use miph::estimation::{self, EstimationError, FitConfig, StoppingRule};
use miph::linalg::{self, LinalgError};
use miph::model::ModelError;
use miph::{InitialVector, MiphModel, ObservationSet, Structure};

fn input<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn numerical<E: std::fmt::Display>(e: E) -> PyErr {
    PyArithmeticError::new_err(e.to_string())
}

fn model_err(e: ModelError) -> PyErr {
    match e {
        ModelError::Underflow { .. } | ModelError::Quadrature(_) | ModelError::Linalg(_) => numerical(e),
        _ => input(e),
    }
}

fn estimation_err(e: EstimationError) -> PyErr {
    match e {
        EstimationError::InvalidObservations(_) | EstimationError::DimensionMismatch(_) => input(e),
        _ => numerical(e),
    }
}

fn data_err(e: DataError) -> PyErr {
    match e {
        DataError::KernelUnderflow { .. } => numerical(e),
        DataError::Estimation(inner) => estimation_err(inner),
        DataError::Distribution(inner) => model_err(inner),
        other => input(other),
    }
}

fn to_array(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err(format!("{what} has rows of different lengths")));
    }
    Array2::from_shape_vec((rows.len(), c), rows.concat()).map_err(input)
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// A fitted or hand-built multivariate inhomogeneous phase-type model.
#[pyclass(name = "Model", module = "miph_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Model {
    inner: MiphModel,
}

impl Model {
    fn pi(&self, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<InitialVector> {
        if let Some(pi) = self.inner.fixed_initial() {
            return Ok(pi.clone());
        }
        let design = match (ages, covariates) {
            (Some((a1, a2)), None) => couple_design(a1, a2).to_vec(),
            (None, Some(c)) => c,
            _ => return Err(PyValueError::new_err("give exactly one of ages or covariates")),
        };
        self.inner.initial_for(&design).map_err(model_err)
    }
}

#[pymethods]
impl Model {
    /// Reads a `miph-v1` model JSON file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: data::read_model(&path).map_err(data_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::write_model(&path, &self.inner).map_err(data_err)
    }

    #[getter]
    fn states(&self) -> usize {
        self.inner.states()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.inner.betas()
    }

    /// Sub-intensity matrix of margin `i`.
    fn sub_intensity(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(self.inner.margin(i).map_err(model_err)?.sub.matrix()))
    }

    /// Initial vector for the given ages (years) or full design row.
    #[pyo3(signature = (ages=None, covariates=None))]
    fn initial(&self, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.pi(ages, covariates)?.as_array().to_vec())
    }

    #[pyo3(signature = (y, ages=None, covariates=None))]
    fn joint_survival(&self, y: Vec<f64>, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.joint_survival(&pi, &y).map_err(model_err)
    }

    #[pyo3(signature = (y, ages=None, covariates=None))]
    fn joint_density(&self, y: Vec<f64>, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.joint_density(&pi, &y).map_err(model_err)
    }

    #[pyo3(signature = (y, ages=None, covariates=None))]
    fn joint_cdf(&self, y: Vec<f64>, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.joint_cdf(&pi, &y).map_err(model_err)
    }

    #[pyo3(signature = (ages=None, covariates=None, k=0, l=1))]
    fn kendall_tau(&self, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>, k: usize, l: usize) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.kendall_tau(&pi, k, l).map_err(model_err)
    }

    #[pyo3(signature = (ages=None, covariates=None, k=0, l=1))]
    fn spearman_rho(&self, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>, k: usize, l: usize) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.spearman_rho(&pi, k, l).map_err(model_err)
    }

    #[pyo3(signature = (y1, y2, ages=None, covariates=None))]
    fn psi1(&self, y1: f64, y2: f64, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.psi1(&pi, y1, y2).map_err(model_err)
    }

    #[pyo3(signature = (i, y, ages=None, covariates=None))]
    fn psi2(&self, i: usize, y: f64, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.psi2(&pi, i, y).map_err(model_err)
    }

    #[pyo3(signature = (u, ages=None, covariates=None))]
    fn cross_ratio(&self, u: f64, ages: Option<(f64, f64)>, covariates: Option<Vec<f64>>) -> PyResult<f64> {
        let pi = self.pi(ages, covariates)?;
        self.inner.cross_ratio(&pi, u).map_err(model_err)
    }

    /// `n` joint lifetimes, one list per draw.
    #[pyo3(signature = (n, seed=0, ages=None, covariates=None))]
    fn sample(
        &self,
        n: usize,
        seed: u64,
        ages: Option<(f64, f64)>,
        covariates: Option<Vec<f64>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let pi = self.pi(ages, covariates)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(to_rows(&self.inner.sample_joint(&pi, &mut rng, n).map_err(model_err)?))
    }

    fn __repr__(&self) -> String {
        format!("Model(states={}, dim={}, betas={:?})", self.inner.states(), self.inner.dim(), self.inner.betas())
    }
}

/// Fits a model by the ERMI algorithm. `times` and `deltas` are `n × d`;
/// `covariates` is an `n × g` design (intercept column first) or `None`.
/// Returns the model and the per-iteration log-likelihood.
#[pyfunction]
#[pyo3(signature = (
    times, deltas, p, covariates=None, iterations=1000, tolerance=1e-7, fixed_iterations=false,
    seed=0, structure="coxian", beta_init=None, freeze_betas=false, i_step_every=1, threads=None
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    times: Vec<Vec<f64>>,
    deltas: Vec<Vec<bool>>,
    p: usize,
    covariates: Option<Vec<Vec<f64>>>,
    iterations: usize,
    tolerance: f64,
    fixed_iterations: bool,
    seed: u64,
    structure: &str,
    beta_init: Option<Vec<f64>>,
    freeze_betas: bool,
    i_step_every: usize,
    threads: Option<usize>,
) -> PyResult<(Model, Vec<f64>)> {
    let y = to_array(&times, "times")?;
    let c = deltas.first().map(Vec::len).unwrap_or(0);
    if deltas.iter().any(|r| r.len() != c) {
        return Err(PyValueError::new_err("deltas has rows of different lengths"));
    }
    let delta = Array2::from_shape_vec((deltas.len(), c), deltas.concat()).map_err(input)?;
    let obs = match covariates {
        Some(rows) => ObservationSet::new(y, delta, to_array(&rows, "covariates")?),
        None => ObservationSet::without_covariates(y, delta),
    }
    .map_err(estimation_err)?;
    let mut cfg = FitConfig::new(p);
    cfg.structure = match structure {
        "coxian" => Structure::Coxian,
        "general" => Structure::General,
        other => return Err(PyValueError::new_err(format!("unknown structure `{other}`"))),
    };
    cfg.max_iterations = iterations;
    cfg.stopping = if fixed_iterations {
        StoppingRule::FixedIterations
    } else {
        StoppingRule::LogLikChange { per_observation: tolerance }
    };
    cfg.seed = seed;
    cfg.beta_init = beta_init;
    cfg.freeze_betas = freeze_betas;
    cfg.i_step_every = i_step_every;
    cfg.threads = threads;
    let report = py.detach(|| estimation::fit(&obs, &cfg)).map_err(estimation_err)?;
    Ok((Model { inner: report.model }, report.log_lik_trace))
}

/// Conditional Kaplan–Meier survival curve at `query` on `grid`.
#[pyfunction]
#[pyo3(signature = (times, deltas, covariates, query, grid, bandwidth=0.001))]
fn beran(
    times: Vec<f64>,
    deltas: Vec<bool>,
    covariates: Vec<Vec<f64>>,
    query: Vec<f64>,
    grid: Vec<f64>,
    bandwidth: f64,
) -> PyResult<Vec<f64>> {
    let cov = to_array(&covariates, "covariates")?;
    let band = Bandwidth::new(bandwidth).map_err(data_err)?;
    let est = BeranEstimator::new(&times, &deltas, &cov, &query, band).map_err(data_err)?;
    Ok(est.survival_curve(&grid))
}

/// `exp(matrix · scale)`.
#[pyfunction]
#[pyo3(signature = (matrix, scale=1.0))]
fn expm(matrix: Vec<Vec<f64>>, scale: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = to_array(&matrix, "matrix")?;
    let e = linalg::expm(&m, scale).map_err(|e| match e {
        LinalgError::NonFinite => numerical(e),
        other => input(other),
    })?;
    Ok(to_rows(&e))
}

#[pymodule]
fn miph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(beran, m)?)?;
    m.add_function(wrap_pyfunction!(expm, m)?)?;
    m.add("TIME_SCALE", data::TIME_SCALE)?;
    Ok(())
}
