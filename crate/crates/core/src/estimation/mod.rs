//! Fitting mIPH models to right-censored multivariate data with covariates.
//!
//! One iteration of the fitting loop transforms the data to the homogeneous
//! time scale, computes conditional expectations of the path statistics
//! (E-step), refits the multinomial-logistic initial distribution
//! (R-step), updates the sub-intensity matrices in closed form (M-step) and
//! re-optimises the Gompertz parameters (I-step).

mod estep;
mod fit;
mod istep;
mod mstep;
mod nelder_mead;
mod regression;

pub use estep::{
    e_step, e_step_with, observed_log_lik, per_observation_pi, transform_data, EStepPolicy,
    EStepResult, SufficientStats,
};
pub use fit::{fit, initial_sub_intensities, FitConfig, FitReport, StoppingRule};
pub use istep::{i_step, log_lik_for_betas, IStepMode, IStepOptions, IStepOutcome};
pub use mstep::{m_step, MStepResult, DEFAULT_RATE_FLOOR};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use regression::{r_step, RStepOptions, RStepOutcome, RStepStatus, RegressionCoefficients};

use ndarray::Array2;
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::ModelError;
use crate::phase_type::PhaseTypeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("time transform overflowed at row {row}, margin {margin} (beta={beta}, y={y})")]
    TransformOverflow {
        row: usize,
        margin: usize,
        beta: f64,
        y: f64,
    },
    #[error("observation {row} has zero likelihood under the current parameters")]
    ZeroLikelihood { row: usize },
    #[error("log-likelihood contribution of row {row} is not finite ({value})")]
    NonFiniteLikelihood { row: usize, value: f64 },
    #[error("invalid regression input: {0}")]
    Regression(String),
    #[error("inhomogeneity objective is not finite at any probe point")]
    IStepFailed,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<EstimationError>,
    },
    #[error(transparent)]
    PhaseType(#[from] PhaseTypeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl EstimationError {
    pub(crate) fn at(self, iteration: usize) -> Self {
        EstimationError::AtIteration { iteration, source: Box::new(self) }
    }
}

/// Right-censored multivariate lifetimes with a design matrix.
///
/// Times are on the model's time scale (years / 100 for the couple data).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    y: Array2<f64>,
    delta: Array2<bool>,
    covariates: Array2<f64>,
}

impl ObservationSet {
    /// `delta[m, i]` is `true` when `y[m, i]` is an observed absorption time
    /// and `false` when it is a right-censoring time. The first covariate
    /// column must be the constant 1.
    pub fn new(
        y: Array2<f64>,
        delta: Array2<bool>,
        covariates: Array2<f64>,
    ) -> Result<Self, EstimationError> {
        let (n, d) = y.dim();
        if d == 0 {
            return Err(EstimationError::InvalidObservations("no margins".into()));
        }
        if delta.dim() != (n, d) {
            return Err(EstimationError::InvalidObservations(format!(
                "times are {n}x{d} but indicators are {:?}",
                delta.dim()
            )));
        }
        if covariates.nrows() != n || covariates.ncols() == 0 {
            return Err(EstimationError::InvalidObservations(format!(
                "design matrix is {:?} for {n} rows",
                covariates.dim()
            )));
        }
        if let Some(((m, i), v)) = y.indexed_iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(EstimationError::InvalidObservations(format!(
                "time at row {m}, margin {i} is {v}"
            )));
        }
        if let Some(((m, j), v)) = covariates.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(EstimationError::InvalidObservations(format!(
                "covariate at row {m}, column {j} is {v}"
            )));
        }
        if let Some(m) = covariates.column(0).iter().position(|v| *v != 1.0) {
            return Err(EstimationError::InvalidObservations(format!(
                "first design column must be the constant 1 (row {m})"
            )));
        }
        Ok(ObservationSet { y, delta, covariates })
    }

    /// Intercept-only design.
    pub fn without_covariates(y: Array2<f64>, delta: Array2<bool>) -> Result<Self, EstimationError> {
        let n = y.nrows();
        Self::new(y, delta, Array2::ones((n, 1)))
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }

    /// Number of margins `d`.
    pub fn margins(&self) -> usize {
        self.y.ncols()
    }

    /// Number of design columns `g`.
    pub fn covariate_count(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn indicators(&self) -> &Array2<bool> {
        &self.delta
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.delta.is_empty() {
            return 0.0;
        }
        self.delta.iter().filter(|d| !**d).count() as f64 / self.delta.len() as f64
    }
}
