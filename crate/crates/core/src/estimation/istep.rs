//! Re-estimation of the Gompertz parameters with the other parameters held
//! fixed. The search runs over `log β` inside a box.

use ndarray::Array2;

use super::estep::log_lik_parts;
use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use super::{EstimationError, ObservationSet};
use crate::phase_type::SubIntensity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IStepMode {
    /// One Nelder–Mead search over all `log β_i` together.
    #[default]
    Joint,
    /// One-dimensional searches margin by margin.
    Coordinate,
}

#[derive(Debug, Clone, Copy)]
pub struct IStepOptions {
    pub mode: IStepMode,
    pub log_beta_lower: f64,
    pub log_beta_upper: f64,
    pub initial_step: f64,
    pub max_evaluations: usize,
    /// Simplex diameter in `log β` at which the search stops...
    pub x_tolerance: f64,
    /// ... provided the objective spread is also below this.
    pub f_tolerance: f64,
}

impl Default for IStepOptions {
    fn default() -> Self {
        IStepOptions {
            mode: IStepMode::Joint,
            log_beta_lower: -5.0,
            log_beta_upper: 7.0,
            initial_step: 0.1,
            max_evaluations: 100,
            x_tolerance: 1e-4,
            f_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IStepOutcome {
    pub betas: Vec<f64>,
    pub log_lik: f64,
    /// `false` when the search did not beat the starting point and the
    /// starting betas were returned.
    pub improved: bool,
    pub evaluations: usize,
}

/// Observed log-likelihood as a function of the Gompertz parameters.
pub fn log_lik_for_betas(
    obs: &ObservationSet,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
    betas: &[f64],
) -> Result<f64, EstimationError> {
    log_lik_parts(obs, pi, subs, betas)
}

pub fn i_step(
    obs: &ObservationSet,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
    betas_init: &[f64],
    opts: IStepOptions,
) -> Result<IStepOutcome, EstimationError> {
    let d = obs.margins();
    if betas_init.len() != d {
        return Err(EstimationError::DimensionMismatch(format!(
            "{} initial betas for {d} margins",
            betas_init.len()
        )));
    }
    if let Some(b) = betas_init.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
        return Err(EstimationError::PhaseType(crate::phase_type::PhaseTypeError::InvalidBeta(*b)));
    }
    let objective = |log_beta: &[f64]| -> f64 {
        let betas: Vec<f64> = log_beta.iter().map(|v| v.exp()).collect();
        match log_lik_parts(obs, pi, subs, &betas) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let start_value = objective(
        &betas_init.iter().map(|b| b.ln()).collect::<Vec<_>>(),
    );
    let nm = NelderMeadOptions {
        initial_step: opts.initial_step,
        max_evaluations: opts.max_evaluations,
        f_tol: opts.f_tolerance,
        x_tol: opts.x_tolerance,
        lower: opts.log_beta_lower,
        upper: opts.log_beta_upper,
    };

    let mut evaluations = 1;
    let mut current: Vec<f64> = betas_init.iter().map(|b| b.ln()).collect();
    let mut value = start_value;
    match opts.mode {
        IStepMode::Joint => {
            let r = nelder_mead(objective, &current, nm);
            evaluations += r.evaluations;
            if r.value < value {
                current = r.x;
                value = r.value;
            }
        }
        IStepMode::Coordinate => {
            for i in 0..d {
                let base = current.clone();
                let r = nelder_mead(
                    |v: &[f64]| {
                        let mut trial = base.clone();
                        trial[i] = v[0];
                        objective(&trial)
                    },
                    &[current[i]],
                    nm,
                );
                evaluations += r.evaluations;
                if r.value < value {
                    current[i] = r.x[0];
                    value = r.value;
                }
            }
        }
    }

    if !value.is_finite() {
        return Err(EstimationError::IStepFailed);
    }
    let improved = value < start_value;
    let betas = if improved { current.iter().map(|v| v.exp()).collect() } else { betas_init.to_vec() };
    Ok(IStepOutcome { betas, log_lik: -value, improved, evaluations })
}
