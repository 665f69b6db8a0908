//! The fitting driver: transform, E, R, M and I steps until a stopping rule fires.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estep::{e_step_with, transform_data, EStepPolicy};
use super::istep::{i_step, log_lik_for_betas, IStepOptions};
use super::mstep::{m_step, DEFAULT_RATE_FLOOR};
use super::regression::{r_step, RStepOptions, RStepStatus, RegressionCoefficients};
use super::{EstimationError, ObservationSet};
use crate::linalg::Matrix;
use crate::model::{InitialDistribution, Margin, MiphModel};
use crate::phase_type::{GompertzTransform, InitialVector, Structure, SubIntensity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Stop when successive log-likelihoods differ by less than
    /// `per_observation · n`.
    LogLikChange { per_observation: f64 },
    /// Stop when successive log-likelihoods differ by less than this.
    AbsoluteChange(f64),
    /// Always run `max_iterations` iterations.
    FixedIterations,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::LogLikChange { per_observation: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub states: usize,
    pub structure: Structure,
    pub max_iterations: usize,
    pub stopping: StoppingRule,
    pub seed: u64,
    /// Starting Gompertz parameters; `1.0` per margin when `None`.
    pub beta_init: Option<Vec<f64>>,
    /// Keep the betas at their starting values.
    pub freeze_betas: bool,
    /// Run the I-step every `i_step_every` iterations.
    pub i_step_every: usize,
    pub i_step: IStepOptions,
    pub r_step: RStepOptions,
    pub rate_floor: f64,
    /// Worker threads for the data-parallel steps; rayon's default when `None`.
    pub threads: Option<usize>,
}

impl FitConfig {
    pub fn new(states: usize) -> Self {
        FitConfig {
            states,
            structure: Structure::Coxian,
            max_iterations: 1000,
            stopping: StoppingRule::default(),
            seed: 0,
            beta_init: None,
            freeze_betas: false,
            i_step_every: 1,
            i_step: IStepOptions::default(),
            r_step: RStepOptions::default(),
            rate_floor: DEFAULT_RATE_FLOOR,
            threads: None,
        }
    }

    fn validate(&self, d: usize) -> Result<(), EstimationError> {
        let bad = |msg: String| Err(EstimationError::InvalidObservations(msg));
        if self.states == 0 {
            return bad("at least one state is required".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if self.i_step_every == 0 {
            return bad("i_step_every must be positive".into());
        }
        match self.stopping {
            StoppingRule::LogLikChange { per_observation: t } | StoppingRule::AbsoluteChange(t)
                if !(t > 0.0 && t.is_finite()) =>
            {
                return bad(format!("stopping tolerance must be positive, got {t}"));
            }
            _ => {}
        }
        if let Some(b) = &self.beta_init {
            if b.len() != d {
                return Err(EstimationError::DimensionMismatch(format!(
                    "{} initial betas for {d} margins",
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: MiphModel,
    /// Observed log-likelihood after each iteration.
    pub log_lik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Status of the last R-step.
    pub r_step_status: RStepStatus,
    /// Row exclusions summed over all E-steps.
    pub excluded_rows: usize,
    /// Likelihood evaluations spent in I-steps.
    pub i_step_evaluations: usize,
}

impl FitReport {
    pub fn final_log_lik(&self) -> f64 {
        self.log_lik_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Random rates `U(0.1, 2)` on the admissible pattern, rescaled so that the
/// mean absorption time from the middle state equals `target_means[i]`.
pub fn initial_sub_intensities<R: Rng + ?Sized>(
    states: usize,
    structure: Structure,
    target_means: &[f64],
    rng: &mut R,
) -> Result<Vec<SubIntensity>, EstimationError> {
    let p = states;
    let middle = p.div_ceil(2) - 1;
    target_means
        .iter()
        .map(|&target| {
            let mut t = Matrix::zeros((p, p));
            for k in 0..p {
                let mut out = 0.0;
                for s in 0..p {
                    if s != k && structure.admits(k, s) {
                        t[[k, s]] = rng.random_range(0.1..2.0);
                        out += t[[k, s]];
                    }
                }
                out += rng.random_range(0.1..2.0);
                t[[k, k]] = -out;
            }
            let sub = SubIntensity::new(t)?;
            let mean = sub.state_means()?[middle];
            if target > 0.0 && target.is_finite() && mean > 0.0 {
                Ok(sub.scaled(mean / target)?)
            } else {
                Ok(sub)
            }
        })
        .collect()
}

fn build_model(
    subs: &[SubIntensity],
    betas: &[f64],
    gamma: &RegressionCoefficients,
    pi: &Array2<f64>,
) -> Result<MiphModel, EstimationError> {
    let margins = subs
        .iter()
        .zip(betas)
        .map(|(s, &b)| Ok(Margin::new(s.clone(), GompertzTransform::new(b)?)))
        .collect::<Result<Vec<_>, EstimationError>>()?;
    let initial = if gamma.covariate_count() == 1 {
        InitialDistribution::Fixed(InitialVector::normalized(pi.row(0).to_owned())?)
    } else {
        InitialDistribution::Regression(gamma.clone())
    };
    Ok(MiphModel::new(margins, initial)?)
}

/// Fits an mIPH model with covariate-dependent initial vectors.
pub fn fit(obs: &ObservationSet, config: &FitConfig) -> Result<FitReport, EstimationError> {
    match config.threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| fit_inner(obs, config)),
            Err(e) => {
                log::warn!("could not build a {k}-thread pool ({e}); using the global pool");
                fit_inner(obs, config)
            }
        },
        None => fit_inner(obs, config),
    }
}

fn fit_inner(obs: &ObservationSet, config: &FitConfig) -> Result<FitReport, EstimationError> {
    let d = obs.margins();
    let n = obs.len();
    config.validate(d)?;
    if obs.is_empty() {
        return Err(EstimationError::InvalidObservations("no observations".into()));
    }
    let p = config.states;
    let g = obs.covariate_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut betas = config.beta_init.clone().unwrap_or_else(|| vec![1.0; d]);
    let mut x = transform_data(obs, &betas)?;
    let delta = obs.indicators();
    let targets: Vec<f64> = (0..d)
        .map(|i| {
            let (sum, count) = x
                .column(i)
                .iter()
                .zip(delta.column(i))
                .filter(|(_, &dl)| dl)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
            if count > 0 {
                sum / count as f64
            } else {
                x.column(i).mean().unwrap_or(0.0)
            }
        })
        .collect();
    let mut subs = initial_sub_intensities(p, config.structure, &targets, &mut rng)?;
    let mut gamma = RegressionCoefficients::zeros(p, g);
    let mut pi = gamma.predict(obs.covariates());

    let tolerance = match config.stopping {
        StoppingRule::LogLikChange { per_observation } => Some(per_observation * n as f64),
        StoppingRule::AbsoluteChange(t) => Some(t),
        StoppingRule::FixedIterations => None,
    };

    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut converged = false;
    let mut excluded_rows = 0;
    let mut i_step_evaluations = 0;
    let mut r_status = RStepStatus::Converged;
    for iteration in 1..=config.max_iterations {
        let mut step = || -> Result<f64, EstimationError> {
            let e = e_step_with(&x, delta, &pi, &subs, EStepPolicy::SkipDegenerate)?;
            excluded_rows += e.excluded.len();
            let r = r_step(&e.stats.b, obs.covariates(), &gamma, config.r_step)?;
            r_status = r.status;
            gamma = r.coefficients;
            pi = r.pi;
            let m = m_step(&e.stats, config.structure, config.rate_floor)?;
            subs = m.subs;
            if !config.freeze_betas && iteration % config.i_step_every == 0 {
                let out = i_step(obs, &pi, &subs, &betas, config.i_step)?;
                i_step_evaluations += out.evaluations;
                if out.improved {
                    betas = out.betas;
                    x = transform_data(obs, &betas)?;
                }
                Ok(out.log_lik)
            } else {
                log_lik_for_betas(obs, &pi, &subs, &betas)
            }
        };
        let ll = step().map_err(|e| e.at(iteration))?;
        if !ll.is_finite() {
            return Err(EstimationError::NonFiniteLikelihood { row: 0, value: ll }.at(iteration));
        }
        log::debug!("iteration {iteration}: log-likelihood {ll:.6}, betas {betas:?}");
        let previous = trace.last().copied();
        trace.push(ll);
        if let (Some(tol), Some(prev)) = (tolerance, previous) {
            if (ll - prev).abs() < tol {
                converged = true;
                break;
            }
        }
    }
    if !converged && tolerance.is_none() {
        converged = true;
    }

    let model = build_model(&subs, &betas, &gamma, &pi)?;
    log::info!(
        "fit finished after {} iterations, log-likelihood {:.6}",
        trace.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(FitReport {
        model,
        iterations: trace.len(),
        log_lik_trace: trace,
        converged,
        r_step_status: r_status,
        excluded_rows,
        i_step_evaluations,
    })
}
