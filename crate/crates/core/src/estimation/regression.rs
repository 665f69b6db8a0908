//! Weighted multinomial logistic regression for covariate-dependent initial
//! vectors. State 0 is the reference category (its coefficients are zero).

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::EstimationError;
use crate::linalg::{LinalgError, Lu};
use crate::phase_type::{InitialVector, PhaseTypeError};

/// `p × g` coefficients; row 0 is pinned to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCoefficients {
    gamma: Array2<f64>,
}

impl RegressionCoefficients {
    pub fn new(gamma: Array2<f64>) -> Result<Self, EstimationError> {
        let (p, g) = gamma.dim();
        if p == 0 || g == 0 {
            return Err(EstimationError::Regression(format!("empty coefficient matrix {p}x{g}")));
        }
        if gamma.iter().any(|v| !v.is_finite()) {
            return Err(EstimationError::Regression("non-finite coefficient".into()));
        }
        if gamma.row(0).iter().any(|v| *v != 0.0) {
            return Err(EstimationError::Regression(
                "reference state (row 0) must have zero coefficients".into(),
            ));
        }
        Ok(RegressionCoefficients { gamma })
    }

    pub fn zeros(p: usize, g: usize) -> Self {
        RegressionCoefficients { gamma: Array2::zeros((p, g)) }
    }

    pub fn states(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn covariate_count(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.gamma
    }

    /// Softmax of `A·γ_k` over states, with the maximum subtracted first.
    pub fn initial_vector(&self, covariates: &[f64]) -> Result<InitialVector, PhaseTypeError> {
        if covariates.len() != self.covariate_count() {
            return Err(PhaseTypeError::InvalidInitialVector(format!(
                "{} covariates given, coefficients expect {}",
                covariates.len(),
                self.covariate_count()
            )));
        }
        let probs = softmax(&self.gamma, ArrayView1::from(covariates));
        InitialVector::normalized(probs)
    }

    /// Initial vectors for every row of a design matrix, as an `n × p` array.
    pub fn predict(&self, design: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((design.nrows(), self.states()));
        for (mut row, a) in out.outer_iter_mut().zip(design.outer_iter()) {
            row.assign(&softmax(&self.gamma, a));
        }
        out
    }
}

fn softmax(gamma: &Array2<f64>, a: ArrayView1<f64>) -> Array1<f64> {
    let eta = gamma.dot(&a);
    let max = eta.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut e = eta.mapv(|v| (v - max).exp());
    let total = e.sum();
    e /= total;
    e
}

#[derive(Debug, Clone, Copy)]
pub struct RStepOptions {
    /// Stop once the max-norm of the gradient falls below this.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Coefficients larger than this in absolute value signal separation.
    pub coefficient_cap: f64,
}

impl Default for RStepOptions {
    fn default() -> Self {
        RStepOptions { gradient_tol: 1e-8, max_iterations: 100, coefficient_cap: 1e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RStepStatus {
    Converged,
    /// Coefficients were clipped at the cap; the weights are (quasi-)separable.
    CapReached,
    /// Step-halving could not improve the objective although the gradient
    /// is still above tolerance.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RStepOutcome {
    pub coefficients: RegressionCoefficients,
    /// `n × p` fitted initial vectors.
    pub pi: Array2<f64>,
    pub status: RStepStatus,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn objective(weights: &Array2<f64>, pi: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for (w, p) in weights.iter().zip(pi.iter()) {
        if *w > 0.0 {
            total += w * p.ln();
        }
    }
    total
}

/// Maximises `Σ_m Σ_k w[m,k] log π_k(A_m; γ)` by Newton's method with
/// step-halving, starting from `init`.
pub fn r_step(
    weights: &Array2<f64>,
    design: &Array2<f64>,
    init: &RegressionCoefficients,
    opts: RStepOptions,
) -> Result<RStepOutcome, EstimationError> {
    let (n, p) = weights.dim();
    let g = design.ncols();
    if design.nrows() != n {
        return Err(EstimationError::Regression(format!(
            "{n} weight rows but {} design rows",
            design.nrows()
        )));
    }
    if init.states() != p || init.covariate_count() != g {
        return Err(EstimationError::Regression(format!(
            "initial coefficients are {}x{}, expected {p}x{g}",
            init.states(),
            init.covariate_count()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(EstimationError::Regression("weights must be finite and non-negative".into()));
    }
    let row_totals = weights.sum_axis(Axis(1));

    let mut gamma = init.gamma.clone();
    let free = (p - 1) * g;
    let mut pi = RegressionCoefficients { gamma: gamma.clone() }.predict(design);
    let mut current = objective(weights, &pi);
    let mut status = RStepStatus::MaxIterations;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    if free == 0 {
        return Ok(RStepOutcome {
            coefficients: RegressionCoefficients { gamma },
            pi,
            status: RStepStatus::Converged,
            iterations: 0,
            gradient_norm: 0.0,
        });
    }

    while iterations < opts.max_iterations {
        let mut grad = Array1::<f64>::zeros(free);
        let mut hess = Array2::<f64>::zeros((free, free));
        for m in 0..n {
            let a = design.row(m);
            let wm = row_totals[m];
            for k in 1..p {
                let resid = weights[[m, k]] - wm * pi[[m, k]];
                for (ai, av) in a.iter().enumerate() {
                    grad[(k - 1) * g + ai] += resid * av;
                }
                for l in 1..p {
                    let c = wm * pi[[m, k]] * (if k == l { 1.0 } else { 0.0 } - pi[[m, l]]);
                    if c == 0.0 {
                        continue;
                    }
                    for (ai, av) in a.iter().enumerate() {
                        let cav = c * av;
                        for (bi, bv) in a.iter().enumerate() {
                            hess[[(k - 1) * g + ai, (l - 1) * g + bi]] += cav * bv;
                        }
                    }
                }
            }
        }
        grad_norm = grad.fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_norm <= opts.gradient_tol {
            status = RStepStatus::Converged;
            break;
        }
        iterations += 1;

        let step = newton_direction(&hess, &grad)?;
        // near the optimum the gain falls below the rounding of the objective;
        // a full Newton step is then taken without the ascent test
        let predicted = 0.5 * grad.dot(&step);
        let negligible = predicted <= 1e-12 * current.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = gamma.clone();
            for k in 1..p {
                for a in 0..g {
                    trial[[k, a]] += t * step[(k - 1) * g + a];
                }
            }
            let trial_pi = RegressionCoefficients { gamma: trial.clone() }.predict(design);
            let value = objective(weights, &trial_pi);
            if value.is_finite() && (value >= current || (negligible && t == 1.0)) {
                gamma = trial;
                pi = trial_pi;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if gamma.iter().any(|v| v.abs() > opts.coefficient_cap) {
            gamma.mapv_inplace(|v| v.clamp(-opts.coefficient_cap, opts.coefficient_cap));
            pi = RegressionCoefficients { gamma: gamma.clone() }.predict(design);
            status = RStepStatus::CapReached;
            log::warn!("multinomial regression hit the coefficient cap {}", opts.coefficient_cap);
            break;
        }
        if !accepted {
            status = RStepStatus::Stalled;
            break;
        }
    }

    Ok(RStepOutcome {
        coefficients: RegressionCoefficients { gamma },
        pi,
        status,
        iterations,
        gradient_norm: grad_norm,
    })
}

/// Solves `H·Δ = g` for the Newton step, where `H` is the (positive
/// semi-definite) negated Hessian. A small ridge is added when `H` is
/// singular, e.g. for collinear designs or saturated probabilities.
fn newton_direction(hess: &Array2<f64>, grad: &Array1<f64>) -> Result<Array1<f64>, EstimationError> {
    let scale = hess.diag().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[[i, i]] += ridge;
        }
        match Lu::new(&h).and_then(|lu| lu.solve_vec(grad)) {
            Ok(step) if step.iter().all(|v| v.is_finite()) => return Ok(step),
            Ok(_) | Err(LinalgError::Singular { .. }) => {
                ridge = if ridge == 0.0 { scale * 1e-12 } else { ridge * 100.0 };
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(EstimationError::Regression("Newton system is singular".into()))
}
