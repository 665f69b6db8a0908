//! Univariate phase-type (PH) and inhomogeneous phase-type (IPH) laws.
//!
//! A PH variable is the absorption time of a Markov jump process on
//! transient states `0..p` plus one absorbing state. The IPH variant used
//! here is the Matrix-Gompertz time change `Y = log(βX + 1)/β`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{expm, solve_vec, LinalgError, Matrix};

/// Tolerance used when validating probability vectors and row balances.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseTypeError {
    #[error("invalid initial vector: {0}")]
    InvalidInitialVector(String),
    #[error("invalid sub-intensity matrix: {0}")]
    InvalidSubIntensity(String),
    #[error("inhomogeneity parameter must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("argument must be a non-negative finite number, got {0}")]
    NegativeArgument(f64),
    #[error("time transform overflowed for beta={beta}, argument={arg}")]
    Overflow { beta: f64, arg: f64 },
    #[error("state {state} out of range for dimension {dim}")]
    StateOutOfRange { state: usize, dim: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Distribution of the initial state: non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InitialVector(Array1<f64>);

impl InitialVector {
    pub fn new(probs: impl Into<Array1<f64>>) -> Result<Self, PhaseTypeError> {
        let probs = probs.into();
        if probs.is_empty() {
            return Err(PhaseTypeError::InvalidInitialVector("empty".into()));
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(PhaseTypeError::InvalidInitialVector(format!(
                "entry {v} is negative or not finite"
            )));
        }
        let total: f64 = probs.sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(PhaseTypeError::InvalidInitialVector(format!(
                "entries sum to {total}"
            )));
        }
        Ok(InitialVector(probs))
    }

    /// Rescales non-negative weights to a probability vector.
    pub fn normalized(weights: impl Into<Array1<f64>>) -> Result<Self, PhaseTypeError> {
        let weights = weights.into();
        let total: f64 = weights.sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|v| *v < 0.0) {
            return Err(PhaseTypeError::InvalidInitialVector(format!(
                "cannot normalise weights with total {total}"
            )));
        }
        Self::new(weights / total)
    }

    pub fn uniform(p: usize) -> Self {
        InitialVector(Array1::from_elem(p, 1.0 / p as f64))
    }

    /// Point mass on `state`.
    pub fn unit(p: usize, state: usize) -> Self {
        let mut v = Array1::zeros(p);
        v[state] = 1.0;
        InitialVector(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl TryFrom<Vec<f64>> for InitialVector {
    type Error = PhaseTypeError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        InitialVector::new(Array1::from(v))
    }
}

impl From<InitialVector> for Vec<f64> {
    fn from(v: InitialVector) -> Self {
        v.0.to_vec()
    }
}

/// Admissible sparsity pattern of a sub-intensity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Forward moves `k → k+1` and direct exits only.
    Coxian,
    /// Any transition between transient states.
    General,
}

impl Structure {
    /// Whether the transition `from → to` between transient states may be non-zero.
    pub fn admits(self, from: usize, to: usize) -> bool {
        match self {
            Structure::Coxian => to == from + 1,
            Structure::General => to != from,
        }
    }
}

/// Transient-block generator `T` together with its exit-rate vector `t = −T·e`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubIntensity {
    t: Matrix,
    exit: Array1<f64>,
}

impl SubIntensity {
    /// Validates `t` and derives the exit rates.
    pub fn new(t: Matrix) -> Result<Self, PhaseTypeError> {
        let (rows, cols) = t.dim();
        if rows != cols || rows == 0 {
            return Err(PhaseTypeError::InvalidSubIntensity(format!(
                "expected a non-empty square matrix, got {rows}x{cols}"
            )));
        }
        for ((i, j), &v) in t.indexed_iter() {
            if !v.is_finite() {
                return Err(PhaseTypeError::InvalidSubIntensity(format!(
                    "entry ({i},{j}) is not finite"
                )));
            }
            if i == j && v >= 0.0 {
                return Err(PhaseTypeError::InvalidSubIntensity(format!(
                    "diagonal entry {i} = {v} is not negative"
                )));
            }
            if i != j && v < 0.0 {
                return Err(PhaseTypeError::InvalidSubIntensity(format!(
                    "off-diagonal entry ({i},{j}) = {v} is negative"
                )));
            }
        }
        let mut exit = -t.sum_axis(ndarray::Axis(1));
        for (k, r) in exit.iter_mut().enumerate() {
            if *r < -PROBABILITY_TOL {
                return Err(PhaseTypeError::InvalidSubIntensity(format!(
                    "row {k} has negative exit rate {r}"
                )));
            }
            *r = r.max(0.0);
        }
        Ok(SubIntensity { t, exit })
    }

    /// Builds `T` from off-diagonal transition rates and exit rates; the
    /// diagonal of `transitions` is ignored.
    pub fn from_rates(transitions: &Matrix, exit: Array1<f64>) -> Result<Self, PhaseTypeError> {
        let p = exit.len();
        if transitions.dim() != (p, p) {
            return Err(PhaseTypeError::InvalidSubIntensity(format!(
                "transition block is {:?} but {p} exit rates were given",
                transitions.dim()
            )));
        }
        let mut t = transitions.clone();
        for k in 0..p {
            t[[k, k]] = 0.0;
            let out: f64 = t.row(k).sum() + exit[k];
            t[[k, k]] = -out;
        }
        let mut sub = SubIntensity::new(t)?;
        sub.exit = exit;
        Ok(sub)
    }

    /// Coxian generator from its diagonal and superdiagonal.
    pub fn coxian(diagonal: &[f64], forward: &[f64]) -> Result<Self, PhaseTypeError> {
        let p = diagonal.len();
        if forward.len() + 1 != p {
            return Err(PhaseTypeError::InvalidSubIntensity(format!(
                "{p} diagonal entries need {} forward rates, got {}",
                p.saturating_sub(1),
                forward.len()
            )));
        }
        let mut t = Matrix::zeros((p, p));
        for k in 0..p {
            t[[k, k]] = diagonal[k];
            if k + 1 < p {
                t[[k, k + 1]] = forward[k];
            }
        }
        SubIntensity::new(t)
    }

    pub fn dim(&self) -> usize {
        self.exit.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.t
    }

    pub fn exit_rates(&self) -> &Array1<f64> {
        &self.exit
    }

    /// Whether every non-zero off-diagonal entry is allowed by `structure`.
    pub fn conforms_to(&self, structure: Structure) -> bool {
        self.t
            .indexed_iter()
            .all(|((i, j), &v)| i == j || v == 0.0 || structure.admits(i, j))
    }

    /// `exp(T·x)`.
    pub fn transition(&self, x: f64) -> Result<Matrix, PhaseTypeError> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(PhaseTypeError::NegativeArgument(x));
        }
        Ok(expm(&self.t, x)?)
    }

    /// Per-start-state survival `exp(T·x)·e` and density `exp(T·x)·t`.
    pub fn state_profiles(&self, x: f64) -> Result<(Array1<f64>, Array1<f64>), PhaseTypeError> {
        let e = self.transition(x)?;
        let surv = e.sum_axis(ndarray::Axis(1)).mapv(|v| v.max(0.0));
        let dens = e.dot(&self.exit).mapv(|v| v.max(0.0));
        Ok((surv, dens))
    }

    /// Expected absorption time from each start state, `(−T)⁻¹·e`.
    pub fn state_means(&self) -> Result<Array1<f64>, PhaseTypeError> {
        let p = self.dim();
        Ok(solve_vec(&(-&self.t), &Array1::ones(p))?)
    }

    /// Multiplies every rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, PhaseTypeError> {
        SubIntensity::new(&self.t * factor)
    }
}

fn check_pi(sub: &SubIntensity, pi: &InitialVector) -> Result<(), PhaseTypeError> {
    if pi.len() != sub.dim() {
        return Err(PhaseTypeError::InvalidInitialVector(format!(
            "length {} does not match dimension {}",
            pi.len(),
            sub.dim()
        )));
    }
    Ok(())
}

/// PH density `π·exp(T x)·t`.
pub fn ph_density(sub: &SubIntensity, pi: &InitialVector, x: f64) -> Result<f64, PhaseTypeError> {
    check_pi(sub, pi)?;
    let (_, dens) = sub.state_profiles(x)?;
    Ok(pi.as_array().dot(&dens).max(0.0))
}

/// PH survival `π·exp(T x)·e`.
pub fn ph_survival(sub: &SubIntensity, pi: &InitialVector, x: f64) -> Result<f64, PhaseTypeError> {
    check_pi(sub, pi)?;
    let (surv, _) = sub.state_profiles(x)?;
    Ok(pi.as_array().dot(&surv).clamp(0.0, 1.0))
}

/// Matrix-Gompertz time change `g(x) = log(βx + 1)/β` with intensity `λ(y) = e^{βy}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GompertzTransform {
    beta: f64,
}

impl GompertzTransform {
    pub fn new(beta: f64) -> Result<Self, PhaseTypeError> {
        if beta.is_finite() && beta > 0.0 {
            Ok(GompertzTransform { beta })
        } else {
            Err(PhaseTypeError::InvalidBeta(beta))
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `g⁻¹(y) = (e^{βy} − 1)/β`, the integrated intensity.
    pub fn inverse(&self, y: f64) -> Result<f64, PhaseTypeError> {
        if !(y.is_finite() && y >= 0.0) {
            return Err(PhaseTypeError::NegativeArgument(y));
        }
        let x = (self.beta * y).exp_m1() / self.beta;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(PhaseTypeError::Overflow { beta: self.beta, arg: y })
        }
    }

    /// `g(x) = log(βx + 1)/β`.
    pub fn forward(&self, x: f64) -> Result<f64, PhaseTypeError> {
        if !(x >= 0.0) || x.is_nan() {
            return Err(PhaseTypeError::NegativeArgument(x));
        }
        Ok((self.beta * x).ln_1p() / self.beta)
    }

    /// `λ(y) = e^{βy}`, the derivative of [`Self::inverse`].
    pub fn intensity(&self, y: f64) -> f64 {
        (self.beta * y).exp()
    }
}

impl TryFrom<f64> for GompertzTransform {
    type Error = PhaseTypeError;
    fn try_from(beta: f64) -> Result<Self, Self::Error> {
        GompertzTransform::new(beta)
    }
}

impl From<GompertzTransform> for f64 {
    fn from(g: GompertzTransform) -> f64 {
        g.beta
    }
}

/// IPH density `f_X(g⁻¹(y))·λ(y)`.
pub fn iph_density(
    sub: &SubIntensity,
    pi: &InitialVector,
    g: &GompertzTransform,
    y: f64,
) -> Result<f64, PhaseTypeError> {
    let x = g.inverse(y)?;
    Ok(ph_density(sub, pi, x)? * g.intensity(y))
}

/// IPH survival `S_X(g⁻¹(y))`.
pub fn iph_survival(
    sub: &SubIntensity,
    pi: &InitialVector,
    g: &GompertzTransform,
    y: f64,
) -> Result<f64, PhaseTypeError> {
    ph_survival(sub, pi, g.inverse(y)?)
}

/// Simulates the jump chain from `start` until absorption and returns the
/// absorption time.
pub fn sample_path<R: Rng + ?Sized>(
    sub: &SubIntensity,
    start: usize,
    rng: &mut R,
) -> Result<f64, PhaseTypeError> {
    let p = sub.dim();
    if start >= p {
        return Err(PhaseTypeError::StateOutOfRange { state: start, dim: p });
    }
    let t = sub.matrix();
    let mut state = start;
    let mut elapsed = 0.0;
    loop {
        let rate = -t[[state, state]];
        let hold = Exp::new(rate)
            .map_err(|_| PhaseTypeError::InvalidSubIntensity(format!("state {state} rate {rate}")))?
            .sample(rng);
        elapsed += hold;
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = None;
        for s in 0..p {
            if s == state {
                continue;
            }
            acc += t[[state, s]];
            if u < acc {
                next = Some(s);
                break;
            }
        }
        // the remaining mass `rate − acc` is the exit rate
        match next {
            Some(s) => state = s,
            None => return Ok(elapsed),
        }
    }
}

/// `p × p` view of per-state rates for display or serialisation.
pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}
