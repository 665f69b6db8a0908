//! Conditional expectations of the path statistics given right-censored
//! observations, and the observed log-likelihood.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::{EstimationError, ObservationSet};
use crate::linalg::{expm, van_loan_integral, Matrix};
use crate::model::{MiphModel, UNDERFLOW_FLOOR};
use crate::phase_type::{GompertzTransform, PhaseTypeError, SubIntensity};

/// Rows per parallel work unit. Partial sums are combined in chunk order, so
/// results do not depend on the number of threads.
const CHUNK: usize = 32;

/// Aggregated conditional expectations for one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `n × p`: expected number of margins starting in state `k`, per row.
    pub b: Array2<f64>,
    /// `d × p`: expected total occupation time of state `k` in margin `i`.
    pub z: Array2<f64>,
    /// Per margin, `p × p`: expected number of `k → s` jumps (diagonal unused).
    pub n_trans: Vec<Matrix>,
    /// `d × p`: expected number of exits to absorption from state `k`.
    pub n_exit: Array2<f64>,
}

impl SufficientStats {
    fn zeros(n: usize, d: usize, p: usize) -> Self {
        SufficientStats {
            b: Array2::zeros((n, p)),
            z: Array2::zeros((d, p)),
            n_trans: vec![Matrix::zeros((p, p)); d],
            n_exit: Array2::zeros((d, p)),
        }
    }

    pub fn margins(&self) -> usize {
        self.z.nrows()
    }

    pub fn states(&self) -> usize {
        self.z.ncols()
    }

    fn absorb(&mut self, other: &Partial) {
        self.z += &other.z;
        self.n_exit += &other.n_exit;
        for (a, b) in self.n_trans.iter_mut().zip(&other.n_trans) {
            *a += b;
        }
    }
}

/// What to do with rows whose likelihood underflows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EStepPolicy {
    /// Fail with [`EstimationError::ZeroLikelihood`].
    #[default]
    Strict,
    /// Leave the row out of this iteration's statistics; its start-state
    /// weights fall back to `d·π`.
    SkipDegenerate,
}

#[derive(Debug, Clone)]
pub struct EStepResult {
    pub stats: SufficientStats,
    /// Rows left out under [`EStepPolicy::SkipDegenerate`].
    pub excluded: Vec<usize>,
}

/// `x[m, i] = g_i⁻¹(y[m, i])`.
pub fn transform_data(obs: &ObservationSet, betas: &[f64]) -> Result<Array2<f64>, EstimationError> {
    if betas.len() != obs.margins() {
        return Err(EstimationError::DimensionMismatch(format!(
            "{} betas for {} margins",
            betas.len(),
            obs.margins()
        )));
    }
    let transforms = betas
        .iter()
        .map(|&b| GompertzTransform::new(b))
        .collect::<Result<Vec<_>, _>>()?;
    let y = obs.times();
    let mut x = Array2::zeros(y.dim());
    for ((m, i), v) in y.indexed_iter() {
        x[[m, i]] = transforms[i].inverse(*v).map_err(|e| match e {
            PhaseTypeError::Overflow { beta, arg } => {
                EstimationError::TransformOverflow { row: m, margin: i, beta, y: arg }
            }
            other => other.into(),
        })?;
    }
    Ok(x)
}

/// Initial vector of every row as an `n × p` array.
pub fn per_observation_pi(
    model: &MiphModel,
    covariates: &Array2<f64>,
) -> Result<Array2<f64>, EstimationError> {
    let mut out = Array2::zeros((covariates.nrows(), model.states()));
    for (mut row, a) in out.outer_iter_mut().zip(covariates.outer_iter()) {
        let pi = model.initial_for(a.as_slice().unwrap_or(&a.to_vec()))?;
        row.assign(pi.as_array());
    }
    Ok(out)
}

/// `exp(T x)` and the margin's per-state likelihood factor `exp(T x)·t`
/// (observed) or `exp(T x)·e` (censored), negative round-off clamped.
fn margin_factor(sub: &SubIntensity, x: f64, observed: bool) -> Result<(Matrix, Array1<f64>), EstimationError> {
    let e = expm(sub.matrix(), x)?;
    let r = if observed { e.dot(sub.exit_rates()) } else { e.sum_axis(Axis(1)) };
    Ok((e, r.mapv(|v| v.max(0.0))))
}

struct Partial {
    z: Array2<f64>,
    n_trans: Vec<Matrix>,
    n_exit: Array2<f64>,
    b: Vec<(usize, Array1<f64>)>,
    excluded: Vec<usize>,
}

impl Partial {
    fn new(d: usize, p: usize) -> Self {
        Partial {
            z: Array2::zeros((d, p)),
            n_trans: vec![Matrix::zeros((p, p)); d],
            n_exit: Array2::zeros((d, p)),
            b: Vec::new(),
            excluded: Vec::new(),
        }
    }
}

fn check_inputs(
    x: &Array2<f64>,
    delta: &Array2<bool>,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
) -> Result<(usize, usize, usize), EstimationError> {
    let (n, d) = x.dim();
    if subs.len() != d {
        return Err(EstimationError::DimensionMismatch(format!(
            "{} sub-intensity matrices for {d} margins",
            subs.len()
        )));
    }
    let p = subs.first().map(|s| s.dim()).unwrap_or(0);
    if subs.iter().any(|s| s.dim() != p) {
        return Err(EstimationError::DimensionMismatch("margins differ in dimension".into()));
    }
    if delta.dim() != (n, d) || pi.dim() != (n, p) {
        return Err(EstimationError::DimensionMismatch(format!(
            "x is {n}x{d}, indicators {:?}, initial vectors {:?} (p={p})",
            delta.dim(),
            pi.dim()
        )));
    }
    Ok((n, d, p))
}

/// Contribution of row `m` to the statistics, or `None` if its likelihood
/// is numerically zero.
fn row_stats(
    m: usize,
    x: ArrayView1<f64>,
    delta: ArrayView1<bool>,
    pi: ArrayView1<f64>,
    subs: &[SubIntensity],
    acc: &mut Partial,
) -> Result<bool, EstimationError> {
    let d = subs.len();
    let p = pi.len();
    let mut exps = Vec::with_capacity(d);
    let mut factors = Vec::with_capacity(d);
    let mut scales = Vec::with_capacity(d);
    for i in 0..d {
        let (e, r) = margin_factor(&subs[i], x[i], delta[i])?;
        let s = r.fold(0.0f64, |a, v| a.max(*v));
        if !(s > 0.0 && s.is_finite()) {
            return Ok(false);
        }
        exps.push(e);
        factors.push(r / s);
        scales.push(s);
    }
    let mut joint = pi.to_owned();
    for f in &factors {
        joint *= f;
    }
    let denom = joint.sum();
    if !(denom > UNDERFLOW_FLOOR && denom.is_finite()) {
        return Ok(false);
    }
    acc.b.push((m, joint.mapv(|v| d as f64 * v / denom)));

    for i in 0..d {
        let sub = &subs[i];
        let mut w = pi.to_owned();
        for (l, f) in factors.iter().enumerate() {
            if l != i {
                w *= f;
            }
        }
        w /= denom * scales[i];
        let c = if delta[i] { sub.exit_rates().clone() } else { Array1::ones(p) };
        let mut coupling = Matrix::zeros((p, p));
        for a in 0..p {
            for b in 0..p {
                coupling[[a, b]] = c[a] * w[b];
            }
        }
        let norm = coupling.fold(0.0f64, |a, v| a.max(v.abs()));
        if norm > 0.0 {
            coupling /= norm;
            let j = van_loan_integral(sub.matrix(), &coupling, x[i])?.upper_right * norm;
            let t = sub.matrix();
            for k in 0..p {
                acc.z[[i, k]] += j[[k, k]].max(0.0);
                for s in 0..p {
                    if s != k {
                        acc.n_trans[i][[k, s]] += (t[[k, s]] * j[[s, k]]).max(0.0);
                    }
                }
            }
        }
        if delta[i] {
            let reach = w.dot(&exps[i]);
            for k in 0..p {
                acc.n_exit[[i, k]] += (sub.exit_rates()[k] * reach[k]).max(0.0);
            }
        }
    }
    Ok(true)
}

/// E-step that fails on rows with zero likelihood.
pub fn e_step(
    x: &Array2<f64>,
    delta: &Array2<bool>,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
) -> Result<SufficientStats, EstimationError> {
    e_step_with(x, delta, pi, subs, EStepPolicy::Strict).map(|r| r.stats)
}

/// E-step on transformed times `x` with per-row initial vectors `pi`.
pub fn e_step_with(
    x: &Array2<f64>,
    delta: &Array2<bool>,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
    policy: EStepPolicy,
) -> Result<EStepResult, EstimationError> {
    let (n, d, p) = check_inputs(x, delta, pi, subs)?;
    let chunks = n.div_ceil(CHUNK);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Partial::new(d, p);
            for m in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let ok = row_stats(m, x.row(m), delta.row(m), pi.row(m), subs, &mut acc)?;
                if !ok {
                    match policy {
                        EStepPolicy::Strict => return Err(EstimationError::ZeroLikelihood { row: m }),
                        EStepPolicy::SkipDegenerate => acc.excluded.push(m),
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, EstimationError>>()?;

    let mut stats = SufficientStats::zeros(n, d, p);
    let mut excluded = Vec::new();
    for part in &partials {
        stats.absorb(part);
        for (m, b) in &part.b {
            stats.b.row_mut(*m).assign(b);
        }
        excluded.extend_from_slice(&part.excluded);
    }
    for &m in &excluded {
        let prior = pi.row(m).mapv(|v| v * d as f64);
        stats.b.row_mut(m).assign(&prior);
    }
    if !excluded.is_empty() {
        log::warn!("{} observation(s) with vanishing likelihood left out of the E-step", excluded.len());
    }
    Ok(EStepResult { stats, excluded })
}

/// Log-likelihood of one row; `None` when the likelihood is zero.
fn row_log_lik(
    y: ArrayView1<f64>,
    delta: ArrayView1<bool>,
    pi: ArrayView1<f64>,
    subs: &[SubIntensity],
    transforms: &[GompertzTransform],
) -> Result<Option<f64>, EstimationError> {
    let mut joint = pi.to_owned();
    let mut log_scale = 0.0;
    for (i, (sub, g)) in subs.iter().zip(transforms).enumerate() {
        let x = match g.inverse(y[i]) {
            Ok(x) => x,
            Err(PhaseTypeError::Overflow { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (_, r) = margin_factor(sub, x, delta[i])?;
        let s = r.fold(0.0f64, |a, v| a.max(*v));
        if !(s > 0.0 && s.is_finite()) {
            return Ok(None);
        }
        joint *= &(r / s);
        log_scale += s.ln();
        if delta[i] {
            // log λ(y) = βy
            log_scale += g.beta() * y[i];
        }
    }
    let total = joint.sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(None);
    }
    Ok(Some(total.ln() + log_scale))
}

/// `Σ_m log L_m` for explicit per-row initial vectors and parameters.
/// Rows with zero likelihood are reported as errors.
pub(crate) fn log_lik_parts(
    obs: &ObservationSet,
    pi: &Array2<f64>,
    subs: &[SubIntensity],
    betas: &[f64],
) -> Result<f64, EstimationError> {
    let (n, d) = obs.times().dim();
    if subs.len() != d || betas.len() != d {
        return Err(EstimationError::DimensionMismatch(format!(
            "{} matrices and {} betas for {d} margins",
            subs.len(),
            betas.len()
        )));
    }
    let p = subs[0].dim();
    if pi.dim() != (n, p) {
        return Err(EstimationError::DimensionMismatch(format!(
            "initial vectors are {:?}, expected {n}x{p}",
            pi.dim()
        )));
    }
    let transforms = betas
        .iter()
        .map(|&b| GompertzTransform::new(b))
        .collect::<Result<Vec<_>, _>>()?;
    let y = obs.times();
    let delta = obs.indicators();
    let chunks = n.div_ceil(CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut total = 0.0;
            for m in c * CHUNK..((c + 1) * CHUNK).min(n) {
                match row_log_lik(y.row(m), delta.row(m), pi.row(m), subs, &transforms)? {
                    Some(v) => total += v,
                    None => return Err(EstimationError::ZeroLikelihood { row: m }),
                }
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>, EstimationError>>()?;
    let total: f64 = sums.iter().sum();
    if !total.is_finite() {
        let row = (0..n)
            .find(|&m| {
                !matches!(row_log_lik(y.row(m), delta.row(m), pi.row(m), subs, &transforms),
                    Ok(Some(v)) if v.is_finite())
            })
            .unwrap_or(0);
        return Err(EstimationError::NonFiniteLikelihood { row, value: total });
    }
    Ok(total)
}

/// Observed log-likelihood `Σ_m log L_m`: uncensored margins contribute
/// density factors, censored margins survival factors.
pub fn observed_log_lik(obs: &ObservationSet, model: &MiphModel) -> Result<f64, EstimationError> {
    if model.dim() != obs.margins() {
        return Err(EstimationError::DimensionMismatch(format!(
            "model has {} margins, data has {}",
            model.dim(),
            obs.margins()
        )));
    }
    let pi = per_observation_pi(model, obs.covariates())?;
    let subs: Vec<SubIntensity> = model.margins().iter().map(|m| m.sub.clone()).collect();
    log_lik_parts(obs, &pi, &subs, &model.betas())
}
