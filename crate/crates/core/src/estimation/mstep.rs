//! Closed-form maximisation of the complete-data likelihood in the rates.

use super::{EstimationError, SufficientStats};
use crate::linalg::Matrix;
use crate::phase_type::{Structure, SubIntensity};

/// Total outflow rate given to a state whose statistics carry no information.
pub const DEFAULT_RATE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct MStepResult {
    pub subs: Vec<SubIntensity>,
    /// `(margin, state)` pairs whose total outflow was zero and got the floor.
    pub floored: Vec<(usize, usize)>,
}

/// `t_ks = N_ks / Z_k`, `t_k = N_k / Z_k`, restricted to the admissible
/// pattern of `structure`.
pub fn m_step(
    stats: &SufficientStats,
    structure: Structure,
    floor: f64,
) -> Result<MStepResult, EstimationError> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(EstimationError::DimensionMismatch(format!("rate floor must be positive, got {floor}")));
    }
    let (d, p) = stats.z.dim();
    let mut subs = Vec::with_capacity(d);
    let mut floored = Vec::new();
    for i in 0..d {
        let mut t = Matrix::zeros((p, p));
        for k in 0..p {
            let z = stats.z[[i, k]];
            let mut out = 0.0;
            if z > 0.0 {
                for s in 0..p {
                    if s != k && structure.admits(k, s) {
                        let rate = (stats.n_trans[i][[k, s]] / z).max(0.0);
                        t[[k, s]] = rate;
                        out += rate;
                    }
                }
                out += (stats.n_exit[[i, k]] / z).max(0.0);
            } else {
                log::warn!("margin {i}, state {k}: no expected occupation time");
            }
            if !(out > 0.0) {
                floored.push((i, k));
                out = floor;
            }
            t[[k, k]] = -out;
        }
        subs.push(SubIntensity::new(t)?);
    }
    Ok(MStepResult { subs, floored })
}
