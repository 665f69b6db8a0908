//! Beran's covariate-localised Kaplan–Meier estimator with a Gaussian kernel.

use ndarray::Array2;
use rayon::prelude::*;

use super::DataError;

/// Below this log-weight the unshifted Gaussian kernel is zero in double
/// precision for every observation.
const LOG_WEIGHT_LIMIT: f64 = -700.0;

/// Kernel bandwidth `b_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(b: f64) -> Result<Self, DataError> {
        if b.is_finite() && b > 0.0 {
            Ok(Bandwidth(b))
        } else {
            Err(DataError::Invalid(format!("bandwidth must be positive, got {b}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Estimator localised at one covariate point, ready to be evaluated at any `t`.
#[derive(Debug, Clone)]
pub struct BeranEstimator {
    /// Sorted times.
    times: Vec<f64>,
    /// Product-limit factor of each sorted observation.
    factors: Vec<f64>,
}

impl BeranEstimator {
    /// `covariates` holds the kernel coordinates (one row per observation);
    /// the kernel is the standard Gaussian density of `(a − A_i)/b`.
    pub fn new(
        times: &[f64],
        deltas: &[bool],
        covariates: &Array2<f64>,
        query: &[f64],
        band: Bandwidth,
    ) -> Result<Self, DataError> {
        let n = times.len();
        if deltas.len() != n || covariates.nrows() != n {
            return Err(DataError::Invalid(format!(
                "{n} times, {} indicators, {} covariate rows",
                deltas.len(),
                covariates.nrows()
            )));
        }
        if covariates.ncols() != query.len() {
            return Err(DataError::Invalid(format!(
                "query has {} coordinates, covariates have {}",
                query.len(),
                covariates.ncols()
            )));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite time {t}")));
        }
        if n == 0 {
            return Err(DataError::Invalid("no observations".into()));
        }
        let b = band.value();
        let log_w: Vec<f64> = covariates
            .outer_iter()
            .map(|row| {
                let sq: f64 = row.iter().zip(query).map(|(x, a)| ((a - x) / b).powi(2)).sum();
                -0.5 * sq
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= LOG_WEIGHT_LIMIT) {
            return Err(DataError::KernelUnderflow { max_log_weight: max });
        }

        // uncensored before censored at tied times; stable otherwise
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| times[i].total_cmp(&times[j]).then(deltas[j].cmp(&deltas[i])));

        let w: Vec<f64> = order.iter().map(|&i| (log_w[i] - max).exp()).collect();
        let mut at_risk = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..n).rev() {
            acc += w[k];
            at_risk[k] = acc;
        }
        let factors = order
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if deltas[i] && w[k] > 0.0 {
                    1.0 - w[k] / at_risk[k]
                } else {
                    1.0
                }
            })
            .collect();
        Ok(BeranEstimator { times: order.iter().map(|&i| times[i]).collect(), factors })
    }

    /// `F̂(t | a)`.
    pub fn cdf(&self, t: f64) -> f64 {
        let mut surv = 1.0;
        for (x, f) in self.times.iter().zip(&self.factors) {
            if *x > t {
                break;
            }
            surv *= f;
        }
        (1.0 - surv).clamp(0.0, 1.0)
    }

    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    /// Survival at every grid point.
    pub fn survival_curve(&self, grid: &[f64]) -> Vec<f64> {
        grid.par_iter().map(|&t| self.survival(t)).collect()
    }
}

/// `F̂(t | a)` for a single `t`.
pub fn beran_estimator(
    times: &[f64],
    deltas: &[bool],
    covariates: &Array2<f64>,
    query: &[f64],
    band: Bandwidth,
    t: f64,
) -> Result<f64, DataError> {
    Ok(BeranEstimator::new(times, deltas, covariates, query, band)?.cdf(t))
}
