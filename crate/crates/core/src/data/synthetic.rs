//! Simulated right-censored data sets from a known model.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{couple_design, observations_to_records, CoupleRecord, DataError};
use crate::estimation::ObservationSet;
use crate::model::MiphModel;

/// Rate `θ` of exponential censoring times such that the expected censored
/// fraction `mean(1 − e^{−θ·Y})` over the given lifetimes equals `rate`.
pub fn calibrate_censoring(lifetimes: &[f64], rate: f64) -> Result<f64, DataError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DataError::Invalid(format!("censoring rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 || lifetimes.is_empty() {
        return Ok(0.0);
    }
    let fraction = |theta: f64| -> f64 {
        lifetimes.iter().map(|y| -(-theta * y).exp_m1()).sum::<f64>() / lifetimes.len() as f64
    };
    let mut hi = 1.0;
    let mut guard = 0;
    while fraction(hi) < rate {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(DataError::Invalid(format!("censoring rate {rate} is not attainable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fraction(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws `n` rows: design rows from `covariates`, per-row initial vectors
/// from the model, joint lifetimes, then independent exponential censoring
/// calibrated to `censoring_rate`. Deterministic in `seed`.
pub fn generate_synthetic<F>(
    model: &MiphModel,
    mut covariates: F,
    censoring_rate: f64,
    n: usize,
    seed: u64,
) -> Result<ObservationSet, DataError>
where
    F: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.dim();
    let mut design_rows = Vec::with_capacity(n);
    let mut lifetimes = Array2::zeros((n, d));
    for m in 0..n {
        let a = covariates(&mut rng);
        let pi = model.initial_for(&a)?;
        let y = model.sample_joint(&pi, &mut rng, 1)?;
        lifetimes.row_mut(m).assign(&y.row(0));
        design_rows.push(a);
    }
    let g = design_rows.first().map(|r| r.len()).unwrap_or(1);
    if design_rows.iter().any(|r| r.len() != g) {
        return Err(DataError::Invalid("covariate sampler returned rows of different lengths".into()));
    }
    let design = if n == 0 {
        Array2::ones((0, 1))
    } else {
        Array2::from_shape_vec((n, g), design_rows.concat()).map_err(|e| DataError::Invalid(e.to_string()))?
    };

    let all: Vec<f64> = lifetimes.iter().copied().collect();
    let theta = calibrate_censoring(&all, censoring_rate)?;
    let mut observed = lifetimes.clone();
    let mut delta = Array2::from_elem((n, d), true);
    if theta > 0.0 {
        let exp = Exp::new(theta).map_err(|e| DataError::Invalid(e.to_string()))?;
        for ((m, i), y) in lifetimes.indexed_iter() {
            let c: f64 = exp.sample(&mut rng);
            if c < *y {
                observed[[m, i]] = c;
                delta[[m, i]] = false;
            }
        }
    }
    Ok(ObservationSet::new(observed, delta, design)?)
}

/// Couple records (years) simulated at the given ages; row `m` uses
/// `ages[m % ages.len()]`.
pub fn simulate_couples(
    model: &MiphModel,
    ages: &[(f64, f64)],
    n: usize,
    censoring_rate: f64,
    seed: u64,
) -> Result<Vec<CoupleRecord>, DataError> {
    if model.dim() != 2 {
        return Err(DataError::Invalid(format!("couple data needs 2 margins, model has {}", model.dim())));
    }
    if ages.is_empty() {
        return Err(DataError::Invalid("no ages given".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut row = 0;
    let obs = generate_synthetic(
        model,
        |_| {
            let (a1, a2) = ages[row % ages.len()];
            row += 1;
            couple_design(a1, a2).to_vec()
        },
        censoring_rate,
        n,
        seed,
    )?;
    let mut records = observations_to_records(&obs)?;
    // restore the ages exactly rather than through the scaled design
    for (m, r) in records.iter_mut().enumerate() {
        let (a1, a2) = ages[m % ages.len()];
        r.age1 = a1;
        r.age2 = a2;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialDistribution, Margin};
    use crate::phase_type::{GompertzTransform, InitialVector, SubIntensity};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn model() -> MiphModel {
        let s = SubIntensity::new(array![[-2.0, 1.0], [0.0, -1.0]]).unwrap();
        MiphModel::new(
            vec![
                Margin::new(s.clone(), GompertzTransform::new(1.0).unwrap()),
                Margin::new(s, GompertzTransform::new(2.0).unwrap()),
            ],
            InitialDistribution::Fixed(InitialVector::new(array![0.5, 0.5]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn calibration_solves_equation() {
        let ys = [0.5, 1.0, 2.0, 4.0];
        let theta = calibrate_censoring(&ys, 0.3).unwrap();
        let f: f64 = ys.iter().map(|y| 1.0 - (-theta * y).exp()).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(f, 0.3, epsilon = 1e-12);
        assert_eq!(calibrate_censoring(&ys, 0.0).unwrap(), 0.0);
        assert!(calibrate_censoring(&ys, 1.0).is_err());
    }

    #[test]
    fn no_censoring_and_determinism() {
        let m = model();
        let a = generate_synthetic(&m, |_| vec![1.0], 0.0, 200, 9).unwrap();
        assert!(a.indicators().iter().all(|d| *d));
        let b = generate_synthetic(&m, |_| vec![1.0], 0.0, 200, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&m, |_| vec![1.0], 0.0, 200, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn couples_keep_ages() {
        let recs = simulate_couples(&model(), &[(63.0, 61.0), (70.5, 68.0)], 5, 0.2, 1).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[3].age1, 70.5);
        assert!(simulate_couples(&model(), &[(63.0, 61.0)], 0, 0.2, 1).unwrap().is_empty());
    }
}
