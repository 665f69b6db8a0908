//! Joint mIPH distributions: margins share the initial state and then evolve
//! independently, each with its own sub-intensity matrix and Gompertz time
//! change.
//!
//! Every evaluation takes the initial vector explicitly so the same model can
//! be evaluated for different covariate profiles (see
//! [`MiphModel::initial_for`]).

use ndarray::{Array1, Array2};
use rand::Rng;
use thiserror::Error;

use crate::estimation::RegressionCoefficients;
use crate::linalg::{kron_sum, kron_vec, solve_vec, LinalgError};
use crate::phase_type::{
    sample_path, GompertzTransform, InitialVector, PhaseTypeError, SubIntensity,
};
use crate::quad::{integrate, QuadError, QuadOptions};

/// Values below this are treated as numerically zero in denominators.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Survival level at which conditional-expectation integrals are truncated.
pub const TAIL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("margin index {index} out of range for {d} margins")]
    MarginOutOfRange { index: usize, d: usize },
    #[error("operation needs exactly two margins, model has {0}")]
    NotBivariate(usize),
    #[error("{what} underflowed ({value:e})")]
    Underflow { what: &'static str, value: f64 },
    #[error("conditioning needs at least two margins")]
    NothingLeft,
    #[error("no initial distribution available: {0}")]
    MissingInitial(String),
    #[error(transparent)]
    PhaseType(#[from] PhaseTypeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

/// One coordinate of the joint law.
#[derive(Debug, Clone, PartialEq)]
pub struct Margin {
    pub sub: SubIntensity,
    pub transform: GompertzTransform,
}

impl Margin {
    pub fn new(sub: SubIntensity, transform: GompertzTransform) -> Self {
        Margin { sub, transform }
    }

    /// Per-start-state survival `exp(T g⁻¹(y))·e` and density
    /// `exp(T g⁻¹(y))·t·λ(y)` at `y`.
    pub fn profiles(&self, y: f64) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
        let x = self.transform.inverse(y)?;
        let (surv, dens) = self.sub.state_profiles(x)?;
        Ok((surv, dens * self.transform.intensity(y)))
    }

    pub fn survival_profile(&self, y: f64) -> Result<Array1<f64>, ModelError> {
        Ok(self.profiles(y)?.0)
    }
}

/// Where the per-observation initial vector comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Fixed(InitialVector),
    Regression(RegressionCoefficients),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiphModel {
    margins: Vec<Margin>,
    initial: InitialDistribution,
}

/// What a conditional expectation conditions on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    None,
    /// `Y_margin ≥ threshold`
    Survival { margin: usize, threshold: f64 },
}

impl MiphModel {
    pub fn new(margins: Vec<Margin>, initial: InitialDistribution) -> Result<Self, ModelError> {
        let p = match margins.first() {
            Some(m) => m.sub.dim(),
            None => return Err(ModelError::DimensionMismatch("no margins".into())),
        };
        if let Some(bad) = margins.iter().find(|m| m.sub.dim() != p) {
            return Err(ModelError::DimensionMismatch(format!(
                "margins have dimensions {p} and {}",
                bad.sub.dim()
            )));
        }
        let q = match &initial {
            InitialDistribution::Fixed(pi) => pi.len(),
            InitialDistribution::Regression(g) => g.states(),
        };
        if q != p {
            return Err(ModelError::DimensionMismatch(format!(
                "initial distribution has {q} states, margins have {p}"
            )));
        }
        Ok(MiphModel { margins, initial })
    }

    /// Number of transient states shared by all margins.
    pub fn states(&self) -> usize {
        self.margins[0].sub.dim()
    }

    /// Number of margins `d`.
    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    pub fn margins(&self) -> &[Margin] {
        &self.margins
    }

    pub fn margin(&self, i: usize) -> Result<&Margin, ModelError> {
        self.margins
            .get(i)
            .ok_or(ModelError::MarginOutOfRange { index: i, d: self.dim() })
    }

    pub fn initial(&self) -> &InitialDistribution {
        &self.initial
    }

    pub fn betas(&self) -> Vec<f64> {
        self.margins.iter().map(|m| m.transform.beta()).collect()
    }

    /// Initial vector for one design row (ignored for fixed initial vectors).
    pub fn initial_for(&self, covariates: &[f64]) -> Result<InitialVector, ModelError> {
        match &self.initial {
            InitialDistribution::Fixed(pi) => Ok(pi.clone()),
            InitialDistribution::Regression(g) => Ok(g.initial_vector(covariates)?),
        }
    }

    /// The fixed initial vector, if the model has one.
    pub fn fixed_initial(&self) -> Option<&InitialVector> {
        match &self.initial {
            InitialDistribution::Fixed(pi) => Some(pi),
            InitialDistribution::Regression(_) => None,
        }
    }

    fn check_pi(&self, pi: &InitialVector) -> Result<(), ModelError> {
        if pi.len() != self.states() {
            return Err(ModelError::DimensionMismatch(format!(
                "initial vector has {} states, model has {}",
                pi.len(),
                self.states()
            )));
        }
        Ok(())
    }

    fn check_point(&self, pi: &InitialVector, y: &[f64]) -> Result<(), ModelError> {
        self.check_pi(pi)?;
        if y.len() != self.dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "point has {} coordinates, model has {} margins",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn pair(&self, k: usize, l: usize) -> Result<(&Margin, &Margin), ModelError> {
        if k == l {
            return Err(ModelError::DimensionMismatch(format!(
                "dependence measures need two distinct margins, got ({k},{l})"
            )));
        }
        Ok((self.margin(k)?, self.margin(l)?))
    }

    fn bivariate(&self) -> Result<(&Margin, &Margin), ModelError> {
        if self.dim() != 2 {
            return Err(ModelError::NotBivariate(self.dim()));
        }
        Ok((&self.margins[0], &self.margins[1]))
    }

    /// `Σ_j π_j Π_i factor_i[j]`.
    fn mix(pi: &InitialVector, factors: &[Array1<f64>]) -> f64 {
        let mut prod = pi.as_array().clone();
        for f in factors {
            prod *= f;
        }
        prod.sum()
    }

    /// Joint density `Σ_j π_j Π_i e_jᵀ exp(T_i g_i⁻¹(y_i)) t_i λ_i(y_i)`.
    pub fn joint_density(&self, pi: &InitialVector, y: &[f64]) -> Result<f64, ModelError> {
        self.check_point(pi, y)?;
        let factors = self
            .margins
            .iter()
            .zip(y)
            .map(|(m, &yi)| m.profiles(yi).map(|(_, d)| d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::mix(pi, &factors).max(0.0))
    }

    /// Joint survival `P(Y_1 > y_1, …, Y_d > y_d)`.
    pub fn joint_survival(&self, pi: &InitialVector, y: &[f64]) -> Result<f64, ModelError> {
        self.check_point(pi, y)?;
        let factors = self
            .margins
            .iter()
            .zip(y)
            .map(|(m, &yi)| m.survival_profile(yi))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::mix(pi, &factors).clamp(0.0, 1.0))
    }

    /// Joint distribution function `P(Y_1 ≤ y_1, …, Y_d ≤ y_d)`.
    pub fn joint_cdf(&self, pi: &InitialVector, y: &[f64]) -> Result<f64, ModelError> {
        self.check_point(pi, y)?;
        let factors = self
            .margins
            .iter()
            .zip(y)
            .map(|(m, &yi)| m.survival_profile(yi).map(|s| s.mapv(|v| 1.0 - v)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::mix(pi, &factors).clamp(0.0, 1.0))
    }

    pub fn marginal_survival(
        &self,
        pi: &InitialVector,
        i: usize,
        y: f64,
    ) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let s = self.margin(i)?.survival_profile(y)?;
        Ok(pi.as_array().dot(&s).clamp(0.0, 1.0))
    }

    pub fn marginal_density(&self, pi: &InitialVector, i: usize, y: f64) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let (_, d) = self.margin(i)?.profiles(y)?;
        Ok(pi.as_array().dot(&d).max(0.0))
    }

    fn without_margin(&self, l: usize, pi: InitialVector) -> Result<MiphModel, ModelError> {
        if self.dim() < 2 {
            return Err(ModelError::NothingLeft);
        }
        let margins = self
            .margins
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != l)
            .map(|(_, m)| m.clone())
            .collect();
        MiphModel::new(margins, InitialDistribution::Fixed(pi))
    }

    /// Law of the remaining margins given `Y_l ≥ y_l`, with its initial vector `ν`.
    pub fn condition_on_survival(
        &self,
        pi: &InitialVector,
        l: usize,
        y_l: f64,
    ) -> Result<(MiphModel, InitialVector), ModelError> {
        self.check_pi(pi)?;
        if self.dim() < 2 {
            return Err(ModelError::NothingLeft);
        }
        let s = self.margin(l)?.survival_profile(y_l)?;
        let nu = reweight(pi, &s, "conditioning survival")?;
        Ok((self.without_margin(l, nu.clone())?, nu))
    }

    /// Law of the remaining margins given `Y_l = y_l`, with its initial vector `α`.
    pub fn condition_on_value(
        &self,
        pi: &InitialVector,
        l: usize,
        y_l: f64,
    ) -> Result<(MiphModel, InitialVector), ModelError> {
        self.check_pi(pi)?;
        if self.dim() < 2 {
            return Err(ModelError::NothingLeft);
        }
        let (_, d) = self.margin(l)?.profiles(y_l)?;
        let alpha = reweight(pi, &d, "conditioning density")?;
        Ok((self.without_margin(l, alpha.clone())?, alpha))
    }

    /// Kendall's tau between margins `k` and `l`.
    ///
    /// Depends only on the PH representation: the Gompertz changes of time
    /// are increasing and leave the copula untouched.
    pub fn kendall_tau(&self, pi: &InitialVector, k: usize, l: usize) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let (mk, ml) = self.pair(k, l)?;
        let vk = concordance_vector(&mk.sub)?;
        let vl = concordance_vector(&ml.sub)?;
        let w = kron_vec(pi.as_array(), pi.as_array());
        let tau = 4.0 * (&w * &vk * &vl).sum() - 1.0;
        Ok(tau.clamp(-1.0, 1.0))
    }

    /// Spearman's rho between margins `k` and `l`.
    pub fn spearman_rho(&self, pi: &InitialVector, k: usize, l: usize) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let (mk, ml) = self.pair(k, l)?;
        let p = self.states();
        let vk = concordance_vector(&mk.sub)?;
        let vl = concordance_vector(&ml.sub)?;
        let pa = pi.as_array();
        // (π ⊗ e_jᵀ)·v = Σ_i π_i v[i·p + j]
        let project = |v: &Array1<f64>, j: usize| -> f64 { (0..p).map(|i| pa[i] * v[i * p + j]).sum() };
        let total: f64 = (0..p)
            .map(|j| pa[j] * (1.0 - project(&vk, j)) * (1.0 - project(&vl, j)))
            .sum();
        Ok((12.0 * total - 3.0).clamp(-1.0, 1.0))
    }

    /// `Ψ₁(y₁, y₂) = S(y₁, y₂) / (S₁(y₁) S₂(y₂))`.
    pub fn psi1(&self, pi: &InitialVector, y1: f64, y2: f64) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let (m1, m2) = self.bivariate()?;
        let s1 = m1.survival_profile(y1)?;
        let s2 = m2.survival_profile(y2)?;
        let pa = pi.as_array();
        let joint = (pa * &s1 * &s2).sum();
        let marg1 = pa.dot(&s1);
        let marg2 = pa.dot(&s2);
        let denom = marg1 * marg2;
        if !(denom > UNDERFLOW_FLOOR) {
            return Err(ModelError::Underflow { what: "product of marginal survivals", value: denom });
        }
        Ok(joint / denom)
    }

    /// `Ψ₂ⁱ(y) = E(Y_i | Y_l ≥ y) / E(Y_i)` where `l` is the other margin.
    pub fn psi2(&self, pi: &InitialVector, i: usize, y: f64) -> Result<f64, ModelError> {
        self.bivariate()?;
        let l = match i {
            0 => 1,
            1 => 0,
            _ => return Err(ModelError::MarginOutOfRange { index: i, d: 2 }),
        };
        let base = self.conditional_expectation(pi, i, Condition::None)?;
        let cond = self.conditional_expectation(pi, i, Condition::Survival { margin: l, threshold: y })?;
        if !(base > UNDERFLOW_FLOOR) {
            return Err(ModelError::Underflow { what: "unconditional mean", value: base });
        }
        Ok(cond / base)
    }

    /// Clayton's cross-ratio on the diagonal, `CR(u, u)`.
    pub fn cross_ratio(&self, pi: &InitialVector, u: f64) -> Result<f64, ModelError> {
        self.cross_ratio_at(pi, u, u)
    }

    /// `CR(y₁, y₂) = S·∂²S/∂y₁∂y₂ / (∂S/∂y₁ · ∂S/∂y₂)` with all partial
    /// derivatives taken of the joint survival function.
    ///
    /// With per-state survivals `a, c` and densities `b, d` of the two margins
    /// the excess over one is
    /// `Σ_{j<k} π_j π_k (a_j b_k − a_k b_j)(c_j d_k − c_k d_j) / (Σπbc · Σπad)`,
    /// which is evaluated directly so that values close to one keep their
    /// relative accuracy.
    pub fn cross_ratio_at(&self, pi: &InitialVector, y1: f64, y2: f64) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let (m1, m2) = self.bivariate()?;
        let (a, b) = m1.profiles(y1)?;
        let (c, d) = m2.profiles(y2)?;
        let pa = pi.as_array();
        let p = self.states();
        let d1 = (pa * &b * &c).sum();
        let d2 = (pa * &a * &d).sum();
        if !(d1 > UNDERFLOW_FLOOR && d2 > UNDERFLOW_FLOOR) {
            return Err(ModelError::Underflow {
                what: "partial derivative of the joint survival",
                value: d1.min(d2),
            });
        }
        let mut excess = 0.0;
        for j in 0..p {
            for k in (j + 1)..p {
                excess += pa[j] * pa[k] * (a[j] * b[k] - a[k] * b[j]) * (c[j] * d[k] - c[k] * d[j]);
            }
        }
        // scale both factors before multiplying to avoid underflow of d1·d2
        Ok(1.0 + (excess / d1) / d2)
    }

    /// `E(Y_i | condition)` by quadrature of the conditional survival function.
    pub fn conditional_expectation(
        &self,
        pi: &InitialVector,
        i: usize,
        condition: Condition,
    ) -> Result<f64, ModelError> {
        self.check_pi(pi)?;
        let margin = self.margin(i)?;
        let weights = match condition {
            Condition::None => pi.clone(),
            Condition::Survival { margin: l, threshold } => {
                if l == i {
                    return Err(ModelError::DimensionMismatch(format!(
                        "cannot condition margin {i} on itself"
                    )));
                }
                let s = self.margin(l)?.survival_profile(threshold)?;
                reweight(pi, &s, "conditioning survival")?
            }
        };
        expected_lifetime(margin, &weights)
    }

    /// Draws `n` joint lifetimes: a shared start state from `pi`, then
    /// independent paths per margin mapped through the Gompertz change of time.
    pub fn sample_joint<R: Rng + ?Sized>(
        &self,
        pi: &InitialVector,
        rng: &mut R,
        n: usize,
    ) -> Result<Array2<f64>, ModelError> {
        self.check_pi(pi)?;
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.outer_iter_mut() {
            let start = pi.sample_state(rng);
            for (slot, m) in row.iter_mut().zip(&self.margins) {
                let x = sample_path(&m.sub, start, rng)?;
                *slot = m.transform.forward(x)?;
            }
        }
        Ok(out)
    }
}

/// `π_j w_j / Σ_k π_k w_k`.
fn reweight(
    pi: &InitialVector,
    w: &Array1<f64>,
    what: &'static str,
) -> Result<InitialVector, ModelError> {
    let num = pi.as_array() * w;
    let total = num.sum();
    if !(total > UNDERFLOW_FLOOR) {
        return Err(ModelError::Underflow { what, value: total });
    }
    Ok(InitialVector::normalized(num)?)
}

/// `[−(T ⊕ T)]⁻¹ (e ⊗ t)`: entry `i·p + j` is the probability that an
/// independent copy started in `j` is absorbed before one started in `i`.
pub fn concordance_vector(sub: &SubIntensity) -> Result<Array1<f64>, ModelError> {
    let p = sub.dim();
    let ks = -kron_sum(sub.matrix(), sub.matrix())?;
    let rhs = kron_vec(&Array1::ones(p), sub.exit_rates());
    Ok(solve_vec(&ks, &rhs)?)
}

/// `∫₀^∞ P(Y > y) dy` for one margin started from `weights`.
fn expected_lifetime(margin: &Margin, weights: &InitialVector) -> Result<f64, ModelError> {
    let surv = |y: f64| -> Result<f64, ModelError> {
        let s = margin.survival_profile(y)?;
        Ok(weights.as_array().dot(&s).clamp(0.0, 1.0))
    };
    // start from the transformed PH mean and double until the tail is negligible
    let mean_x = weights.as_array().dot(&margin.sub.state_means()?);
    let mut upper = margin.transform.forward(mean_x.max(0.0))?.max(1e-6);
    let mut doublings = 0;
    loop {
        match surv(upper) {
            Ok(s) if s < TAIL_CUTOFF => break,
            Ok(_) => {}
            // overflow of g⁻¹ means the survival is already zero at this point
            Err(ModelError::PhaseType(PhaseTypeError::Overflow { .. })) => break,
            Err(e) => return Err(e),
        }
        upper *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(ModelError::Quadrature(QuadError::NoConvergence {
                subdivisions: 0,
                estimate: f64::INFINITY,
                error: f64::INFINITY,
            }));
        }
    }
    let opts = QuadOptions { initial_panels: 16, ..QuadOptions::default() };
    let q = integrate(
        |y| match surv(y) {
            Ok(v) => v,
            Err(ModelError::PhaseType(PhaseTypeError::Overflow { .. })) => 0.0,
            Err(_) => f64::NAN,
        },
        0.0,
        upper,
        opts,
    )?;
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn independent(rate1: f64, rate2: f64, beta: f64) -> MiphModel {
        let g = GompertzTransform::new(beta).unwrap();
        MiphModel::new(
            vec![
                Margin::new(SubIntensity::new(array![[-rate1]]).unwrap(), g),
                Margin::new(SubIntensity::new(array![[-rate2]]).unwrap(), g),
            ],
            InitialDistribution::Fixed(InitialVector::unit(1, 0)),
        )
        .unwrap()
    }

    fn three_state() -> (MiphModel, InitialVector) {
        let s1 = SubIntensity::new(array![[-2.0, 1.5, 0.0], [0.0, -1.0, 0.8], [0.0, 0.0, -0.5]])
            .unwrap();
        let s2 = SubIntensity::new(array![[-0.7, 0.6, 0.0], [0.0, -3.0, 1.0], [0.0, 0.0, -1.2]])
            .unwrap();
        let pi = InitialVector::new(array![0.5, 0.3, 0.2]).unwrap();
        let m = MiphModel::new(
            vec![
                Margin::new(s1, GompertzTransform::new(1.5).unwrap()),
                Margin::new(s2, GompertzTransform::new(0.7).unwrap()),
            ],
            InitialDistribution::Fixed(pi.clone()),
        )
        .unwrap();
        (m, pi)
    }

    #[test]
    fn independent_exponentials() {
        let m = independent(1.0, 1.0, 1e-12);
        let pi = InitialVector::unit(1, 0);
        let d = m.joint_density(&pi, &[0.3, 1.1]).unwrap();
        assert_abs_diff_eq!(d, (-1.4f64).exp(), epsilon = 1e-9);
        assert_eq!(m.joint_survival(&pi, &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(m.joint_cdf(&pi, &[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(m.joint_cdf(&pi, &[1e3, 1e3]).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn dimension_errors() {
        let (m, pi) = three_state();
        assert!(matches!(
            m.joint_survival(&pi, &[0.1]),
            Err(ModelError::DimensionMismatch(_))
        ));
        assert!(m.joint_density(&InitialVector::uniform(2), &[0.1, 0.1]).is_err());
        assert!(m.kendall_tau(&pi, 0, 0).is_err());
        assert!(m.kendall_tau(&pi, 0, 5).is_err());
    }

    #[test]
    fn density_with_zero_component_is_finite() {
        let (m, pi) = three_state();
        let d = m.joint_density(&pi, &[0.0, 0.4]).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn conditioning_at_zero_keeps_pi() {
        let (m, pi) = three_state();
        let (reduced, nu) = m.condition_on_survival(&pi, 0, 0.0).unwrap();
        assert_eq!(nu, pi);
        assert_eq!(reduced.dim(), 1);
    }

    #[test]
    fn conditioning_single_state() {
        let m = independent(1.0, 2.0, 0.5);
        let pi = InitialVector::unit(1, 0);
        let (_, nu) = m.condition_on_survival(&pi, 1, 0.7).unwrap();
        assert_eq!(nu.as_array(), &array![1.0]);
        let (_, alpha) = m.condition_on_value(&pi, 0, 0.7).unwrap();
        assert_eq!(alpha.as_array(), &array![1.0]);
    }

    #[test]
    fn conditioning_on_value_at_zero_with_equal_exits() {
        let s = SubIntensity::new(array![[-2.0, 1.0], [0.0, -1.0]]).unwrap();
        let g = GompertzTransform::new(1.0).unwrap();
        let pi = InitialVector::new(array![0.4, 0.6]).unwrap();
        let m = MiphModel::new(
            vec![Margin::new(s.clone(), g), Margin::new(s, g)],
            InitialDistribution::Fixed(pi.clone()),
        )
        .unwrap();
        let (_, alpha) = m.condition_on_value(&pi, 0, 0.0).unwrap();
        assert_abs_diff_eq!(alpha.as_array()[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn conditioning_reports_underflow() {
        let m = independent(1.0, 1.0, 50.0);
        let pi = InitialVector::unit(1, 0);
        let err = m.condition_on_survival(&pi, 0, 0.5).unwrap_err();
        assert!(matches!(err, ModelError::Underflow { .. }));
    }

    #[test]
    fn single_state_measures_are_neutral() {
        let m = independent(0.3, 2.5, 4.0);
        let pi = InitialVector::unit(1, 0);
        assert_abs_diff_eq!(m.kendall_tau(&pi, 0, 1).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.spearman_rho(&pi, 0, 1).unwrap(), 0.0, epsilon = 1e-14);
        for y in [0.0, 0.1, 0.3] {
            assert_abs_diff_eq!(m.psi1(&pi, y, 0.2).unwrap(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.cross_ratio(&pi, y).unwrap(), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(m.psi2(&pi, 0, y).unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn psi_at_origin() {
        let (m, pi) = three_state();
        assert_abs_diff_eq!(m.psi1(&pi, 0.0, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.psi2(&pi, 1, 0.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cross_ratio_matches_direct_ratio_at_origin() {
        let (m, pi) = three_state();
        let pa = pi.as_array();
        let (a, b) = m.margins[0].profiles(0.0).unwrap();
        let (c, d) = m.margins[1].profiles(0.0).unwrap();
        let s = (pa * &a * &c).sum();
        let f = (pa * &b * &d).sum();
        let direct = s * f / ((pa * &b * &c).sum() * (pa * &a * &d).sum());
        assert_abs_diff_eq!(m.cross_ratio(&pi, 0.0).unwrap(), direct, epsilon = 1e-13);
    }

    #[test]
    fn exponential_mean_by_quadrature() {
        let m = independent(1.0, 1.0, 1e-12);
        let pi = InitialVector::unit(1, 0);
        let mean = m.conditional_expectation(&pi, 0, Condition::None).unwrap();
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-7);
        let cond = m
            .conditional_expectation(&pi, 0, Condition::Survival { margin: 1, threshold: 0.0 })
            .unwrap();
        assert_abs_diff_eq!(cond, mean, epsilon = 1e-14);
    }

    #[test]
    fn samples_positive() {
        use rand::SeedableRng;
        let (m, pi) = three_state();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = m.sample_joint(&pi, &mut rng, 2000).unwrap();
        assert!(s.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn bivariate_only_measures() {
        let s = SubIntensity::new(array![[-1.0]]).unwrap();
        let g = GompertzTransform::new(1.0).unwrap();
        let m = MiphModel::new(
            vec![Margin::new(s.clone(), g), Margin::new(s.clone(), g), Margin::new(s, g)],
            InitialDistribution::Fixed(InitialVector::unit(1, 0)),
        )
        .unwrap();
        let pi = InitialVector::unit(1, 0);
        assert!(matches!(m.psi1(&pi, 0.1, 0.1), Err(ModelError::NotBivariate(3))));
        assert!(m.kendall_tau(&pi, 0, 2).is_ok());
    }
}
