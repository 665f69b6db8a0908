//! Multivariate inhomogeneous phase-type (mIPH) distributions for joint
//! lifetimes: evaluation, dependence measures, and fitting from
//! right-censored data with covariate-dependent initial vectors.
//!
//! Time is measured in model units throughout; the couple data convention
//! is one unit per hundred years (see [`data::TIME_SCALE`]).

pub mod data;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod phase_type;
pub mod quad;

pub use estimation::{fit, FitConfig, FitReport, ObservationSet, RegressionCoefficients};
pub use model::{Condition, InitialDistribution, Margin, MiphModel};
pub use phase_type::{GompertzTransform, InitialVector, Structure, SubIntensity};
