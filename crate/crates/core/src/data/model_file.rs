//! JSON serialisation of fitted models (`"format": "miph-v1"`).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, COUPLE_COVARIATES, TIME_SCALE};
use crate::estimation::RegressionCoefficients;
use crate::model::{InitialDistribution, Margin, MiphModel};
use crate::phase_type::{matrix_rows, GompertzTransform, InitialVector, SubIntensity};

pub const FORMAT_TAG: &str = "miph-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialFile {
    Fixed {
        pi: Vec<f64>,
    },
    Regression {
        covariates: Vec<String>,
        /// `p × g`, first row zero.
        gamma: Vec<Vec<f64>>,
    },
}

/// On-disk layout. Times are in model units; `time_scale` years make one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub time_scale: f64,
    pub states: usize,
    /// One `p × p` sub-intensity matrix per margin, row-major nested arrays.
    pub sub_intensities: Vec<Vec<Vec<f64>>>,
    pub betas: Vec<f64>,
    pub initial: InitialFile,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>, DataError> {
    let r = rows.len();
    let c = rows.first().map(|v| v.len()).unwrap_or(0);
    if rows.iter().any(|v| v.len() != c) {
        return Err(DataError::Model(format!("{what} has ragged rows")));
    }
    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| DataError::Model(format!("{what}: {e}")))
}

impl ModelFile {
    pub fn from_model(model: &MiphModel) -> Self {
        let initial = match model.initial() {
            InitialDistribution::Fixed(pi) => InitialFile::Fixed { pi: pi.as_array().to_vec() },
            InitialDistribution::Regression(g) => InitialFile::Regression {
                covariates: if g.covariate_count() == COUPLE_COVARIATES.len() {
                    COUPLE_COVARIATES.iter().map(|s| s.to_string()).collect()
                } else {
                    (0..g.covariate_count()).map(|j| format!("x{j}")).collect()
                },
                gamma: matrix_rows(g.matrix()),
            },
        };
        ModelFile {
            format: FORMAT_TAG.to_string(),
            time_scale: TIME_SCALE,
            states: model.states(),
            sub_intensities: model.margins().iter().map(|m| matrix_rows(m.sub.matrix())).collect(),
            betas: model.betas(),
            initial,
        }
    }

    pub fn to_model(&self) -> Result<MiphModel, DataError> {
        if self.format != FORMAT_TAG {
            return Err(DataError::Model(format!(
                "unsupported format `{}` (expected `{FORMAT_TAG}`)",
                self.format
            )));
        }
        if self.time_scale != TIME_SCALE {
            return Err(DataError::Model(format!(
                "time_scale {} is not supported (expected {TIME_SCALE})",
                self.time_scale
            )));
        }
        if self.sub_intensities.len() != self.betas.len() {
            return Err(DataError::Model(format!(
                "{} sub-intensity matrices but {} betas",
                self.sub_intensities.len(),
                self.betas.len()
            )));
        }
        let margins = self
            .sub_intensities
            .iter()
            .zip(&self.betas)
            .enumerate()
            .map(|(i, (rows, &beta))| {
                let t = to_matrix(rows, &format!("sub_intensities[{i}]"))?;
                if t.nrows() != self.states {
                    return Err(DataError::Model(format!(
                        "sub_intensities[{i}] is {}x{}, states = {}",
                        t.nrows(),
                        t.ncols(),
                        self.states
                    )));
                }
                Ok(Margin::new(SubIntensity::new(t)?, GompertzTransform::new(beta)?))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        let initial = match &self.initial {
            InitialFile::Fixed { pi } => InitialDistribution::Fixed(InitialVector::new(pi.clone())?),
            InitialFile::Regression { covariates, gamma } => {
                let g = to_matrix(gamma, "gamma")?;
                if g.ncols() != covariates.len() {
                    return Err(DataError::Model(format!(
                        "gamma has {} columns but {} covariates are named",
                        g.ncols(),
                        covariates.len()
                    )));
                }
                InitialDistribution::Regression(
                    RegressionCoefficients::new(g).map_err(|e| DataError::Model(e.to_string()))?,
                )
            }
        };
        Ok(MiphModel::new(margins, initial)?)
    }
}

pub fn read_model(path: &Path) -> Result<MiphModel, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| DataError::Model(e.to_string()))?;
    file.to_model()
}

pub fn write_model(path: &Path, model: &MiphModel) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(&ModelFile::from_model(model))
        .map_err(|e| DataError::Model(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
}
