//! Ingestion and export: the couple CSV schema, covariate designs, the
//! model JSON format, the Beran estimator and synthetic data.

mod beran;
mod model_file;
mod synthetic;

pub use beran::{beran_estimator, Bandwidth, BeranEstimator};
pub use model_file::{read_model, write_model, ModelFile, FORMAT_TAG};
pub use synthetic::{calibrate_censoring, generate_synthetic, simulate_couples};

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{EstimationError, ObservationSet};
use crate::model::ModelError;
use crate::phase_type::PhaseTypeError;

/// Years per model time unit: an absorption time of 0.01 is one year.
pub const TIME_SCALE: f64 = 100.0;

/// Names of the columns of [`couple_design`].
pub const COUPLE_COVARIATES: [&str; 4] = ["intercept", "age1", "age2", "age1*age2"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid model file: {0}")]
    Model(String),
    #[error("all kernel weights underflow (largest log-weight {max_log_weight:.1}); the query is too far from the data for this bandwidth")]
    KernelUnderflow { max_log_weight: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Distribution(#[from] ModelError),
    #[error(transparent)]
    PhaseType(#[from] PhaseTypeError),
}

impl DataError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// One couple, in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupleRecord {
    pub time1: f64,
    pub time2: f64,
    pub delta1: u8,
    pub delta2: u8,
    pub age1: f64,
    pub age2: f64,
}

impl CoupleRecord {
    fn validate(&self, row: usize) -> Result<(), DataError> {
        let bad = |message: String| Err(DataError::Row { row, message });
        for (name, v) in [("time1", self.time1), ("time2", self.time2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("age1", self.age1), ("age2", self.age2)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("delta1", self.delta1), ("delta2", self.delta2)] {
            if v > 1 {
                return bad(format!("{name} must be 0 or 1, got {v}"));
            }
        }
        Ok(())
    }
}

const COLUMNS: [&str; 6] = ["time1", "time2", "delta1", "delta2", "age1", "age2"];

/// Parses couple records from CSV text. Rows are numbered from 1 after the header.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<CoupleRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Row { row: 0, message: e.to_string() })?
        .clone();
    for col in COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(DataError::MissingColumn(col.to_string()));
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<CoupleRecord>().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::Row { row, message: csv_message(&e, &headers) })?;
        rec.validate(row)?;
        out.push(rec);
    }
    Ok(out)
}

fn csv_message(e: &csv::Error, headers: &csv::StringRecord) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => match err.field() {
            Some(f) => format!("column {}: {}", headers.get(f as usize).unwrap_or("?"), err.kind()),
            None => err.kind().to_string(),
        },
        _ => e.to_string(),
    }
}

pub fn load_records(path: &Path) -> Result<Vec<CoupleRecord>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_records(file)
}

/// Writes records with the header `time1,time2,delta1,delta2,age1,age2`.
/// Floats use the shortest representation that parses back to the same value.
pub fn write_records<W: Write>(writer: W, records: &[CoupleRecord]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COLUMNS).map_err(|e| DataError::Invalid(e.to_string()))?;
    for r in records {
        wtr.write_record([
            r.time1.to_string(),
            r.time2.to_string(),
            r.delta1.to_string(),
            r.delta2.to_string(),
            r.age1.to_string(),
            r.age2.to_string(),
        ])
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    }
    wtr.flush().map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn save_records(path: &Path, records: &[CoupleRecord]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    write_records(file, records)
}

/// Design row `(1, a₁, a₂, a₁·a₂)` with ages in model units (years / 100).
pub fn couple_design(age1_years: f64, age2_years: f64) -> [f64; 4] {
    let a1 = age1_years / TIME_SCALE;
    let a2 = age2_years / TIME_SCALE;
    [1.0, a1, a2, a1 * a2]
}

/// Times scaled to model units and the couple design matrix.
pub fn records_to_observations(records: &[CoupleRecord]) -> Result<ObservationSet, DataError> {
    let n = records.len();
    let mut y = Array2::zeros((n, 2));
    let mut delta = Array2::from_elem((n, 2), false);
    let mut design = Array2::zeros((n, 4));
    for (m, r) in records.iter().enumerate() {
        r.validate(m + 1)?;
        y[[m, 0]] = r.time1 / TIME_SCALE;
        y[[m, 1]] = r.time2 / TIME_SCALE;
        delta[[m, 0]] = r.delta1 == 1;
        delta[[m, 1]] = r.delta2 == 1;
        for (j, v) in couple_design(r.age1, r.age2).into_iter().enumerate() {
            design[[m, j]] = v;
        }
    }
    Ok(ObservationSet::new(y, delta, design)?)
}

/// Inverse of [`records_to_observations`]; needs the couple design layout.
pub fn observations_to_records(obs: &ObservationSet) -> Result<Vec<CoupleRecord>, DataError> {
    if obs.margins() != 2 || obs.covariate_count() != 4 {
        return Err(DataError::Invalid(format!(
            "couple records need 2 margins and 4 design columns, got {} and {}",
            obs.margins(),
            obs.covariate_count()
        )));
    }
    let y = obs.times();
    let delta = obs.indicators();
    let a = obs.covariates();
    Ok((0..obs.len())
        .map(|m| CoupleRecord {
            time1: y[[m, 0]] * TIME_SCALE,
            time2: y[[m, 1]] * TIME_SCALE,
            delta1: delta[[m, 0]] as u8,
            delta2: delta[[m, 1]] as u8,
            age1: a[[m, 1]] * TIME_SCALE,
            age2: a[[m, 2]] * TIME_SCALE,
        })
        .collect())
}

/// Reads a couple CSV straight into observations.
pub fn load_csv(path: &Path) -> Result<ObservationSet, DataError> {
    records_to_observations(&load_records(path)?)
}
