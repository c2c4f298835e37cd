//! Temporal feature extraction from component time courses.
//!
//! Given a `time points x components` matrix this module derives static
//! functional network connectivity ([`fnc`]), its sliding-window dynamic
//! counterpart ([`dfnc`]) and multi-scale dispersion entropy ([`msde`]).

mod connectivity;
mod entropy;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use connectivity::{dfnc, fisher_z, fnc, pearson, DfncMatrix, DfncWarning, FncMatrix, FISHER_Z_CLIP};
pub use entropy::{coarse_grain, dispersion_entropy, map_to_classes, msde, ncdf_map, Discretization, MsdeMatrix, MsdeParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("time courses need at least 2 time points and 2 components, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("expected {expected} values, got {found}")]
    Ragged { expected: usize, found: usize },
    #[error("non-finite value at time point {row}, component {col}")]
    NonFinite { row: usize, col: usize },
    #[error("component {component} has zero variance")]
    ZeroVariance { component: usize },
    #[error("window {window} is longer than the series ({len} time points)")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
    #[error("series of length {len} is too short; need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("label {label} outside 1..={classes}")]
    InvalidLabel { label: u32, classes: u32 },
    #[error("scale {scale} leaves component {component} too short for the embedding")]
    ScaleTooLarge { scale: usize, component: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: alloc::vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if data.len() != rows * cols {
            return Err(FeatureError::Ragged { expected: rows * cols, found: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }
}

/// Component time courses: rows are time points, columns are components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCourses {
    pub subject_id: String,
    pub data: Matrix,
}

impl TimeCourses {
    pub fn new(subject_id: impl Into<String>, data: Matrix) -> Result<Self, FeatureError> {
        if data.rows < 2 || data.cols < 2 {
            return Err(FeatureError::TooSmall { rows: data.rows, cols: data.cols });
        }
        if let Some(i) = data.data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: i / data.cols, col: i % data.cols });
        }
        Ok(TimeCourses { subject_id: subject_id.into(), data })
    }

    pub fn time_points(&self) -> usize {
        self.data.rows
    }

    pub fn components(&self) -> usize {
        self.data.cols
    }

    /// Per-component z-scores (population standard deviation); constant
    /// components map to zeros.
    pub fn zscored(&self) -> Matrix {
        let mut out = self.data.clone();
        for c in 0..self.data.cols {
            let col = self.data.column(c);
            let mean = mean(&col);
            let sd = libm::sqrt(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64);
            for (r, v) in col.iter().enumerate() {
                out.set(r, c, if sd > 0.0 { (v - mean) / sd } else { 0.0 });
            }
        }
        out
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
