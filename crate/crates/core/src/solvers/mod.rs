//! Linear-model fitting shared by the regression-style methods.
//!
//! Features are standardized internally (zero mean, unit variance per
//! column; constant columns are only centered) and penalties act on the
//! standardized coefficients. Returned models are expressed in the original
//! feature units.

mod logistic;
mod quantile;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use logistic::{fit_logistic, logistic_objective, sigmoid};
pub use quantile::{cross_validate_penalty, CvOutcome, fit_quantile, lower_quantile, pinball, quantile_objective};

/// `intercept + weights · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn intercept_only(intercept: f64) -> Self {
        LinearModel {
            intercept,
            weights: Vec::new(),
            feature_names: Vec::new(),
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stopping threshold: gradient norm for the logistic fitter, primal and
    /// dual residual norms for the quantile fitter.
    pub tol: f64,
    pub l1_penalty: f64,
    pub l2_penalty: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 1000,
            tol: 1e-6,
            l1_penalty: 0.0,
            l2_penalty: 0.0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.l1_penalty >= 0.0) || !(self.l2_penalty >= 0.0) {
            return Err(Error::InvalidArgument("penalties must be non-negative".into()));
        }
        Ok(())
    }
}

/// Convergence information returned next to a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final value of the stopping statistic.
    pub residual: f64,
}

/// Row-major feature matrix: `rows[i]` holds the features of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Features {
    pub fn new(n_rows: usize, names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let n_cols = names.len();
        if data.len() != n_rows * n_cols {
            return Err(Error::InvalidArgument(format!(
                "feature data has {} values, expected {n_rows} x {n_cols}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        Ok(Features {
            n_rows,
            n_cols,
            data,
            names,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} has {} features, expected {n_cols}",
                rows[bad].len()
            )));
        }
        Features::new(rows.len(), names, rows.concat())
    }

    /// No columns: fitters reduce to an intercept.
    pub fn empty(n_rows: usize) -> Self {
        Features {
            n_rows,
            n_cols: 0,
            data: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Features {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Features {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
            names: self.names.clone(),
        }
    }
}

/// Column centering and scaling fitted on training features.
#[derive(Debug, Clone)]
pub(crate) struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn fit(x: &Features) -> Self {
        let n = x.n_rows.max(1) as f64;
        let mut means = vec![0.0; x.n_cols];
        for i in 0..x.n_rows {
            for (m, v) in means.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; x.n_cols];
        for i in 0..x.n_rows {
            for ((s, v), m) in vars.iter_mut().zip(x.row(i)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { means, scales }
    }

    /// `[1 | Z]` design matrix with standardized columns.
    pub(crate) fn design(&self, x: &Features) -> DMatrix<f64> {
        DMatrix::from_fn(x.n_rows, x.n_cols + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                (x.row(i)[j - 1] - self.means[j - 1]) / self.scales[j - 1]
            }
        })
    }

    /// Converts standardized coefficients `[b, w]` back to original units.
    pub(crate) fn unscale(&self, coef: &DVector<f64>, names: &[String]) -> LinearModel {
        let weights: Vec<f64> = (0..self.means.len())
            .map(|j| coef[j + 1] / self.scales[j])
            .collect();
        let shift: f64 = weights.iter().zip(&self.means).map(|(w, m)| w * m).sum();
        LinearModel {
            intercept: coef[0] - shift,
            weights,
            feature_names: names.to_vec(),
        }
    }
}
