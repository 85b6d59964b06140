//! Bayesian logistic regression: posterior density, NUTS, Laplace and MLE.

pub mod diagnostics;
mod draws;
mod newton;
pub mod nuts;
mod posterior;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;

pub use draws::{diagnostics_path, ChainStats, DrawsSummary, PosteriorDraws};
pub use newton::{laplace_fit, mle_fit, LaplaceFit, NewtonConfig};
pub use nuts::{nuts_sample, SamplerConfig};
pub use posterior::{grad_log_posterior, log_posterior, LogDensity, LogisticPosterior};

/// Slopes and intercept of a logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl Coefficients {
    pub fn new(beta: Vec<f64>, intercept: f64) -> Self {
        Coefficients { beta, intercept }
    }

    pub fn zeros(d: usize) -> Self {
        Coefficients::new(vec![0.0; d], 0.0)
    }

    /// Splits `[beta.., intercept]`.
    ///
    /// # Panics
    /// If `theta` is empty.
    pub fn from_slice(theta: &[f64]) -> Self {
        let (intercept, beta) = theta.split_last().expect("coefficient vector is empty");
        Coefficients::new(beta.to_vec(), *intercept)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.intercept);
        v
    }

    /// Number of parameters including the intercept.
    pub fn dim(&self) -> usize {
        self.beta.len() + 1
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len(),
                got: x.ncols(),
            });
        }
        let eta = x * DVector::from_column_slice(&self.beta);
        Ok(eta.iter().map(|e| e + self.intercept).collect())
    }
}

/// Anything that produces `P(y = 1 | x)` for each row of `x`.
pub trait Predictor {
    fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

impl Predictor for Coefficients {
    fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.linear_predictor(x)?.into_iter().map(sigmoid).collect())
    }
}
