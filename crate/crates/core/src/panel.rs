//! Time-indexed regression data and time-varying coefficient storage.

use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};

/// Response `y_t` and regressors `x_{t,j}` for `t = 1..T`, `j = 1..p`.
///
/// Regressors are stored column-major, so `column(j)` is a contiguous slice.
/// Indices are zero-based throughout the API.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionPanel {
    y: Vec<f64>,
    x: Vec<f64>,
    n_obs: usize,
    n_features: usize,
}

impl RegressionPanel {
    /// Build from a response and regressor rows (`rows[t][j] = x_{t,j}`).
    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(IflError::shape(
                format!("{} regressor rows", y.len()),
                format!("{} rows", rows.len()),
            ));
        }
        let p = rows.first().map_or(0, Vec::len);
        if let Some((t, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(IflError::shape(
                format!("{p} regressors in every row"),
                format!("{} in row {}", row.len(), t + 1),
            ));
        }
        let n = y.len();
        let mut x = vec![0.0; n * p];
        for (t, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                x[j * n + t] = v;
            }
        }
        Self::from_columns(y, x, p)
    }

    /// Build from a response and a column-major regressor buffer (`x[j*T + t]`).
    pub fn from_columns(y: Vec<f64>, x: Vec<f64>, n_features: usize) -> Result<Self> {
        let n_obs = y.len();
        if n_obs < 2 {
            return Err(IflError::InvalidPanel(format!(
                "need at least 2 observations, got {n_obs}"
            )));
        }
        if n_features == 0 {
            return Err(IflError::InvalidPanel("need at least one regressor".into()));
        }
        if x.len() != n_obs * n_features {
            return Err(IflError::shape(
                format!("{} regressor values", n_obs * n_features),
                x.len(),
            ));
        }
        if let Some(t) = y.iter().position(|v| !v.is_finite()) {
            return Err(IflError::InvalidPanel(format!(
                "non-finite response at t = {}",
                t + 1
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(IflError::InvalidPanel(format!(
                "non-finite regressor at t = {}, j = {}",
                i % n_obs + 1,
                i / n_obs + 1
            )));
        }
        Ok(Self {
            y,
            x,
            n_obs,
            n_features,
        })
    }

    /// Number of time steps `T`.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Number of candidate regressors `p`.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self, t: usize, j: usize) -> f64 {
        self.x[j * self.n_obs + t]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.x[j * self.n_obs..(j + 1) * self.n_obs]
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        (0..self.n_features).map(|j| self.x(t, j)).collect()
    }

    /// Fitted values `Σ_j x_{t,j} β_{t,j}` for a time-varying coefficient matrix.
    pub fn predict(&self, coefs: &CoefficientMatrix) -> Vec<f64> {
        let mut out = vec![0.0; self.n_obs];
        for j in 0..self.n_features {
            let col = self.column(j);
            let beta = coefs.component(j);
            for t in 0..self.n_obs {
                out[t] += col[t] * beta[t];
            }
        }
        out
    }
}

/// Coefficients `β_{t,j}` stored as `vec(B)` with `B` of shape `p × T`,
/// i.e. component-major: `b[j*T + t] = β_{t,j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix {
    n_obs: usize,
    n_features: usize,
    b: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn zeros(n_obs: usize, n_features: usize) -> Self {
        Self {
            n_obs,
            n_features,
            b: vec![0.0; n_obs * n_features],
        }
    }

    /// Inverse of [`CoefficientMatrix::as_vec`].
    pub fn from_vec(n_obs: usize, n_features: usize, b: Vec<f64>) -> Result<Self> {
        if b.len() != n_obs * n_features {
            return Err(IflError::shape(n_obs * n_features, b.len()));
        }
        Ok(Self {
            n_obs,
            n_features,
            b,
        })
    }

    /// Build from time-major rows (`rows[t][j] = β_{t,j}`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_obs = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut out = Self::zeros(n_obs, p);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(IflError::shape(p, row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                out.set(t, j, v);
            }
        }
        Ok(out)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.b[j * self.n_obs + t]
    }

    pub fn set(&mut self, t: usize, j: usize, value: f64) {
        self.b[j * self.n_obs + t] = value;
    }

    /// The path `β_{1,j}, …, β_{T,j}` of one component.
    pub fn component(&self, j: usize) -> &[f64] {
        &self.b[j * self.n_obs..(j + 1) * self.n_obs]
    }

    pub fn as_vec(&self) -> &[f64] {
        &self.b
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.b
    }

    /// Time-major rows, `rows[t][j] = β_{t,j}`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_obs)
            .map(|t| (0..self.n_features).map(|j| self.get(t, j)).collect())
            .collect()
    }
}
