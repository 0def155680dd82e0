use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Aligned responses (`T × d`) and design matrix (`T × p`, first column ≡ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    response_names: Vec<String>,
    covariate_names: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let response_names = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        let covariate_names = std::iter::once("intercept".to_string())
            .chain((1..x.ncols()).map(|j| format!("x{j}")))
            .collect();
        Self::with_names(y, x, response_names, covariate_names)
    }

    pub fn with_names(
        y: DMatrix<f64>,
        x: DMatrix<f64>,
        response_names: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} response rows vs {} design rows",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() == 0 || y.ncols() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidParameter("dataset must be non-empty".into()));
        }
        if response_names.len() != y.ncols() || covariate_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch("column label count".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset contains missing or non-finite values".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParameter("first design column must be the intercept".into()));
        }
        Ok(Self {
            y,
            x,
            response_names,
            covariate_names,
        })
    }

    /// Builds a design with an intercept prepended to `covariates` (`T × (p-1)`).
    pub fn with_intercept(y: DMatrix<f64>, covariates: &DMatrix<f64>) -> Result<Self> {
        let x = DMatrix::from_fn(covariates.nrows(), covariates.ncols() + 1, |t, j| {
            if j == 0 {
                1.0
            } else {
                covariates[(t, j - 1)]
            }
        });
        Self::new(y, x)
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn response_column(&self, j: usize) -> Vec<f64> {
        self.y.column(j).iter().copied().collect()
    }

    /// Same covariates, new responses.
    pub fn with_responses(&self, y: DMatrix<f64>) -> Result<Self> {
        Self::with_names(y, self.x.clone(), self.response_names.clone(), self.covariate_names.clone())
    }
}
