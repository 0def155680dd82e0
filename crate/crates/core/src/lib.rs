//! Copula-coupled quantile and expectile hidden Markov regression.
//!
//! Each hidden state carries its own linear quantile (asymmetric Laplace
//! working likelihood) or expectile (asymmetric normal) regression per
//! response, tied together by a Gaussian or Student-t copula. Estimation runs
//! a multi-start EM with a two-stage M-step: margins first, then the copula on
//! the resulting pseudo-observations.

pub mod copula;
pub mod data;
pub mod distributions;
pub mod error;
pub mod hmm;
pub mod inference;
pub mod normal;
pub(crate) mod quadrature;
pub mod regression;
pub mod simulation;
pub mod student_t;

pub use copula::{CopulaFamily, CopulaParams, CorrelationMatrix, PseudoObservations};
pub use data::TimeSeriesDataset;
pub use distributions::{LocationScale, PowerOrder, TailIndex};
pub use error::{Error, Result};
pub use hmm::{FitResult, HmmParameters, ModelSpec, Posteriors};
pub use inference::{BootstrapReport, InformationCriteria, SelectionTable};
pub use regression::{RegressionFit, WeightedRegressionProblem};
pub use simulation::{ErrorFamily, MonteCarloReport, ScenarioConfig, TrueParameters};
