use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cohmm_core::{CopulaFamily, ErrorFamily, ModelSpec, PowerOrder, TailIndex};
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand. Read from a TOML file, then
/// overridden field by field from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_path: Option<PathBuf>,
    /// Empty means every numeric column.
    pub response_columns: Vec<String>,
    /// `None` means the response columns.
    pub covariate_columns: Option<Vec<String>>,
    pub lag_covariates: usize,
    pub log_returns: bool,
    pub tab: bool,
    pub tau: Vec<f64>,
    pub model: String,
    pub n_states: usize,
    pub copula: String,
    pub n_starts: Option<usize>,
    pub seed: Option<u64>,
    pub tol: f64,
    pub max_iter: usize,
    pub output_dir: PathBuf,
    pub k_grid: Vec<usize>,
    pub copula_grid: Vec<String>,
    pub replicates: usize,
    pub params_path: Option<PathBuf>,
    pub error_family: String,
    pub n_obs: usize,
    pub replications: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_path: None,
            response_columns: Vec::new(),
            covariate_columns: None,
            lag_covariates: 1,
            log_returns: false,
            tab: false,
            tau: vec![0.5],
            model: "quantile".into(),
            n_states: 2,
            copula: "gaussian".into(),
            n_starts: None,
            seed: None,
            tol: ModelSpec::DEFAULT_TOL,
            max_iter: ModelSpec::DEFAULT_MAX_ITER,
            output_dir: PathBuf::from("out"),
            k_grid: vec![1, 2, 3, 4],
            copula_grid: vec!["gaussian".into(), "student_t".into()],
            replicates: 1000,
            params_path: None,
            error_family: "gaussian".into(),
            n_obs: 500,
            replications: cohmm_core::simulation::DEFAULT_REPLICATIONS,
        }
    }
}

/// Command-line overrides, one per configuration field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input_path: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub response_columns: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub covariate_columns: Option<Vec<String>>,
    #[arg(long)]
    pub lag_covariates: Option<usize>,
    /// Convert price levels to percentage log returns
    #[arg(long)]
    pub log_returns: bool,
    /// Input is tab separated
    #[arg(long)]
    pub tab: bool,
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// `quantile` or `expectile`
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_states: Option<usize>,
    /// `gaussian` or `student_t`
    #[arg(long)]
    pub copula: Option<String>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub copula_grid: Option<Vec<String>>,
    /// Bootstrap replicates
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Parameter document written by `fit`
    #[arg(long)]
    pub params_path: Option<PathBuf>,
    /// `gaussian`, `student_t5` or `skew_t5`
    #[arg(long)]
    pub error_family: Option<String>,
    #[arg(long)]
    pub n_obs: Option<usize>,
    /// Monte Carlo replications
    #[arg(long)]
    pub replications: Option<usize>,
}

macro_rules! take {
    ($cfg:ident, $ov:ident, $($field:ident),*) => {
        $(if let Some(v) = $ov.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Loads the file named by `--config` (if any) and applies the flags.
    pub fn resolve(ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        take!(cfg, ov, response_columns, lag_covariates, tau, model, n_states, copula, tol, max_iter, output_dir);
        take!(cfg, ov, k_grid, copula_grid, replicates, error_family, n_obs, replications);
        if ov.input_path.is_some() {
            cfg.input_path = ov.input_path.clone();
        }
        if ov.covariate_columns.is_some() {
            cfg.covariate_columns = ov.covariate_columns.clone();
        }
        if ov.n_starts.is_some() {
            cfg.n_starts = ov.n_starts;
        }
        if ov.seed.is_some() {
            cfg.seed = ov.seed;
        }
        if ov.params_path.is_some() {
            cfg.params_path = ov.params_path.clone();
        }
        cfg.log_returns |= ov.log_returns;
        cfg.tab |= ov.tab;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for &t in &self.tau {
            TailIndex::new(t).with_context(|| format!("tau value {t}"))?;
        }
        if self.tau.is_empty() {
            bail!("at least one tau level is required");
        }
        if self.n_states == 0 {
            bail!("n_states must be positive");
        }
        self.order()?;
        self.family()?;
        Ok(())
    }

    pub fn order(&self) -> Result<PowerOrder> {
        match self.model.to_ascii_lowercase().as_str() {
            "quantile" | "cqhmm" => Ok(PowerOrder::Quantile),
            "expectile" | "cehmm" => Ok(PowerOrder::Expectile),
            other => bail!("unknown model '{other}', expected quantile or expectile"),
        }
    }

    pub fn family(&self) -> Result<CopulaFamily> {
        Ok(self.copula.parse::<CopulaFamily>()?)
    }

    pub fn family_grid(&self) -> Result<Vec<CopulaFamily>> {
        self.copula_grid.iter().map(|c| Ok(c.parse::<CopulaFamily>()?)).collect()
    }

    pub fn error_family(&self) -> Result<ErrorFamily> {
        Ok(self.error_family.parse::<ErrorFamily>()?)
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed.with_context(|| format!("`{command}` needs --seed (or `seed` in the config file)"))
    }

    pub fn require_input(&self) -> Result<&Path> {
        self.input_path.as_deref().context("no input file: pass --input-path or set input_path")
    }

    /// Model specification for one `τ` level shared by all `d` responses.
    pub fn model_spec(&self, tau: f64, d: usize, seed: u64) -> Result<ModelSpec> {
        let spec = ModelSpec::uniform_tau(self.order()?, self.n_states, self.family()?, TailIndex::new(tau)?, d)
            .with_seed(seed)
            .with_starts(self.n_starts.unwrap_or(ModelSpec::DEFAULT_N_STARTS))
            .with_tol(self.tol)
            .with_max_iter(self.max_iter);
        spec.validate()?;
        Ok(spec)
    }
}
