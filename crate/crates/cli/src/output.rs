use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cohmm_core::hmm::Posteriors;
use cohmm_core::inference::InformationCriteria;
use cohmm_core::{BootstrapReport, HmmParameters, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::stats::DescriptiveStats;

/// How the fitted data were built, so `decode` and `bootstrap` can rebuild them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub response_columns: Vec<String>,
    pub covariate_columns: Vec<String>,
    /// Design column labels, intercept first.
    pub design: Vec<String>,
    pub lag_covariates: usize,
    pub log_returns: bool,
    pub n_obs: usize,
}

/// Everything written by `fit` for one `τ` level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDocument {
    pub version: String,
    pub seed: u64,
    pub spec: ModelSpec,
    pub data: DataSection,
    pub params: HmmParameters,
    pub loglik: f64,
    pub criteria: InformationCriteria,
    pub converged: bool,
    pub n_iter: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<BootstrapReport>,
}

impl ParameterDocument {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing parameter document {}", path.display()))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text()?)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip representation; `NA` for missing or non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `t, gamma_1..gamma_K, state` with 1-based `t` and states; a `date` column
/// follows `t` when dates are known.
pub fn write_posteriors(path: &Path, post: &Posteriors, states: &[usize], dates: Option<&[String]>) -> Result<()> {
    let k = post.n_states();
    let mut header = vec!["t".to_string()];
    if dates.is_some() {
        header.push("date".into());
    }
    header.extend((1..=k).map(|s| format!("gamma_{s}")));
    header.push("state".into());
    let rows: Vec<Vec<String>> = (0..post.n_obs())
        .map(|t| {
            let mut row = vec![(t + 1).to_string()];
            if let Some(d) = dates {
                row.push(d[t].clone());
            }
            row.extend((0..k).map(|s| num(post.gamma[(t, s)])));
            row.push((states[t] + 1).to_string());
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect();
    write_csv(path, &strings(&["iteration", "loglik"]), &rows)
}

pub fn write_stats(dir: &Path, stats: &DescriptiveStats) -> Result<()> {
    let header = strings(&["column", "n", "min", "mean", "max", "sd", "skewness", "excess_kurtosis", "jarque_bera"]);
    let rows: Vec<Vec<String>> = stats
        .columns
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.n.to_string(),
                num(c.min),
                num(c.mean),
                num(c.max),
                num(c.sd),
                opt(c.skewness),
                opt(c.excess_kurtosis),
                opt(c.jarque_bera),
            ]
        })
        .collect();
    write_csv(&dir.join("stats.csv"), &header, &rows)?;
    let mut header = vec!["column".to_string()];
    header.extend(stats.columns.iter().map(|c| c.name.clone()));
    let rows: Vec<Vec<String>> = stats
        .columns
        .iter()
        .zip(&stats.correlation)
        .map(|(c, r)| std::iter::once(c.name.clone()).chain(r.iter().map(|v| num(*v))).collect())
        .collect();
    write_csv(&dir.join("correlations.csv"), &header, &rows)
}

pub fn criteria_cells(ic: &InformationCriteria) -> Vec<String> {
    vec![ic.n_params.to_string(), num(ic.loglik), num(ic.aic), num(ic.bic), num(ic.icl)]
}
