use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cohmm_core::hmm::{evaluate, fit};
use cohmm_core::inference::{bootstrap_se, fit_criteria, select_model};
use cohmm_core::simulation::run_monte_carlo;
use cohmm_core::{ScenarioConfig, TailIndex};

use crate::config::RunConfig;
use crate::ingest::{ingest, IngestOptions, Ingested, RawTable};
use crate::output::{
    criteria_cells, num, write_csv, write_posteriors, write_stats, write_trace, DataSection, ParameterDocument,
};
use crate::stats::describe;

fn ingest_options(cfg: &RunConfig, min_rows: usize) -> IngestOptions {
    IngestOptions {
        response_columns: cfg.response_columns.clone(),
        covariate_columns: cfg.covariate_columns.clone(),
        lag: cfg.lag_covariates,
        log_returns: cfg.log_returns,
        tab: cfg.tab,
        min_rows,
    }
}

/// Rows needed for `K` states with `p` regressors and two spare degrees of freedom.
fn min_rows(cfg: &RunConfig, k: usize) -> usize {
    let p = 1 + cfg.covariate_columns.as_ref().map_or(cfg.response_columns.len().max(1), Vec::len);
    k * (p + 2)
}

fn load(cfg: &RunConfig, k: usize) -> Result<Ingested> {
    let data = ingest(cfg.require_input()?, &ingest_options(cfg, min_rows(cfg, k)))?;
    eprintln!("{}", data.report());
    Ok(data)
}

/// Directory for one `τ` level, e.g. `tau_0.05`.
pub fn tau_dir(output: &Path, tau: f64) -> PathBuf {
    output.join(format!("tau_{tau}"))
}

pub fn stats(cfg: &RunConfig) -> Result<()> {
    let raw = RawTable::read(cfg.require_input()?, cfg.tab)?;
    let table = if cfg.log_returns { raw.log_returns()? } else { raw };
    let names = if cfg.response_columns.is_empty() {
        table.names.clone()
    } else {
        cfg.response_columns.clone()
    };
    let columns: Vec<&[f64]> = names.iter().map(|n| table.column(n)).collect::<Result<_>>()?;
    write_stats(&cfg.output_dir, &describe(&names, &columns))
}

pub fn fit_models(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed("fit")?;
    let data = load(cfg, cfg.n_states)?;
    let ds = &data.dataset;
    let mut rows = Vec::new();
    for &tau in &cfg.tau {
        let spec = cfg.model_spec(tau, ds.dim(), seed)?;
        let result = fit(ds, &spec).with_context(|| format!("fitting at tau = {tau}"))?;
        if !result.failed_starts.is_empty() {
            eprintln!("tau {tau}: {} of {} starts failed", result.failed_starts.len(), spec.n_starts);
        }
        let criteria = fit_criteria(&result, &spec, ds);
        let doc = ParameterDocument {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            spec: spec.clone(),
            data: DataSection {
                response_columns: data.response_columns.clone(),
                covariate_columns: data.covariate_columns.clone(),
                design: ds.covariate_names().to_vec(),
                lag_covariates: cfg.lag_covariates,
                log_returns: cfg.log_returns,
                n_obs: ds.n_obs(),
            },
            params: result.params.clone(),
            loglik: result.loglik(),
            criteria,
            converged: result.converged,
            n_iter: result.n_iter,
            standard_errors: None,
        };
        let dir = tau_dir(&cfg.output_dir, tau);
        doc.write(&dir.join("params.json"))?;
        write_posteriors(
            &dir.join("posteriors.csv"),
            &result.posteriors,
            &result.decoded_states,
            data.dates.as_deref(),
        )?;
        write_trace(&dir.join("ll_trace.csv"), &result.ll_trace)?;
        let mut row = vec![num(tau), cfg.model.to_ascii_lowercase(), spec.family.name().into(), spec.n_states.to_string()];
        row.extend(criteria_cells(&criteria));
        row.push(result.converged.to_string());
        row.push(result.n_iter.to_string());
        rows.push(row);
    }
    let header: Vec<String> = ["tau", "model", "copula", "n_states", "n_params", "loglik", "aic", "bic", "icl", "converged", "n_iter"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&cfg.output_dir.join("criteria.csv"), &header, &rows)
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let k_max = cfg.k_grid.iter().copied().max().context("empty K grid")?;
    let data = load(cfg, k_max)?;
    let template = cfg.model_spec(0.5, data.dataset.dim(), cfg.seed.unwrap_or(0))?;
    let table = select_model(&data.dataset, &cfg.k_grid, &cfg.family_grid()?, &template);
    let header: Vec<String> = [
        "n_states", "copula", "n_params", "loglik", "aic", "bic", "icl", "best_aic", "best_bic", "best_icl", "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = table
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let mut row = vec![cell.n_states.to_string(), cell.family.name().to_string()];
            match &cell.criteria {
                Some(ic) => row.extend(criteria_cells(ic)),
                None => row.extend(std::iter::repeat_n("NA".to_string(), 5)),
            }
            for best in [table.best_aic, table.best_bic, table.best_icl] {
                row.push((best == Some(i)).to_string());
            }
            row.push(cell.error.clone().unwrap_or_default());
            row
        })
        .collect();
    write_csv(&cfg.output_dir.join("criteria.csv"), &header, &rows)?;
    if table.cells.iter().all(|c| c.criteria.is_none()) {
        bail!("every cell of the selection grid failed");
    }
    Ok(())
}

/// Reloads a saved fit and the data it was estimated on.
fn saved_model(cfg: &RunConfig) -> Result<(ParameterDocument, Ingested)> {
    let path = cfg.params_path.as_deref().context("pass --params-path pointing at a fitted params.json")?;
    let doc = ParameterDocument::read(path)?;
    let opts = IngestOptions {
        response_columns: doc.data.response_columns.clone(),
        covariate_columns: Some(doc.data.covariate_columns.clone()),
        lag: doc.data.lag_covariates,
        log_returns: doc.data.log_returns,
        tab: cfg.tab,
        min_rows: 1,
    };
    let data = ingest(cfg.require_input()?, &opts)?;
    if data.dataset.n_obs() != doc.data.n_obs {
        bail!(
            "input yields {} observations but the saved fit used {}",
            data.dataset.n_obs(),
            doc.data.n_obs
        );
    }
    Ok((doc, data))
}

pub fn decode(cfg: &RunConfig) -> Result<()> {
    let (doc, data) = saved_model(cfg)?;
    let result = evaluate(&data.dataset, &doc.spec, doc.params)?;
    write_posteriors(
        &cfg.output_dir.join("posteriors.csv"),
        &result.posteriors,
        &result.decoded_states,
        data.dates.as_deref(),
    )
}

pub fn bootstrap(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed("bootstrap")?;
    if cfg.replicates < 2 {
        bail!("the bootstrap needs at least two replicates");
    }
    let (mut doc, data) = saved_model(cfg)?;
    let fitted = evaluate(&data.dataset, &doc.spec, doc.params.clone())?;
    let report = bootstrap_se(&fitted, &data.dataset, &doc.spec, cfg.replicates, seed)?;
    let ok = report.replicates - report.n_failed;
    eprintln!("bootstrap: {ok} of {} replicates succeeded", report.replicates);
    if ok < 2 {
        bail!("only {ok} bootstrap replicates succeeded; standard errors undefined");
    }
    if report.unreliable {
        eprintln!("warning: at least half of the bootstrap replicates failed");
    }
    doc.standard_errors = Some(report);
    doc.write(&cfg.output_dir.join("params.json"))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.require_seed("simulate")?;
    let mut sc = ScenarioConfig::new(cfg.error_family()?, cfg.n_obs, cfg.family()?, cfg.order()?);
    sc.tau_levels = cfg.tau.iter().map(|&t| TailIndex::new(t)).collect::<cohmm_core::Result<_>>()?;
    sc.n_replications = cfg.replications;
    sc.seed = seed;
    if let Some(n) = cfg.n_starts {
        sc.n_starts = n;
    }
    let report = run_monte_carlo(&sc)?;
    let dir = &cfg.output_dir;

    let header: Vec<String> = ["tau", "state", "response", "coefficient", "truth", "bias", "sd"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .bias
        .iter()
        .map(|b| {
            vec![
                num(b.tau),
                (b.state + 1).to_string(),
                (b.response + 1).to_string(),
                b.coefficient.to_string(),
                num(b.truth),
                num(b.bias),
                num(b.sd),
            ]
        })
        .collect();
    write_csv(&dir.join("bias_table.csv"), &header, &rows)?;

    let header: Vec<String> = [
        "replication", "tau", "ari", "converged", "n_iter", "initial_loglik", "final_loglik", "monotone_fraction",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                (r.replication + 1).to_string(),
                num(r.tau),
                num(r.ari),
                r.converged.to_string(),
                r.n_iter.to_string(),
                num(r.initial_loglik),
                num(r.final_loglik),
                num(r.monotone_fraction),
            ]
        })
        .collect();
    write_csv(&dir.join("ari.csv"), &header, &rows)?;

    let header: Vec<String> = ["replication", "tau", "reason"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .failures
        .iter()
        .map(|(rep, tau, why)| vec![(rep + 1).to_string(), num(*tau), why.clone()])
        .collect();
    write_csv(&dir.join("failures.csv"), &header, &rows)?;
    if !report.failures.is_empty() {
        eprintln!("{} replication fits failed and were excluded", report.failures.len());
    }
    Ok(())
}
