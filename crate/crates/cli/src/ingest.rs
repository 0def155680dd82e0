use std::path::Path;

use anyhow::{bail, Context, Result};
use cohmm_core::TimeSeriesDataset;
use nalgebra::DMatrix;

/// Delimited table with a header row: an optional leading date column and
/// numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub dates: Option<Vec<String>>,
    pub names: Vec<String>,
    /// Column-major numeric cells.
    pub columns: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn read(path: &Path, tab: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(if tab { b'\t' } else { b',' })
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        for record in reader.records() {
            let record = record.with_context(|| format!("reading {}", path.display()))?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Self::from_cells(header, rows)
    }

    /// The first column is taken as dates when any of its cells is not a number.
    pub fn from_cells(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if header.is_empty() {
            bail!("input has no columns");
        }
        let has_dates = rows.iter().any(|r| r.first().is_some_and(|c| c.parse::<f64>().is_err()));
        let first = usize::from(has_dates);
        let names = header[first..].to_vec();
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        let mut dates = has_dates.then(Vec::new);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                bail!("row {} has {} fields, header has {}", i + 2, row.len(), header.len());
            }
            if let Some(d) = dates.as_mut() {
                d.push(row[0].clone());
            }
            for (j, cell) in row[first..].iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .with_context(|| format!("non-numeric value '{cell}' in column '{}', row {}", names[j], i + 2))?;
                columns[j].push(v);
            }
        }
        Ok(Self { dates, names, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .with_context(|| format!("column '{name}' not found (available: {})", self.names.join(", ")))
    }

    /// `r_t = 100 (ln p_t - ln p_{t-1})` for every numeric column; one row shorter.
    pub fn log_returns(&self) -> Result<Self> {
        let mut columns = Vec::with_capacity(self.columns.len());
        for (name, col) in self.names.iter().zip(&self.columns) {
            if let Some(bad) = col.iter().find(|&&p| p <= 0.0) {
                bail!("column '{name}' has non-positive price {bad}; log returns undefined");
            }
            columns.push(col.windows(2).map(|w| 100.0 * (w[1].ln() - w[0].ln())).collect());
        }
        Ok(Self {
            dates: self.dates.as_ref().map(|d| d.iter().skip(1).cloned().collect()),
            names: self.names.clone(),
            columns,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Empty selects every numeric column.
    pub response_columns: Vec<String>,
    /// `None` reuses the responses.
    pub covariate_columns: Option<Vec<String>>,
    pub lag: usize,
    pub log_returns: bool,
    pub tab: bool,
    /// Smallest acceptable number of usable rows.
    pub min_rows: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: TimeSeriesDataset,
    /// Dates of the retained rows, when the input has a date column.
    pub dates: Option<Vec<String>>,
    pub input_rows: usize,
    pub dropped_rows: usize,
    pub response_columns: Vec<String>,
    pub covariate_columns: Vec<String>,
}

impl Ingested {
    pub fn report(&self) -> String {
        format!(
            "read {} rows, dropped {}, using {} observations of {} responses and {} regressors",
            self.input_rows,
            self.dropped_rows,
            self.dataset.n_obs(),
            self.dataset.dim(),
            self.dataset.n_covariates()
        )
    }
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let table = RawTable::read(path, opts.tab)?;
    ingest_table(&table, opts)
}

/// Builds the regression dataset: optional log returns, covariates lagged by
/// `lag` rows (the first `lag` rows are dropped) and an intercept column.
pub fn ingest_table(raw: &RawTable, opts: &IngestOptions) -> Result<Ingested> {
    let input_rows = raw.n_rows();
    let table = if opts.log_returns { raw.log_returns()? } else { raw.clone() };
    let responses = if opts.response_columns.is_empty() {
        table.names.clone()
    } else {
        opts.response_columns.clone()
    };
    let covariates = opts.covariate_columns.clone().unwrap_or_else(|| responses.clone());
    let n = table.n_rows();
    if n <= opts.lag {
        bail!("{n} rows cannot support a covariate lag of {}", opts.lag);
    }
    let usable = n - opts.lag;
    if usable < opts.min_rows {
        bail!("only {usable} usable rows, need at least {}", opts.min_rows);
    }
    let y_cols: Vec<&[f64]> = responses.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let x_cols: Vec<&[f64]> = covariates.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
    let lag = opts.lag;
    let y = DMatrix::from_fn(usable, y_cols.len(), |t, j| y_cols[j][t + lag]);
    let x = DMatrix::from_fn(usable, x_cols.len() + 1, |t, j| if j == 0 { 1.0 } else { x_cols[j - 1][t] });
    let covariate_names = std::iter::once("intercept".to_string())
        .chain(covariates.iter().map(|c| if lag == 0 { c.clone() } else { format!("{c}_lag{lag}") }))
        .collect();
    let dataset = TimeSeriesDataset::with_names(y, x, responses.clone(), covariate_names)?;
    Ok(Ingested {
        dataset,
        dates: table.dates.map(|d| d[lag..].to_vec()),
        input_rows,
        dropped_rows: input_rows - usable,
        response_columns: responses,
        covariate_columns: covariates,
    })
}
