//! The on-disk dataset format.
//!
//! One table row per model location. Columns: coordinates `x1..xk`, the
//! variable index `var`, and the response `y` — left empty for locations
//! that enter the model unobserved (prediction sites). Any further column
//! is a covariate and must be filled on observed rows.

use std::path::Path;

use nalgebra::DMatrix;

use treegp::error::{Error, Result};
use treegp::mcmc::{ModelData, ObsRow};
use treegp::tabular::{write_csv, Table};
use treegp::treegraph::TreedDag;
use treegp::{DagParams, Location};

pub struct Dataset {
    pub locations: Vec<Location>,
    pub observed: Vec<bool>,
    /// Response per location; meaningful only where observed.
    pub y: Vec<f64>,
    /// Covariates, one row per *observed* location in file order.
    pub x: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    /// Source file and line of each location, for error reporting.
    pub source: String,
    pub lines: Vec<usize>,
    pub n_vars: usize,
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let table = Table::read(&path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: table.path.display().to_string(),
        line,
        message,
    };

    // Coordinate columns x1..xk, consecutively numbered from 1.
    let mut coord_cols: Vec<(usize, usize)> = table
        .headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| {
            h.strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .map(|k| (k, c))
        })
        .collect();
    coord_cols.sort();
    if coord_cols.is_empty() {
        return Err(parse_err(1, "no coordinate columns (x1, x2, …)".into()));
    }
    for (i, &(k, _)) in coord_cols.iter().enumerate() {
        if k != i + 1 {
            return Err(parse_err(
                1,
                format!(
                    "coordinate columns must run x1..x{}, found x{k}",
                    coord_cols.len()
                ),
            ));
        }
    }
    let var_col = table.column("var")?;
    let y_col = table.column("y")?;
    let covariate_cols: Vec<usize> = (0..table.headers.len())
        .filter(|&c| c != var_col && c != y_col && coord_cols.iter().all(|&(_, cc)| cc != c))
        .collect();
    let covariate_names: Vec<String> = covariate_cols
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();

    let mut locations = Vec::with_capacity(table.rows.len());
    let mut observed = Vec::with_capacity(table.rows.len());
    let mut y = Vec::with_capacity(table.rows.len());
    let mut lines = Vec::with_capacity(table.rows.len());
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut n_vars = 0;
    for (r, row) in table.rows.iter().enumerate() {
        let coords: Vec<f64> = coord_cols
            .iter()
            .map(|&(_, c)| table.number(r, c))
            .collect::<Result<_>>()?;
        let var = table.integer(r, var_col)?;
        n_vars = n_vars.max(var + 1);
        let y_cell = &row.cells[y_col];
        let is_observed = !y_cell.is_empty();
        if is_observed {
            y.push(table.number(r, y_col)?);
            let cov_row: Vec<f64> = covariate_cols
                .iter()
                .map(|&c| {
                    if row.cells[c].is_empty() {
                        Err(parse_err(
                            row.line,
                            format!("observed row leaves covariate {} empty", table.headers[c]),
                        ))
                    } else {
                        table.number(r, c)
                    }
                })
                .collect::<Result<_>>()?;
            x_rows.push(cov_row);
        } else {
            y.push(0.0);
        }
        locations.push(Location::new(coords, var));
        observed.push(is_observed);
        lines.push(row.line);
    }
    if locations.is_empty() {
        return Err(parse_err(1, "table has no data rows".into()));
    }
    let p = covariate_names.len();
    let x = DMatrix::from_fn(x_rows.len(), p, |r, c| x_rows[r][c]);
    Ok(Dataset {
        locations,
        observed,
        y,
        x,
        covariate_names,
        source: table.path.display().to_string(),
        lines,
        n_vars,
    })
}

/// Writes the dataset table (no covariates); unobserved rows get an empty
/// response cell.
pub fn write_dataset(
    path: impl AsRef<Path>,
    locations: &[Location],
    observed: &[bool],
    y: &[f64],
) -> Result<()> {
    let dim = locations[0].coords.len();
    let mut headers: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    headers.push("var".into());
    headers.push("y".into());
    write_csv(
        path,
        &headers,
        locations.iter().enumerate().map(|(o, loc)| {
            let mut row: Vec<String> = loc.coords.iter().map(f64::to_string).collect();
            row.push(loc.var.to_string());
            row.push(if observed[o] {
                y[o].to_string()
            } else {
                String::new()
            });
            row
        }),
    )
}

impl Dataset {
    /// Builds the graph and assembles the sampler's data view, mapping
    /// duplicate-location failures back to their file lines.
    pub fn into_model(self, params: &DagParams) -> Result<ModelData<f64>> {
        let dag =
            TreedDag::build(self.locations, self.observed.clone(), params).map_err(
                |e| match e {
                    Error::DuplicateLocation { first, second } => Error::Parse {
                        path: self.source.clone(),
                        line: self.lines[second],
                        message: format!("duplicate location (also on line {})", self.lines[first]),
                    },
                    other => other,
                },
            )?;
        let rows: Vec<ObsRow<f64>> = (0..dag.n_locations())
            .filter(|&o| self.observed[o])
            .map(|o| ObsRow {
                targets: vec![(o, 1.0)],
                y: self.y[o],
                margin: dag.location(o).var,
            })
            .collect();
        ModelData::new(dag, self.x, rows)
    }
}
