//! `treegp predict` — posterior prediction from a fit bundle.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DVector;

use treegp::error::{Error, Result};
use treegp::predict::{coverage, predict, rmse, PredictOptions};
use treegp::tabular::{read_matrix, write_csv, Table};
use treegp::treegraph::TreedDag;
use treegp::{Location, Params};

use crate::data::read_dataset;
use crate::synth::parse_list;

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Fit bundle directory written by `treegp fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Target locations: columns x1..xk and var.
    #[arg(long)]
    pub at: PathBuf,
    /// Output table (mean and interval per target).
    #[arg(long)]
    pub out: PathBuf,
    /// Equal-tailed interval probabilities.
    #[arg(long, default_value = "0.025,0.975")]
    pub interval: String,
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
    /// Truth table (like synth's truth.csv) to score the predictions.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

fn read_targets(path: &Path) -> Result<Vec<Location>> {
    let table = Table::read(path)?;
    let var_col = table.column("var")?;
    let mut coord_cols = Vec::new();
    for k in 1.. {
        match table.headers.iter().position(|h| *h == format!("x{k}")) {
            Some(c) => coord_cols.push(c),
            None => break,
        }
    }
    if coord_cols.is_empty() {
        return Err(Error::Parse {
            path: table.path.display().to_string(),
            line: 1,
            message: "no coordinate columns (x1, x2, …)".into(),
        });
    }
    (0..table.rows.len())
        .map(|r| {
            let coords: Vec<f64> = coord_cols
                .iter()
                .map(|&c| table.number(r, c))
                .collect::<Result<_>>()?;
            Ok(Location::new(coords, table.integer(r, var_col)?))
        })
        .collect()
}

type DrawBundle = (Vec<DVector<f64>>, Vec<Params>, Vec<DVector<f64>>);

fn read_draw_bundle(dir: &Path, q: usize) -> Result<DrawBundle> {
    let w_path = dir.join("w.csv");
    if !w_path.exists() {
        return Err(Error::ModelMismatch(
            "fit bundle has no w.csv (was the fit run with keep-w=false?)".into(),
        ));
    }
    let (_, w) = read_matrix::<f64>(&w_path)?;
    let (theta_names, theta) = read_matrix::<f64>(dir.join("theta.csv"))?;
    if theta_names != Params::param_names(q) {
        return Err(Error::ModelMismatch(format!(
            "theta.csv columns do not match {q}-variable parameters"
        )));
    }
    let (_, tau2) = read_matrix::<f64>(dir.join("tau2.csv"))?;
    if w.nrows() != theta.nrows() || w.nrows() != tau2.nrows() {
        return Err(Error::ModelMismatch(format!(
            "draw tables disagree: {} field rows, {} parameter rows, {} noise rows",
            w.nrows(),
            theta.nrows(),
            tau2.nrows()
        )));
    }
    let w_draws: Vec<DVector<f64>> = (0..w.nrows()).map(|r| w.row(r).transpose()).collect();
    let theta_draws: Vec<Params> = (0..theta.nrows())
        .map(|r| {
            let flat: Vec<f64> = theta.row(r).iter().copied().collect();
            Params::unflatten(q, &flat)
        })
        .collect::<Result<_>>()?;
    let tau2_draws: Vec<DVector<f64>> =
        (0..tau2.nrows()).map(|r| tau2.row(r).transpose()).collect();
    Ok((w_draws, theta_draws, tau2_draws))
}

fn score_against_truth(
    path: &Path,
    targets: &[Location],
    pred: &treegp::predict::Prediction<f64>,
) -> Result<()> {
    let table = Table::read(path)?;
    let var_col = table.column("var")?;
    let w_col = table.column("w")?;
    let dim = targets[0].coords.len();
    let coord_cols: Vec<usize> = (1..=dim)
        .map(|k| table.column(&format!("x{k}")))
        .collect::<Result<_>>()?;
    let mut truth = Vec::with_capacity(targets.len());
    for t in targets {
        let hit = (0..table.rows.len())
            .find(|&r| {
                table.integer(r, var_col).is_ok_and(|v| v == t.var)
                    && coord_cols
                        .iter()
                        .enumerate()
                        .all(|(k, &c)| table.number::<f64>(r, c).is_ok_and(|x| x == t.coords[k]))
            })
            .ok_or_else(|| {
                Error::ModelMismatch(format!(
                    "truth table has no row for variable {} at {:?}",
                    t.var, t.coords
                ))
            })?;
        truth.push(table.number::<f64>(hit, w_col)?);
    }
    let truth = DVector::from_vec(truth);
    println!("rmse {}", rmse(&pred.mean, &truth));
    println!("coverage {}", coverage(&pred.lo, &pred.hi, &truth));
    Ok(())
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let dataset = read_dataset(args.fit.join("data.csv"))?;
    let q = dataset.n_vars;
    let dag_text = fs::read_to_string(args.fit.join("dag.txt"))?;
    let dag = TreedDag::from_text(
        &dag_text,
        dataset.locations.clone(),
        dataset.observed.clone(),
        &args.fit.join("dag.txt").display().to_string(),
    )?;
    let (w_draws, theta_draws, tau2_draws) = read_draw_bundle(&args.fit, q)?;

    let targets = read_targets(&args.at)?;
    let probs = parse_list(&args.interval, "interval")?;
    if probs.len() != 2 {
        return Err(Error::InvalidParameter(
            "interval needs two probabilities".into(),
        ));
    }
    let opts = PredictOptions {
        interval: (probs[0], probs[1]),
        seed: args.seed,
        keep_draws: false,
    };
    let pred = predict(&dag, &targets, &w_draws, &theta_draws, &tau2_draws, &opts)?;

    let dim = targets[0].coords.len();
    let mut headers: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    headers.extend(["var".into(), "mean".into(), "lo".into(), "hi".into()]);
    write_csv(
        &args.out,
        &headers,
        (0..targets.len()).map(|k| {
            let mut row: Vec<String> = targets[k].coords.iter().map(f64::to_string).collect();
            row.push(targets[k].var.to_string());
            row.push(pred.mean[k].to_string());
            row.push(pred.lo[k].to_string());
            row.push(pred.hi[k].to_string());
            row
        }),
    )?;
    println!(
        "{} targets predicted from {} draws ({} borrowed another variable's reference)",
        targets.len(),
        w_draws.len(),
        pred.fallback_count
    );
    if let Some(truth) = &args.truth {
        score_against_truth(truth, &targets, &pred)?;
    }
    Ok(())
}
