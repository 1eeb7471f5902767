//! `treegp check` — quick self-verification against exact references.
//!
//! Runs in a few seconds on a desk machine and exercises the identities
//! the implementation is built on: a single-root graph reproduces the
//! dense process exactly, the assembled precision inverts the induced
//! covariance, and chains are bit-identical across thread counts.

use clap::Args;
use nalgebra::{DMatrix, DVector};

use treegp::covariance::CovModel;
use treegp::error::{Error, Result};
use treegp::factors::FactorSet;
use treegp::linalg::mvn_logpdf;
use treegp::mcmc::{run_chain, ChainConfig, ModelData, ObsRow, ThetaMode};
use treegp::oracle::densify_cov;
use treegp::precision::{assemble, BlockSparse};
use treegp::synthgen::grid_locations;
use treegp::treegraph::TreedDag;
use treegp::{DagParams, Params};

#[derive(Args, Debug)]
pub struct CheckArgs {}

fn build(side: usize, q: usize, levels: usize, subset: usize) -> Result<TreedDag<f64>> {
    let locations = grid_locations::<f64>(side, q);
    let n = locations.len();
    TreedDag::build(
        locations,
        vec![true; n],
        &DagParams {
            levels,
            depth: levels,
            fanout: 2,
            subset_size: subset,
            bias_weights: vec![1.0; q],
            seed: 11,
        },
    )
}

fn report(name: &str, pass: bool, detail: String) -> bool {
    println!(
        "{} {name}: {detail}",
        if pass { "ok    " } else { "FAILED" }
    );
    pass
}

fn single_root_equivalence() -> Result<bool> {
    let q = 2;
    let dag = build(5, q, 1, 5 * 5 * q)?;
    let cov = CovModel::new(Params::baseline(q))?;
    let fs = FactorSet::build(&dag, &cov)?;
    let n = dag.n_locations();
    let w = DVector::from_fn(n, |i, _| ((i as f64) * 0.37).sin());
    let got = fs.log_prior_w(&dag, &w);
    let idx: Vec<usize> = (0..n).collect();
    let c = cov.square(dag.locations(), &idx);
    let chol = nalgebra::Cholesky::new(c).ok_or_else(|| Error::NotPositiveDefinite {
        what: "dense reference covariance".into(),
        max_jitter: 0.0,
    })?;
    let expect = mvn_logpdf(&w, &DVector::zeros(n), &chol);
    let err = (got - expect).abs();
    Ok(report(
        "single-root density equals the dense process",
        err <= 1e-8,
        format!("|difference| = {err:.2e} (tolerance 1e-8)"),
    ))
}

fn precision_inverts_covariance() -> Result<bool> {
    let q = 2;
    let dag = build(6, q, 2, 9)?;
    let cov = CovModel::new(Params::baseline(q))?;
    let fs = FactorSet::build(&dag, &cov)?;
    let lambda: BlockSparse<f64> = assemble(&dag, &fs);
    let sigma = densify_cov(&dag, &fs);
    let prod = lambda.to_dense() * sigma;
    let n = dag.n_locations();
    let err = (prod - DMatrix::identity(n, n)).abs().max();
    Ok(report(
        "assembled precision inverts the induced covariance",
        err <= 1e-5,
        format!("max |ΛΣ − I| = {err:.2e} (tolerance 1e-5)"),
    ))
}

fn chains_match_across_threads() -> Result<bool> {
    let q = 2;
    let dag = build(6, q, 2, 9)?;
    let n = dag.n_locations();
    let rows: Vec<ObsRow<f64>> = (0..n)
        .step_by(3)
        .map(|o| ObsRow {
            targets: vec![(o, 1.0)],
            y: (o as f64 * 0.21).cos(),
            margin: dag.location(o).var,
        })
        .collect();
    let data = ModelData::new(dag, DMatrix::zeros(rows.len(), 0), rows)?;
    let config = ChainConfig::<f64> {
        sweeps: 40,
        burn_in: 10,
        mode: ThetaMode::LatentPrior,
        seed: 5,
        ..ChainConfig::default()
    };
    let run_with = |threads: usize| -> Result<_> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| run_chain(&data, Params::baseline(q), &config))
    };
    let a = run_with(1)?;
    let b = run_with(2)?;
    let same = a.w_draws == b.w_draws
        && a.theta_draws.len() == b.theta_draws.len()
        && a.theta_draws
            .iter()
            .zip(&b.theta_draws)
            .all(|(x, y)| x.flatten() == y.flatten());
    Ok(report(
        "chains are bit-identical across thread counts",
        same,
        if same {
            "1 thread == 2 threads".into()
        } else {
            "draws diverged".into()
        },
    ))
}

pub fn run(_args: &CheckArgs) -> Result<()> {
    let mut all = true;
    all &= single_root_equivalence()?;
    all &= precision_inverts_covariance()?;
    all &= chains_match_across_threads()?;
    if all {
        Ok(())
    } else {
        Err(Error::ModelMismatch("self-check failed".into()))
    }
}
