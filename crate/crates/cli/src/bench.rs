//! `treegp bench` — per-sweep timing across dataset sizes.
//!
//! For each requested size the command lays out a grid, masks it, builds
//! the graph (levels grow with the site count so deepest cells stay near
//! the reference-subset size), draws a latent field ancestrally, and runs
//! fixed-parameter sweeps. Per-sweep cost is the long-run difference
//! `(t(sweeps) − t(1)) / (sweeps − 1)`, which cancels setup work.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use treegp::error::{Error, Result};
use treegp::mcmc::{run_chain, ChainConfig, ModelData, ObsRow, ThetaMode};
use treegp::synthgen::{draw_mask, field_treed, grid_locations, noisy_response, SynthConfig};
use treegp::tabular::write_csv;
use treegp::treegraph::TreedDag;
use treegp::{DagParams, Params};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Output table.
    #[arg(long)]
    pub out: PathBuf,
    /// Location counts to time (comma separated).
    #[arg(long, default_value = "1000,2000,4000,8000")]
    pub sizes: String,
    #[arg(long, default_value_t = 2)]
    pub vars: usize,
    /// Sweeps per timing run (one extra run measures setup).
    #[arg(long, default_value_t = 6)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 25)]
    pub subset: usize,
    /// Parent-set depth (1 = single parents, the scalable regime).
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long, default_value_t = 2)]
    pub fanout: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Levels that keep deepest-cell occupancy near the subset size, based on
/// how many locations are actually available as references.
fn auto_levels(observed: usize, subset: usize, fanout: usize) -> usize {
    let per_level = (fanout * fanout) as f64;
    let ratio = observed as f64 / subset as f64;
    if ratio <= 1.0 {
        1
    } else {
        1 + (ratio.ln() / per_level.ln()).ceil() as usize
    }
}

struct BenchRow {
    n: usize,
    side: usize,
    levels: usize,
    nodes: usize,
    setup_ms: f64,
    sweep_ms: f64,
}

fn time_size(args: &BenchArgs, n_target: usize) -> Result<BenchRow> {
    let side = ((n_target as f64 / args.vars as f64).sqrt().round() as usize).max(2);
    let locations = grid_locations::<f64>(side, args.vars);
    let n = locations.len();

    let synth = SynthConfig::<f64> {
        side,
        n_vars: args.vars,
        theta: Params::baseline(args.vars),
        tau2: vec![0.1; args.vars],
        patches: Vec::new(),
        seed: args.seed,
        ..SynthConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let observed = draw_mask(&locations, &synth, &mut rng);
    let n_observed = observed.iter().filter(|&&b| b).count();
    let levels = auto_levels(n_observed, args.subset, args.fanout);

    let params = DagParams {
        levels,
        depth: args.depth,
        fanout: args.fanout,
        subset_size: args.subset,
        bias_weights: vec![1.0; args.vars],
        seed: args.seed,
    };
    let dag = TreedDag::build(locations, observed.clone(), &params)?;
    let w = field_treed(&dag, &synth.theta, &mut rng)?;
    let y = noisy_response(&w, dag.locations(), &synth.tau2, &mut rng);
    let rows: Vec<ObsRow<f64>> = (0..n)
        .filter(|&o| observed[o])
        .map(|o| ObsRow {
            targets: vec![(o, 1.0)],
            y: y[o],
            margin: dag.location(o).var,
        })
        .collect();
    let nodes = dag.n_nodes();
    let data = ModelData::new(dag, nalgebra::DMatrix::zeros(rows.len(), 0), rows)?;

    let chain = |sweeps: usize| ChainConfig::<f64> {
        sweeps,
        burn_in: 0,
        thin: 1,
        seed: args.seed,
        mode: ThetaMode::Fixed,
        keep_w: false,
        ..ChainConfig::default()
    };
    let theta = Params::baseline(args.vars);
    let t0 = Instant::now();
    run_chain(&data, theta.clone(), &chain(1))?;
    let t_one = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    run_chain(&data, theta, &chain(args.sweeps))?;
    let t_all = t1.elapsed().as_secs_f64();
    // Floor at a nanosecond: the difference estimator can go negative in
    // measurement noise when sweeps are far below a millisecond.
    let sweep_s = ((t_all - t_one) / (args.sweeps - 1) as f64).max(1e-9);

    Ok(BenchRow {
        n,
        side,
        levels,
        nodes,
        setup_ms: (t_one - sweep_s).max(0.0) * 1e3,
        sweep_ms: sweep_s * 1e3,
    })
}

pub fn run(args: &BenchArgs) -> Result<()> {
    if args.sweeps < 2 {
        return Err(Error::InvalidParameter(
            "bench needs at least 2 sweeps".into(),
        ));
    }
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("size {s:?} is not an integer")))
        })
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;

    let mut out_rows = Vec::new();
    for &size in &sizes {
        let row = pool.install(|| time_size(args, size))?;
        println!(
            "n {:>7}  side {:>4}  levels {:>2}  nodes {:>6}  setup {:>9.1} ms  sweep {:>9.2} ms",
            row.n, row.side, row.levels, row.nodes, row.setup_ms, row.sweep_ms
        );
        out_rows.push(vec![
            row.n.to_string(),
            row.side.to_string(),
            row.levels.to_string(),
            row.nodes.to_string(),
            row.setup_ms.to_string(),
            row.sweep_ms.to_string(),
        ]);
    }
    write_csv(
        &args.out,
        &["n", "side", "levels", "nodes", "setup_ms", "sweep_ms"],
        out_rows,
    )?;
    println!("timings written to {}", args.out.display());
    Ok(())
}
