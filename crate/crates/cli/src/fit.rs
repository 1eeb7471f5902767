//! `treegp fit` — build the graph, run the sampler, write the fit bundle.
//!
//! Every option below can also come from a flat `key=value` config file
//! (`--config`); explicit command-line values win. The bundle written to
//! `--out` is self-contained: the input data is copied next to the graph
//! and the draw tables, so `treegp predict` needs nothing else.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use nalgebra::DMatrix;

use treegp::covariance::Theta;
use treegp::error::{Error, Result};
use treegp::mcmc::{run_chain, ChainConfig, ChainOutput, ModelData, Priors, ThetaMode};
use treegp::tabular::{write_csv, write_matrix, Table};
use treegp::{DagParams, Params};

use crate::data::read_dataset;
use crate::synth::parse_list;

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Input data table.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the fit bundle.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value file supplying defaults for the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,

    // Graph construction.
    /// Branch levels of the partition tree.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Parent-set depth: 1 keeps single parents, `levels` nests fully.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Partition fanout per axis per level.
    #[arg(long)]
    pub fanout: Option<usize>,
    /// Reference-subset size per branch.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Per-variable reference sampling weights (comma separated).
    #[arg(long)]
    pub bias: Option<String>,
    #[arg(long)]
    pub dag_seed: Option<u64>,

    // Chain.
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Covariance-parameter handling: fixed, latent, or integrated.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub sample_alpha_beta: Option<bool>,
    #[arg(long)]
    pub ram_scale: Option<f64>,
    #[arg(long)]
    pub beta_var: Option<f64>,
    #[arg(long)]
    pub tau2_shape: Option<f64>,
    #[arg(long)]
    pub tau2_rate: Option<f64>,
    #[arg(long)]
    pub theta_sd: Option<f64>,
    #[arg(long)]
    pub integrated_cap: Option<usize>,
    #[arg(long)]
    pub keep_w: Option<bool>,
    /// Starting covariance parameters as a name,value table; defaults to
    /// the all-ones baseline.
    #[arg(long)]
    pub init_theta: Option<PathBuf>,
    /// Worker threads for the parallel sweep phases (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

fn read_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: format!("{line:?} is not key=value"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn resolve<T: FromStr + Display>(
    cli: Option<T>,
    cfg: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = cli {
        return Ok(v);
    }
    match cfg.get(key) {
        Some(s) => s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("config key {key}: cannot parse {s:?}"))),
        None => Ok(default),
    }
}

fn parse_mode(s: &str) -> Result<ThetaMode> {
    match s {
        "fixed" => Ok(ThetaMode::Fixed),
        "latent" => Ok(ThetaMode::LatentPrior),
        "integrated" => Ok(ThetaMode::Integrated),
        other => Err(Error::InvalidParameter(format!(
            "mode {other:?} is not fixed, latent, or integrated"
        ))),
    }
}

fn read_init_theta(path: &PathBuf, q: usize) -> Result<Theta<f64>> {
    let table = Table::read(path)?;
    let name_col = table.column("name")?;
    let value_col = table.column("value")?;
    let names = Params::param_names(q);
    let mut flat = vec![f64::NAN; names.len()];
    for r in 0..table.rows.len() {
        let name = &table.rows[r].cells[name_col];
        let k = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Parse {
                path: table.path.display().to_string(),
                line: table.rows[r].line,
                message: format!(
                    "unknown parameter {name}; expected one of {}",
                    names.join(", ")
                ),
            })?;
        flat[k] = table.number(r, value_col)?;
    }
    if let Some(k) = flat.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidTheta(format!(
            "initial parameters never set {}",
            names[k]
        )));
    }
    Theta::unflatten(q, &flat)
}

/// Everything `fit` resolved, echoed into the bundle for reproducibility.
struct Resolved {
    dag: DagParams,
    chain: ChainConfig<f64>,
    mode_name: String,
    threads: usize,
}

fn write_bundle(
    args: &FitArgs,
    resolved: &Resolved,
    data: &ModelData<f64>,
    covariate_names: &[String],
    out: &ChainOutput<f64>,
    elapsed_s: f64,
) -> Result<()> {
    let dir = &args.out;
    fs::create_dir_all(dir)?;
    fs::copy(&args.data, dir.join("data.csv"))?;
    fs::write(dir.join("dag.txt"), data.dag.to_text())?;

    let q = data.n_margins();
    let kept = out.theta_draws.len();
    let theta_names = Params::param_names(q);
    let theta = DMatrix::from_fn(kept, theta_names.len(), |r, c| {
        out.theta_draws[r].flatten()[c]
    });
    write_matrix(dir.join("theta.csv"), &theta_names, &theta)?;

    let tau2_names: Vec<String> = (0..q).map(|m| format!("tau2_{m}")).collect();
    let tau2 = DMatrix::from_fn(kept, q, |r, c| out.tau2_draws[r][c]);
    write_matrix(dir.join("tau2.csv"), &tau2_names, &tau2)?;

    if !covariate_names.is_empty() {
        let mut beta_names = Vec::with_capacity(covariate_names.len() * q);
        for m in 0..q {
            for name in covariate_names {
                beta_names.push(format!("beta_{name}_{m}"));
            }
        }
        let p = covariate_names.len();
        let beta = DMatrix::from_fn(kept, p * q, |r, c| out.beta_draws[r][(c % p, c / p)]);
        write_matrix(dir.join("beta.csv"), &beta_names, &beta)?;
    }

    if !out.w_draws.is_empty() {
        let w_names: Vec<String> = (0..data.dag.n_locations())
            .map(|o| format!("w_{o}"))
            .collect();
        let w = DMatrix::from_fn(kept, w_names.len(), |r, c| out.w_draws[r][c]);
        write_matrix(dir.join("w.csv"), &w_names, &w)?;
    }

    let d = &out.diagnostics;
    let config_rows: Vec<(String, String)> = vec![
        ("levels".into(), resolved.dag.levels.to_string()),
        ("depth".into(), resolved.dag.depth.to_string()),
        ("fanout".into(), resolved.dag.fanout.to_string()),
        ("subset".into(), resolved.dag.subset_size.to_string()),
        (
            "bias".into(),
            resolved
                .dag
                .bias_weights
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        ),
        ("dag-seed".into(), resolved.dag.seed.to_string()),
        ("sweeps".into(), resolved.chain.sweeps.to_string()),
        ("burn-in".into(), resolved.chain.burn_in.to_string()),
        ("thin".into(), resolved.chain.thin.to_string()),
        ("seed".into(), resolved.chain.seed.to_string()),
        ("mode".into(), resolved.mode_name.clone()),
        (
            "sample-alpha-beta".into(),
            resolved.chain.sample_alpha_beta.to_string(),
        ),
        ("ram-scale".into(), resolved.chain.ram_scale.to_string()),
        (
            "beta-var".into(),
            resolved.chain.priors.beta_var.to_string(),
        ),
        (
            "tau2-shape".into(),
            resolved.chain.priors.tau2_shape.to_string(),
        ),
        (
            "tau2-rate".into(),
            resolved.chain.priors.tau2_rate.to_string(),
        ),
        (
            "theta-sd".into(),
            resolved.chain.priors.theta_sd.to_string(),
        ),
        (
            "integrated-cap".into(),
            resolved.chain.integrated_cap.to_string(),
        ),
        ("keep-w".into(), resolved.chain.keep_w.to_string()),
        ("threads".into(), resolved.threads.to_string()),
    ];
    write_csv(
        dir.join("config.csv"),
        &["key", "value"],
        config_rows.into_iter().map(|(k, v)| vec![k, v]),
    )?;

    let diag_rows: Vec<(String, String)> = vec![
        ("locations".into(), data.dag.n_locations().to_string()),
        ("nodes".into(), data.dag.n_nodes().to_string()),
        ("levels_built".into(), data.dag.levels().to_string()),
        ("kept_draws".into(), kept.to_string()),
        ("theta_proposals".into(), d.theta_proposals.to_string()),
        ("theta_accepts".into(), d.theta_accepts.to_string()),
        ("theta_acceptance".into(), d.acceptance_rate().to_string()),
        (
            "theta_nonpd_rejects".into(),
            d.theta_nonpd_rejects.to_string(),
        ),
        ("max_jitter".into(), d.max_jitter.to_string()),
        (
            "leaf_fallbacks".into(),
            data.dag
                .diagnostics()
                .fallback_assignments
                .len()
                .to_string(),
        ),
        ("elapsed_s".into(), elapsed_s.to_string()),
    ];
    write_csv(
        dir.join("diagnostics.csv"),
        &["key", "value"],
        diag_rows.into_iter().map(|(k, v)| vec![k, v]),
    )?;
    Ok(())
}

pub fn run(args: &FitArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };

    let dataset = read_dataset(&args.data)?;
    let q = dataset.n_vars;
    let bias_spec = match &args.bias {
        Some(s) => Some(s.clone()),
        None => cfg.get("bias").cloned(),
    };
    let bias_weights = match bias_spec {
        Some(s) => {
            let v = parse_list(&s.replace(';', ","), "bias")?;
            if v.len() != q {
                return Err(Error::InvalidParameter(format!(
                    "{} bias weights for {q} variables",
                    v.len()
                )));
            }
            v
        }
        None => vec![1.0; q],
    };
    let levels = resolve(args.levels, &cfg, "levels", 3)?;
    let dag_params = DagParams {
        levels,
        depth: resolve(args.depth, &cfg, "depth", levels)?,
        fanout: resolve(args.fanout, &cfg, "fanout", 2)?,
        subset_size: resolve(args.subset, &cfg, "subset", 25)?,
        bias_weights,
        seed: resolve(args.dag_seed, &cfg, "dag-seed", 1)?,
    };

    let defaults = ChainConfig::<f64>::default();
    let mode_name = resolve(args.mode.clone(), &cfg, "mode", "latent".to_string())?;
    let chain = ChainConfig {
        sweeps: resolve(args.sweeps, &cfg, "sweeps", defaults.sweeps)?,
        burn_in: resolve(args.burn_in, &cfg, "burn-in", defaults.burn_in)?,
        thin: resolve(args.thin, &cfg, "thin", defaults.thin)?,
        seed: resolve(args.seed, &cfg, "seed", defaults.seed)?,
        mode: parse_mode(&mode_name)?,
        sample_alpha_beta: resolve(
            args.sample_alpha_beta,
            &cfg,
            "sample-alpha-beta",
            defaults.sample_alpha_beta,
        )?,
        ram_scale: resolve(args.ram_scale, &cfg, "ram-scale", defaults.ram_scale)?,
        priors: Priors {
            beta_var: resolve(args.beta_var, &cfg, "beta-var", defaults.priors.beta_var)?,
            tau2_shape: resolve(
                args.tau2_shape,
                &cfg,
                "tau2-shape",
                defaults.priors.tau2_shape,
            )?,
            tau2_rate: resolve(args.tau2_rate, &cfg, "tau2-rate", defaults.priors.tau2_rate)?,
            theta_sd: resolve(args.theta_sd, &cfg, "theta-sd", defaults.priors.theta_sd)?,
        },
        integrated_cap: resolve(
            args.integrated_cap,
            &cfg,
            "integrated-cap",
            defaults.integrated_cap,
        )?,
        keep_w: resolve(args.keep_w, &cfg, "keep-w", defaults.keep_w)?,
    };
    let threads = resolve(args.threads, &cfg, "threads", 0)?;

    let init_theta = match &args.init_theta {
        Some(path) => read_init_theta(path, q)?,
        None => Params::baseline(q),
    };

    let covariate_names = dataset.covariate_names.clone();
    let data = dataset.into_model(&dag_params)?;
    println!(
        "graph: {} locations in {} nodes over {} levels (depth {})",
        data.dag.n_locations(),
        data.dag.n_nodes(),
        data.dag.levels(),
        data.dag.depth(),
    );

    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| {
            Error::InvalidParameter(format!("cannot build a {threads}-thread pool: {e}"))
        })?;
    let out = pool.install(|| run_chain(&data, init_theta, &chain))?;
    let elapsed_s = start.elapsed().as_secs_f64();

    let resolved = Resolved {
        dag: dag_params,
        chain,
        mode_name,
        threads: pool.current_num_threads(),
    };
    write_bundle(args, &resolved, &data, &covariate_names, &out, elapsed_s)?;
    println!(
        "{} sweeps in {elapsed_s:.1}s ({} draws kept, acceptance {:.3})",
        resolved.chain.sweeps,
        out.theta_draws.len(),
        out.diagnostics.acceptance_rate(),
    );
    println!("bundle written to {}", args.out.display());
    Ok(())
}
