//! `treegp synth` — write a synthetic dataset with ground truth.

use std::fs;
use std::path::PathBuf;

use clap::Args;

use treegp::error::{Error, Result};
use treegp::synthgen::{generate, Patch, SynthConfig};
use treegp::tabular::write_csv;
use treegp::Params;

use crate::data::write_dataset;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (data.csv, truth.csv, synth_config.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Grid side; each variable is sampled at all side² sites.
    #[arg(long, default_value_t = 30)]
    pub side: usize,
    /// Number of variables.
    #[arg(long, default_value_t = 2)]
    pub vars: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Noise variances, one per variable (comma separated).
    #[arg(long)]
    pub tau2: Option<String>,
    /// Observation probability outside patches.
    #[arg(long, default_value_t = 0.2)]
    pub keep_prob: f64,
    /// Observation probability inside a patch.
    #[arg(long, default_value_t = 0.01)]
    pub patch_keep_prob: f64,
    /// Patch spec `margin:cx:cy:radius`; repeatable. Without any, the
    /// default three-patch layout is used; `--no-patches` removes all.
    #[arg(long = "patch")]
    pub patches: Vec<String>,
    #[arg(long, default_value_t = false)]
    pub no_patches: bool,
    /// Location-count cap for the exact dense field draw.
    #[arg(long, default_value_t = 10_000)]
    pub dense_cap: usize,
}

fn parse_patch(spec: &str) -> Result<Patch<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let fail = || Error::InvalidParameter(format!("patch {spec:?} is not margin:cx:cy:radius"));
    if parts.len() != 4 {
        return Err(fail());
    }
    let margin = parts[0].parse().map_err(|_| fail())?;
    let nums: Vec<f64> = parts[1..]
        .iter()
        .map(|p| p.parse().map_err(|_| fail()))
        .collect::<Result<_>>()?;
    Ok(Patch {
        margin,
        center: vec![nums[0], nums[1]],
        radius: nums[2],
    })
}

pub fn parse_list(spec: &str, what: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{what}: {p:?} is not a number")))
        })
        .collect()
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let defaults = SynthConfig::<f64>::default();
    let tau2 = match &args.tau2 {
        Some(s) => parse_list(s, "tau2")?,
        None if args.vars == 2 => defaults.tau2,
        None => vec![0.1; args.vars],
    };
    let patches = if args.no_patches {
        Vec::new()
    } else if args.patches.is_empty() {
        defaults
            .patches
            .into_iter()
            .filter(|p| p.margin < args.vars)
            .collect()
    } else {
        args.patches
            .iter()
            .map(|s| parse_patch(s))
            .collect::<Result<_>>()?
    };
    let config = SynthConfig {
        side: args.side,
        n_vars: args.vars,
        theta: Params::baseline(args.vars),
        tau2,
        keep_prob: args.keep_prob,
        patch_keep_prob: args.patch_keep_prob,
        patches,
        seed: args.seed,
        dense_cap: args.dense_cap,
    };
    let data = generate(&config)?;
    fs::create_dir_all(&args.out)?;

    write_dataset(
        args.out.join("data.csv"),
        &data.locations,
        &data.observed,
        data.y.as_slice(),
    )?;
    let dim = data.locations[0].coords.len();
    let mut headers: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    headers.extend(["var".into(), "w".into(), "y".into(), "observed".into()]);
    write_csv(
        args.out.join("truth.csv"),
        &headers,
        (0..data.locations.len()).map(|o| {
            let loc = &data.locations[o];
            let mut row: Vec<String> = loc.coords.iter().map(f64::to_string).collect();
            row.push(loc.var.to_string());
            row.push(data.w[o].to_string());
            row.push(data.y[o].to_string());
            row.push(usize::from(data.observed[o]).to_string());
            row
        }),
    )?;
    let mut meta: Vec<Vec<String>> = vec![
        vec!["side".into(), config.side.to_string()],
        vec!["vars".into(), config.n_vars.to_string()],
        vec!["seed".into(), config.seed.to_string()],
        vec!["keep_prob".into(), config.keep_prob.to_string()],
        vec!["patch_keep_prob".into(), config.patch_keep_prob.to_string()],
        vec!["patches".into(), config.patches.len().to_string()],
    ];
    for (name, value) in Params::param_names(args.vars)
        .iter()
        .zip(config.theta.flatten())
    {
        meta.push(vec![name.clone(), value.to_string()]);
    }
    for (m, t) in config.tau2.iter().enumerate() {
        meta.push(vec![format!("tau2_{m}"), t.to_string()]);
    }
    write_csv(args.out.join("synth_config.csv"), &["key", "value"], meta)?;

    println!(
        "wrote {} locations ({} observed) to {}",
        data.locations.len(),
        data.n_observed(),
        args.out.display()
    );
    Ok(())
}
