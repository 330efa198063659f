//! Command line front-end: run the back-end over synthetic or recorded
//! input, compare estimator modes, export synthetic datasets, and evaluate
//! trajectories.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! failures.

use clap::{Parser, Subcommand};
use cluster_slam::config::{load_run_config, Mode, ResolvedConfig};
use cluster_slam::eval::{ate_rmse, median, DEFAULT_MAX_DT};
use cluster_slam::io::dataset::Dataset;
use cluster_slam::io::tum;
use cluster_slam::pipeline::{
    export_artifacts, export_synthetic_dataset, run_dataset, run_synthetic, PipelineParams,
    RunResult,
};
use cluster_slam::sim::SceneSpec;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cslam", about = "Semantic-cluster SLAM back-end", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator for every configured seed and export artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the estimator mode (plain|planar).
        #[arg(long)]
        mode: Option<Mode>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run both modes over the configured seeds and report ATE medians.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the configured synthetic scene as a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scale-aligned ATE between two TUM trajectories.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Timestamp association window, seconds.
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load(config: &Path) -> Result<ResolvedConfig, CliError> {
    load_run_config(config).map_err(config_err)
}

fn load_scene(resolved: &ResolvedConfig) -> Result<Option<SceneSpec>, CliError> {
    match &resolved.run.input.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            let spec: SceneSpec = toml::from_str(&text)
                .map_err(|e| config_err(format!("cannot parse {}: {e}", path.display())))?;
            Ok(Some(spec))
        }
        None => Ok(None),
    }
}

fn params_for(resolved: &ResolvedConfig, mode: Mode, seed: u64) -> PipelineParams {
    PipelineParams {
        mode,
        seed,
        pipeline: resolved.run.pipeline.clone(),
        ba: resolved.run.ba.clone(),
        ransac: resolved.ransac.clone(),
    }
}

fn run_one(
    resolved: &ResolvedConfig,
    scene: Option<&SceneSpec>,
    mode: Mode,
    seed: u64,
) -> Result<RunResult, CliError> {
    let params = params_for(resolved, mode, seed);
    match scene {
        Some(spec) => run_synthetic(spec, &resolved.classes, &params).map_err(runtime_err),
        None => {
            let dir = resolved.run.input.dataset.as_ref().expect("validated input");
            let ds = Dataset::load(dir).map_err(runtime_err)?;
            run_dataset(&ds, &resolved.classes, &params).map_err(runtime_err)
        }
    }
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let resolved = load(config)?;
    let scene = load_scene(&resolved)?;
    let mode = mode.unwrap_or(resolved.run.input.mode);
    let seeds = match seed {
        Some(s) => vec![s],
        None => resolved.run.input.seeds.clone(),
    };
    let out = out.unwrap_or_else(|| resolved.run.input.out.clone());

    let mut manifest: BTreeMap<String, String> = BTreeMap::new();
    for &s in &seeds {
        let result = run_one(&resolved, scene.as_ref(), mode, s)?;
        let seed_dir = out.join(format!("seed{s}"));
        let hashes = export_artifacts(&seed_dir, &result).map_err(runtime_err)?;
        for (name, hash) in hashes {
            manifest.insert(format!("seed{s}/{name}"), hash);
        }
        let r = &result.report;
        match r.ate_rmse {
            Some(ate) => println!(
                "seed {s}: mode={} keyframes={} points={} planes={} ate_rmse={:.6} (initial {:.6})",
                r.mode,
                r.num_keyframes,
                r.num_points,
                r.num_accepted_planes,
                ate,
                r.initial_ate_rmse.unwrap_or(f64::NAN),
            ),
            None => println!(
                "seed {s}: mode={} keyframes={} points={} planes={} (no ground truth)",
                r.mode, r.num_keyframes, r.num_points, r.num_accepted_planes,
            ),
        }
    }
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialize");
    std::fs::write(&manifest_path, text)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", manifest_path.display())))?;
    println!("artifacts in {}", out.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct Comparison {
    seeds: Vec<u64>,
    plain_ate: Vec<f64>,
    planar_ate: Vec<f64>,
    plain_median: f64,
    planar_median: f64,
    planar_wins: usize,
}

fn cmd_compare(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let resolved = load(config)?;
    let scene = load_scene(&resolved)?;
    let seeds = resolved.run.input.seeds.clone();
    let mut plain_ate = Vec::new();
    let mut planar_ate = Vec::new();
    for &s in &seeds {
        for (mode, acc) in [(Mode::Plain, &mut plain_ate), (Mode::Planar, &mut planar_ate)] {
            let result = run_one(&resolved, scene.as_ref(), mode, s)?;
            let ate = result.report.ate_rmse.ok_or_else(|| {
                CliError::Runtime("compare needs ground truth for ATE".into())
            })?;
            acc.push(ate);
            println!("seed {s} {mode}: ate_rmse={ate:.6}");
        }
    }
    let planar_wins = plain_ate
        .iter()
        .zip(planar_ate.iter())
        .filter(|(pl, pr)| pr < pl)
        .count();
    let comparison = Comparison {
        seeds,
        plain_median: median(&plain_ate).unwrap_or(f64::NAN),
        planar_median: median(&planar_ate).unwrap_or(f64::NAN),
        plain_ate,
        planar_ate,
        planar_wins,
    };
    println!(
        "median ate: plain={:.6} planar={:.6}, planar better on {}/{} seeds",
        comparison.plain_median,
        comparison.planar_median,
        comparison.planar_wins,
        comparison.seeds.len()
    );
    let out = out.unwrap_or_else(|| resolved.run.input.out.clone());
    std::fs::create_dir_all(&out)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join("comparison.json");
    let text = serde_json::to_string_pretty(&comparison).expect("comparison serialize");
    std::fs::write(&path, text)
        .map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_simulate(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let resolved = load(config)?;
    let Some(scene) = load_scene(&resolved)? else {
        return Err(CliError::Config(
            "simulate needs a scene spec in the run config".into(),
        ));
    };
    let seed = seed.unwrap_or_else(|| resolved.run.input.seeds[0]);
    let out = out.unwrap_or_else(|| resolved.run.input.out.join("dataset"));
    let params = params_for(&resolved, resolved.run.input.mode, seed);
    export_synthetic_dataset(&scene, &resolved.classes, &params, &out).map_err(runtime_err)?;
    println!("dataset written to {}", out.display());
    Ok(())
}

fn cmd_eval(est: &Path, gt: &Path, max_dt: f64) -> Result<(), CliError> {
    let est = tum::read_trajectory(est).map_err(runtime_err)?;
    let gt = tum::read_trajectory(gt).map_err(runtime_err)?;
    let ate = ate_rmse(&est, &gt, max_dt).map_err(runtime_err)?;
    println!("ate_rmse={ate:.6}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, mode, out } => cmd_run(&config, seed, mode, out),
        Command::Compare { config, out } => cmd_compare(&config, out),
        Command::Simulate { config, seed, out } => cmd_simulate(&config, seed, out),
        Command::Eval { est, gt, max_dt } => cmd_eval(&est, &gt, max_dt),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
