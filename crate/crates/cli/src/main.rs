//! `pathint`: simulate, train, evaluate, sweep and analyse leaky RNNs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric abort, 1 anything
//! else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pathint::experiment::{
    evaluate_checkpoint, load_config, run_sweep, simulate_command, topology_command, train_command,
    ExperimentConfig, Overrides, Profile, SweepKind,
};
use pathint::Error;

#[derive(Parser)]
#[command(name = "pathint", version, about = "Leaky RNN path-integration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment TOML; profile defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base profile the file is merged onto.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write trajectories and the place-cell ensemble.
    Simulate(Common),
    /// Train one network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Leak rate.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Decoding error per sequence length and grid analysis of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Seed-matched sweep over the leak rate.
    SweepAlpha(Common),
    /// Leak rate × noise intensity sweep for each noise kind.
    SweepNoise(Common),
    /// Sweep over the arena side length.
    SweepEnv(Common),
    /// Persistent homology and Fourier torus of a checkpoint's activity.
    Topology {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

enum Failure {
    Config(String),
    Numeric(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            e if e.is_numeric() => Failure::Numeric(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn resolve(common: &Common, alpha: Option<f64>) -> Result<ExperimentConfig, Failure> {
    let ov = Overrides {
        profile: common.profile,
        seed: common.seed,
        out: common.out.clone(),
        alpha,
    };
    Ok(load_config(common.config.as_deref(), &ov)?)
}

fn sweep(common: &Common, kind: SweepKind) -> Result<(), Failure> {
    let cfg = resolve(common, None)?;
    let results = run_sweep(&cfg, kind)?;
    for r in &results {
        for s in &r.summary {
            let alpha = if r.parameter == "alpha" {
                String::new()
            } else {
                format!(" alpha={}", s.alpha)
            };
            println!(
                "{} {}={}{alpha} mse={:.3}±{:.3} gs={:.4}±{:.4} ({}/{} runs)",
                r.name,
                r.parameter,
                s.value,
                s.final_mse.0,
                s.final_mse.1,
                s.mean_gs.0,
                s.mean_gs.1,
                s.n_completed,
                s.n_trials
            );
        }
    }
    let aborted: Vec<&str> = results
        .iter()
        .flat_map(|r| &r.rows)
        .filter(|r| r.record.abort.is_some())
        .map(|r| r.record.label.as_str())
        .collect();
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("runs aborted: {}", aborted.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = resolve(&common, None)?;
            let files = simulate_command(&cfg)?;
            println!("wrote {} trajectories to {}", files.len(), cfg.output_dir.display());
            Ok(())
        }
        Command::Train { common, alpha } => {
            let cfg = resolve(&common, alpha)?;
            let r = train_command(&cfg)?;
            match &r.abort {
                Some(msg) => Err(Failure::Numeric(msg.clone())),
                None => {
                    println!(
                        "alpha={} final_loss={} final_mse={} checkpoint={}",
                        r.alpha,
                        r.final_loss,
                        r.final_mse.unwrap_or(f64::NAN),
                        cfg.output_dir.join(&r.checkpoint).display()
                    );
                    Ok(())
                }
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = resolve(&common, None)?;
            let e = evaluate_checkpoint(&cfg, &checkpoint, cfg.eval.test_trajectories, &cfg.eval.t_list)?;
            for p in &e.per_t {
                println!("T={} mse={:.3}", p.seq_len, p.mse);
            }
            println!(
                "mean_gs={} defined={}/{}",
                e.maps.mean_gs.unwrap_or(f64::NAN),
                e.maps.n_defined,
                e.maps.n_defined + e.maps.n_undefined
            );
            Ok(())
        }
        Command::SweepAlpha(common) => sweep(&common, SweepKind::Alpha),
        Command::SweepNoise(common) => sweep(&common, SweepKind::Noise),
        Command::SweepEnv(common) => sweep(&common, SweepKind::EnvLength),
        Command::Topology { common, checkpoint } => {
            let cfg = resolve(&common, None)?;
            let s = topology_command(&cfg, &checkpoint)?;
            println!(
                "points={} top3 lifetimes H0..H{}={:?} torus_found={}",
                s.n_points,
                s.top_means.len().saturating_sub(1),
                s.top_means,
                s.torus_found
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric abort: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
