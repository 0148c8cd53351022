use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sonarnav_core::harness::{calibrate, dump_masks, run_batch, write_batch_outputs, RunConfig};
use sonarnav_core::WorldModelF64;

#[derive(Parser)]
#[command(
    name = "sonarnav",
    version,
    about = "Multi-sonar acoustic flow navigation simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One seeded run of one configuration.
    Run(RunArgs),
    /// Every configuration × `--runs` repeats, with report and heatmap.
    Batch(RunArgs),
    /// Check the layer thresholds against noise and probe echoes.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write masks and flow-line rasters as CSV matrices.
    DumpMasks {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "masks")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    world: PathBuf,
    /// Config file, or a directory of `*.json` configs.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    runs: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Override the configured timeout, in ticks.
    #[arg(long)]
    ticks_max: Option<usize>,
}

fn batch(args: &RunArgs, single: bool) -> Result<bool> {
    let world = WorldModelF64::load(&args.world).context("loading world")?;
    let mut configs = RunConfig::load_many(&args.config).context("loading configs")?;
    let runs = if single {
        configs.truncate(1);
        1
    } else {
        args.runs
    };
    let outcome = run_batch(&configs, &world, args.seed, runs, args.ticks_max)?;
    write_batch_outputs(&args.out_dir, &outcome)
        .with_context(|| format!("writing outputs to {}", args.out_dir.display()))?;
    let r = &outcome.report;
    for c in &r.configs {
        println!(
            "{:<12} runs {:>3}  collisions {:>2}  completed {:>3}  errors {:>2}  mean ticks {:.0}",
            c.name, c.runs, c.collisions, c.completed, c.errors, c.mean_ticks
        );
    }
    println!(
        "total: {} runs, {} collisions, {:.1}% completed, {} errors -> {}",
        r.total_runs,
        r.collisions,
        100.0 * r.completion_rate,
        r.errors,
        args.out_dir.display()
    );
    Ok(r.success())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match try_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<bool> {
    match Cli::parse().cmd {
        Cmd::Run(args) => batch(&args, true),
        Cmd::Batch(args) => batch(&args, false),
        Cmd::Calibrate {
            config,
            frames,
            seed,
        } => {
            let mut ok = true;
            for cfg in RunConfig::load_many(&config)? {
                let rep = calibrate(&cfg, frames, seed)?;
                for l in &rep.layers {
                    println!(
                        "{:<12} {:<3} noise p99 {:.4}  threshold {:.4}  weakest echo {:.4}  margin {:+.4}  {}",
                        rep.config,
                        l.layer.short_name(),
                        l.noise_p99,
                        l.threshold,
                        l.weakest_echo,
                        l.margin(),
                        if l.pass { "ok" } else { "FAIL" }
                    );
                }
                if let Err(e) = rep.into_result() {
                    eprintln!("{e}");
                    ok = false;
                }
            }
            if !ok {
                bail!("calibration failed");
            }
            Ok(true)
        }
        Cmd::DumpMasks { config, out_dir } => {
            for cfg in RunConfig::load_many(&config)? {
                let files = dump_masks(&cfg, &out_dir)?;
                println!(
                    "{}: {} files in {}",
                    cfg.name,
                    files.len(),
                    out_dir.display()
                );
            }
            Ok(true)
        }
    }
}
