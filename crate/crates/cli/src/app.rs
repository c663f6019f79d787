//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_bench, cmd_evaluate, cmd_realdata, cmd_sweep_bandwidth, cmd_train};
use crate::config::{Overrides, RunConfig, SEED_ENV};
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "emlreg", version, about = "Deep nonparametric regression with an estimated-maximum-likelihood loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bias, SD and RMSE of each loss on a simulated scenario.
    Bench(Common),
    /// EML metrics and prediction error across bandwidth proportions.
    SweepBandwidth(Common),
    /// Mean prediction error per loss over repeated random splits of a CSV.
    Realdata {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Train one model on a CSV and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Prediction error of a saved checkpoint on a CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to the recorded value.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated loss names (LS, LAD, Huber, Cauchy, Tukey, EML).
    #[arg(long, value_delimiter = ',')]
    pub loss: Option<Vec<String>>,
    /// Master seed; overrides EMLREG_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Bandwidth proportion(s); a list for sweep-bandwidth.
    #[arg(long, value_delimiter = ',')]
    pub v: Option<Vec<f64>>,
    /// Run exactly this many epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column name.
    #[arg(long)]
    pub response: Option<String>,
    /// Also z-score the response.
    #[arg(long)]
    pub standardize_response: bool,
}

/// Config file, then `EMLREG_SEED`, then flags.
pub fn resolve_config(common: &Common, data: Option<&DataArgs>, repeats: Option<usize>, sweep: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        losses: common.loss.clone(),
        seed: common.seed,
        v: common.v.clone(),
        response: data.and_then(|d| d.response.clone()),
        repeats,
        epochs: common.epochs,
        data: data.and_then(|d| d.data.clone()),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.apply(env.as_deref(), &overrides, sweep)?;
    if data.is_some_and(|d| d.standardize_response) {
        cfg.data.standardize_response = true;
    }
    Ok(cfg)
}

/// Run `command` with a resolved configuration.
pub fn execute(command: &str, cfg: &RunConfig, checkpoint: Option<&Path>, jobs: usize, out: &Path) -> Result<()> {
    match command {
        "bench" => {
            for r in cmd_bench(cfg, jobs, out)? {
                println!("{:<7} bias {:.6}  sd {:.6}  rmse {:.6}", r.loss, r.bias, r.sd, r.rmse);
            }
        }
        "sweep-bandwidth" => {
            for r in cmd_sweep_bandwidth(cfg, jobs, out)? {
                println!("v {:<5} bias {:.6}  sd {:.6}  rmse {:.6}  pe {:.6}", r.v, r.bias, r.sd, r.rmse, r.pe);
            }
        }
        "realdata" => {
            for r in cmd_realdata(cfg, jobs, out)?.rows {
                println!("{:<7} mean pe {:.6}  sd {:.6}", r.loss, r.mean_pe, r.sd_pe);
            }
        }
        "train" => {
            let s = cmd_train(cfg, jobs, out)?;
            println!("{}: {} epochs, training loss {:.6}", s.loss, s.epochs_run, s.final_loss);
        }
        "evaluate" => {
            let checkpoint = checkpoint.ok_or_else(|| CliError::usage("evaluate needs --checkpoint"))?;
            println!("pe {}", cmd_evaluate(cfg, checkpoint, jobs, out)?);
        }
        other => return Err(CliError::usage(format!("unknown command `{other}`"))),
    }
    println!("wrote {}", out.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(c) => execute("bench", &resolve_config(&c, None, None, false)?, None, c.jobs, &c.out),
        Command::SweepBandwidth(c) => {
            execute("sweep-bandwidth", &resolve_config(&c, None, None, true)?, None, c.jobs, &c.out)
        }
        Command::Realdata { common, data, repeats } => {
            let cfg = resolve_config(&common, Some(&data), repeats, false)?;
            execute("realdata", &cfg, None, common.jobs, &common.out)
        }
        Command::Train { common, data } => {
            let cfg = resolve_config(&common, Some(&data), None, false)?;
            execute("train", &cfg, None, common.jobs, &common.out)
        }
        Command::Evaluate { common, data, checkpoint } => {
            let cfg = resolve_config(&common, Some(&data), None, false)?;
            execute("evaluate", &cfg, Some(&checkpoint), common.jobs, &common.out)
        }
        Command::Replay { manifest, out, jobs } => {
            let m = RunManifest::load(&manifest)?;
            execute(&m.command, &m.config, m.checkpoint.as_deref(), jobs.unwrap_or(m.jobs), &out)
        }
    }
}
