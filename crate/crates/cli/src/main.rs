use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ringhil_core::metrics::{read_log, replay, write_log, write_summaries_csv, LogError, ReplayError, RunSummary};
use ringhil_core::scenario::ScenarioFile;
use ringhil_session::SessionConfig;

mod sweep;
mod train;

#[derive(Parser)]
#[command(name = "ringhil", version, about = "Ring-road advisory simulator and session server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one headless episode per seed.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the Cartesian product of a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// JSON file listing values per hyperparameter.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Train a policy with the cross-entropy method.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        trainer: train::TrainArgs,
    },
    /// Recompute a log and compare it bit for bit.
    Replay {
        log: PathBuf,
    },
    /// Serve a live session to one cockpit client.
    Serve {
        /// Session config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        /// Log directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (for `train`, the policy file).
    #[arg(long)]
    out: PathBuf,
    /// Run only this seed instead of the scenario's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Advice hold length in ticks.
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long)]
    range_mph: Option<f64>,
    #[arg(long)]
    n_vehicles: Option<usize>,
    /// Non-ego acceleration noise standard deviation in m/s^2.
    #[arg(long)]
    noise: Option<f64>,
}

impl Overrides {
    fn apply(&self, s: &mut ScenarioFile) {
        if let Some(d) = self.delta {
            s.advice.delta = d;
        }
        if let Some(r) = self.range_mph {
            s.advice.range_mph = r;
        }
        if let Some(n) = self.n_vehicles {
            s.ring.n_vehicles = n;
        }
        if let Some(noise) = self.noise {
            s.ring.accel_noise_std = noise;
        }
    }
}

impl Common {
    fn scenario(&self) -> Result<ScenarioFile> {
        let mut s = match &self.config {
            Some(path) => ScenarioFile::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ScenarioFile::default(),
        };
        self.overrides.apply(&mut s);
        if let Some(seed) = self.seed {
            s.seeds = vec![seed];
        }
        s.validate()?;
        Ok(s)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                bail!("--jobs must be at least 1");
            }
            b = b.num_threads(j);
        }
        Ok(b.build()?)
    }
}

fn write_csv(path: &Path, rows: &[RunSummary]) -> Result<()> {
    write_summaries_csv(BufWriter::new(File::create(path)?), rows).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(common: &Common) -> Result<()> {
    let scenario = common.scenario()?;
    fs::create_dir_all(&common.out)?;
    let outcomes: Vec<RunSummary> = common.pool()?.install(|| {
        scenario
            .seeds
            .par_iter()
            .map(|&seed| -> Result<RunSummary> {
                let outcome = scenario.run_seed(seed)?;
                let path = common.out.join(format!("{}-seed{seed}.jsonl", scenario.label));
                write_log(BufWriter::new(File::create(&path)?), &outcome.log.header, &outcome.log.records)?;
                Ok(outcome.summary)
            })
            .collect::<Result<_>>()
    })?;
    for s in &outcomes {
        println!(
            "seed {}: mean speed {:.4} m/s, wave fraction {:.4}, collisions {}",
            s.seed, s.mean_speed_post_warmup_mps, s.wave_fraction, s.collisions
        );
    }
    write_csv(&common.out.join("summary.csv"), &outcomes)
}

/// `Ok(true)` when the log matches.
fn cmd_replay(path: &Path) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = match read_log(BufReader::new(file)) {
        Ok(log) => log,
        Err(e @ LogError::VersionMismatch { .. }) => bail!("version error: {e}"),
        Err(e) => return Err(e).context("reading log"),
    };
    match replay(&log) {
        Ok(_) => {
            println!("match");
            Ok(true)
        }
        Err(ReplayError::Diverged(d)) => {
            println!("{d}");
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_serve(config: Option<&Path>, port: Option<u16>, out: Option<&Path>, overrides: &Overrides) -> Result<()> {
    let mut cfg = match config {
        Some(path) => SessionConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => SessionConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(dir) = out {
        cfg.log_dir = dir.into();
    }
    overrides.apply(&mut cfg.scenario);
    let runtime = tokio::runtime::Runtime::new()?;
    let report = runtime.block_on(async {
        let server = ringhil_session::SessionServer::bind(cfg).await?;
        println!("listening on ws://{}", server.local_addr()?);
        server.run().await
    })?;
    for seg in &report.segments {
        println!(
            "{}: mean speed {:.4} m/s, complete {}, log {}",
            seg.name,
            seg.summary.mean_speed_post_warmup_mps,
            seg.complete,
            seg.log_path.display()
        );
    }
    if report.aborted {
        bail!("session abandoned after the client did not return");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common).map(|_| true),
        Command::Sweep { common, grid } => sweep::cmd_sweep(common, grid).map(|_| true),
        Command::Train { common, trainer } => train::cmd_train(common, trainer).map(|_| true),
        Command::Replay { log } => cmd_replay(log),
        Command::Serve { config, port, out, overrides } => {
            cmd_serve(config.as_deref(), *port, out.as_deref(), overrides).map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
