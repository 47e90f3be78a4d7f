//! Command-line front end: training, evaluation, log replay and live
//! serving over a websocket.

pub mod config;
pub mod error;
pub mod eval;
pub mod protocol;
pub mod replay;
pub mod serve;
pub mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use quadfault::env::Stage;
use quadfault::policy::{HeadSelector, SelectionMode};
use quadfault::ppo::TrainVariant;

use crate::config::AppConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "quadfault", version, about = "Fault-tolerant quadruped locomotion: train, evaluate, replay, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Survival,
    Tracking,
    Contact,
    Distribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SwitchingArg {
    Oracle,
    Disc,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train stage 1 from scratch, resume it, or continue into stage 2.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "1")]
        stage: StageArg,
        /// ours, normal, mix or no_reflection.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Progress line interval on stderr; 0 silences it.
        #[arg(long, default_value_t = 10)]
        log_every: usize,
    },
    /// Fit the fault discriminator on a stage-2 dataset.
    TrainDisc {
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Multi-head checkpoint whose closed-loop episodes are added to the dataset
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment and write its reports.
    Eval {
        config: PathBuf,
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        /// `name=checkpoint`, repeatable.
        #[arg(long = "policy", required = true)]
        policies: Vec<String>,
        #[arg(long)]
        discriminator: Option<PathBuf>,
        /// Episodes per group (survival), per cell (tracking, contact) or
        /// agents per status (distribution).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        switching: Option<SwitchingArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit a trajectory or telemetry log as telemetry messages.
    Replay {
        file: PathBuf,
        /// Playback speed relative to 50 Hz; 0 emits without pacing.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Write frames here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve one robot in real time over a websocket.
    Serve {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        discriminator: Option<PathBuf>,
        /// Select heads from the true status instead of the discriminator.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 50.0)]
        tick_rate: f64,
        #[arg(long)]
        max_ticks: Option<u64>,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_variant(s: &str) -> Result<TrainVariant, CliError> {
    TrainVariant::parse(s)
        .ok_or_else(|| CliError::Usage(format!("unknown variant `{s}` (expected ours, normal, mix or no_reflection)")))
}

fn parse_policy(s: &str) -> Result<(String, PathBuf), CliError> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(CliError::Usage(format!("--policy expects name=checkpoint, got `{s}`"))),
    }
}

/// Executes a parsed command, printing results on stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Train { config, stage, variant, seed, resume, out, iterations, log_every } => {
            let config = AppConfig::load(&config)?;
            configure_workers(&config);
            let opts = train::TrainOptions {
                config,
                stage: match stage {
                    StageArg::One => Stage::One,
                    StageArg::Two => Stage::Two,
                },
                variant: variant.as_deref().map(parse_variant).transpose()?,
                seed,
                resume,
                out,
                iterations,
                log_every,
            };
            let s = train::cmd_train(opts)?;
            println!("trained {} for {} iterations; outputs in {}", s.variant.name(), s.iterations, s.out.display());
        }
        Cmd::TrainDisc { config, dataset, policy, out, seed } => {
            let config = AppConfig::load(&config)?;
            let r = train::cmd_train_discriminator(&config, &dataset, policy.as_deref(), &out, seed)?;
            println!(
                "discriminator held-out settled accuracy {:.2}% over {} ticks; outputs in {}",
                100.0 * r.heldout.settled_accuracy,
                r.heldout.settled_ticks,
                out.display()
            );
        }
        Cmd::Eval { config, experiment, policies, discriminator, episodes, switching, seed, out } => {
            let config = AppConfig::load(&config)?;
            let opts = eval::EvalOptions {
                config,
                experiment: match experiment {
                    ExperimentArg::Survival => eval::Experiment::Survival,
                    ExperimentArg::Tracking => eval::Experiment::Tracking,
                    ExperimentArg::Contact => eval::Experiment::Contact,
                    ExperimentArg::Distribution => eval::Experiment::Distribution,
                },
                policies: policies.iter().map(|p| parse_policy(p)).collect::<Result<_, _>>()?,
                discriminator,
                episodes,
                switching: switching.map(|s| match s {
                    SwitchingArg::Oracle => SelectionMode::Oracle,
                    SwitchingArg::Disc => SelectionMode::Discriminator,
                }),
                seed,
                out,
            };
            print!("{}", eval::cmd_eval(opts)?);
        }
        Cmd::Replay { file, speed, out } => {
            let n = match out {
                Some(path) => replay::cmd_replay(&file, speed, std::io::BufWriter::new(std::fs::File::create(path)?))?,
                None => replay::cmd_replay(&file, speed, std::io::stdout().lock())?,
            };
            eprintln!("replayed {n} frames");
        }
        Cmd::Serve { config, checkpoint, discriminator, oracle, port, bind, tick_rate, max_ticks, record, seed } => {
            let config = AppConfig::load(&config)?;
            let policy = eval::load_policy("served", &checkpoint)?.params;
            let disc = match (oracle, discriminator) {
                (true, _) => None,
                (false, Some(p)) => Some(eval::load_discriminator(&p)?),
                (false, None) if serve::Session::requires_discriminator(&policy) => {
                    return Err(CliError::Usage(
                        "a multi-head policy needs --discriminator (or --oracle for true-status switching)".into(),
                    ))
                }
                (false, None) => None,
            };
            let session = serve::Session::new(&config.env, policy, disc, HeadSelector::DEFAULT_HYSTERESIS, seed)?;
            let opts = serve::ServeOptions { bind, port, tick_rate, max_ticks, record };
            let stats = serve::cmd_serve(session, opts, |addr| eprintln!("serving on ws://{addr}"))?;
            println!("served {} ticks, mean interval {:.2} ms", stats.ticks, 1e3 * stats.mean_interval);
        }
    }
    Ok(())
}

fn configure_workers(config: &AppConfig) {
    if config.workers > 1 {
        // Fails only if the pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global();
    }
}
