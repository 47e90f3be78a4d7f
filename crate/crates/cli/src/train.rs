use std::path::{Path, PathBuf};

use quadfault::discriminator::{train_discriminator, TrainReport};
use quadfault::env::Stage;
use quadfault::eval::{collect_switching_dataset, SwitchingDatasetConfig};
use quadfault::nets::Checkpoint;
use quadfault::policy::Layout;
use quadfault::ppo::{read_dataset, MetricsRow, TrainVariant, Trainer};

use crate::config::AppConfig;
use crate::error::CliError;
use crate::eval::load_policy;

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub config: AppConfig,
    pub stage: Stage,
    pub variant: Option<TrainVariant>,
    pub seed: Option<u64>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Overrides the stage's iteration budget.
    pub iterations: Option<usize>,
    /// Print a progress line every this many iterations; 0 is silent.
    pub log_every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub variant: TrainVariant,
    pub iterations: usize,
    pub last: Option<MetricsRow>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Checkpoint(e.to_string()))
}

pub fn cmd_train(opts: TrainOptions) -> Result<TrainSummary, CliError> {
    let mut cfg = opts.config.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let tc = cfg.train_config();
    let out = opts.out.clone().unwrap_or_else(|| cfg.output.clone());

    let mut trainer = match (&opts.resume, opts.stage) {
        (None, Stage::One) => Trainer::new(tc.clone(), opts.variant.unwrap_or(TrainVariant::Ours))?,
        (None, Stage::Two) => {
            return Err(CliError::Usage("stage 2 continues a stage-1 run: pass --resume <checkpoint>".into()))
        }
        (Some(path), stage) => {
            let ckpt = load_checkpoint(path)?;
            let t = Trainer::resume(tc.clone(), &ckpt, stage)?;
            if let Some(v) = opts.variant {
                if v != t.variant {
                    return Err(CliError::Mismatch(format!(
                        "{} was trained as {}, not {}",
                        path.display(),
                        t.variant.name(),
                        v.name()
                    )));
                }
            }
            t
        }
    };
    let budget = match opts.stage {
        Stage::One => tc.ppo.iterations.saturating_sub(trainer.iteration),
        Stage::Two => tc.stage2_iterations,
    };
    let iterations = opts.iterations.unwrap_or(budget);
    let started = std::time::Instant::now();
    let log_every = opts.log_every;
    let rows = trainer.run(iterations, Some(&out), |row| {
        if log_every > 0 && (row.iteration + 1) % log_every == 0 {
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
            eprintln!(
                "iter {:>5}  {:>6.0}s  return h/l/w {}/{}/{}  survival {}  kl {:.4}",
                row.iteration + 1,
                started.elapsed().as_secs_f64(),
                fmt(row.returns[0]),
                fmt(row.returns[1]),
                fmt(row.returns[2]),
                fmt(row.survival.map(|s| 100.0 * s)),
                row.approx_kl
            );
        }
    })?;
    Ok(TrainSummary { out, variant: trainer.variant, iterations, last: rows.last().cloned() })
}

/// Fits the discriminator on a logged stage-2 dataset and writes
/// `discriminator.qfck` and `discriminator_report.json` to `out`.
/// Fits the discriminator on a stage-two dataset. With `policy`, closed-loop
/// episodes of that policy under delayed oracle switching are added first.
pub fn cmd_train_discriminator(
    config: &AppConfig,
    dataset: &Path,
    policy: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<TrainReport, CliError> {
    let mut episodes = read_dataset(dataset).map_err(|e| match e {
        quadfault::ppo::PpoError::Config(m) => CliError::Parse(m),
        other => other.into(),
    })?;
    let mut cfg = config.discriminator.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(path) = policy {
        let params = load_policy("policy", path)?.params;
        if params.layout != Layout::Hierarchical {
            return Err(CliError::Mismatch(format!("{} has a single head; nothing to switch", path.display())));
        }
        let collection =
            SwitchingDatasetConfig { seed: config.disc_collection.seed ^ cfg.seed, ..config.disc_collection.clone() };
        let first_id = episodes.iter().map(|e| e.episode + 1).max().unwrap_or(0);
        episodes.extend(collect_switching_dataset(&config.env, &params, &collection, first_id)?);
    }
    let (params, report) = train_discriminator(&episodes, &cfg)?;
    std::fs::create_dir_all(out)?;
    params.to_checkpoint().save(&out.join("discriminator.qfck"))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(out.join("discriminator_report.json"), json)?;
    Ok(report)
}
