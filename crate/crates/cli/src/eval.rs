use std::path::{Path, PathBuf};

use quadfault::discriminator::DiscriminatorParams;
use quadfault::eval::{export_trajectories, run_contact_time, run_survival, run_tracking, Controller};
use quadfault::policy::{HierarchicalParams, SelectionMode};
use quadfault::ppo::TrainVariant;

use crate::config::AppConfig;
use crate::error::CliError;
use crate::train::load_checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Survival,
    Tracking,
    Contact,
    Distribution,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Survival => "survival",
            Experiment::Tracking => "tracking",
            Experiment::Contact => "contact",
            Experiment::Distribution => "distribution",
        }
    }

    fn comparative(self) -> bool {
        matches!(self, Experiment::Survival | Experiment::Contact)
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub config: AppConfig,
    pub experiment: Experiment,
    /// `(name, checkpoint)` pairs; names that are variant names are checked
    /// against the checkpoint.
    pub policies: Vec<(String, PathBuf)>,
    pub discriminator: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub switching: Option<SelectionMode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub struct LoadedPolicy {
    pub name: String,
    pub params: HierarchicalParams<f32>,
}

/// Loads a policy checkpoint and, when `name` is a variant name, checks that
/// the checkpoint was trained as that variant.
pub fn load_policy(name: &str, path: &Path) -> Result<LoadedPolicy, CliError> {
    let ckpt = load_checkpoint(path)?;
    let params = HierarchicalParams::<f32>::from_checkpoint(&ckpt)?;
    if let Some(expected) = TrainVariant::parse(name) {
        if let Some(v) = ckpt.metadata.get("variant") {
            let actual: TrainVariant = serde_json::from_value(v.clone())
                .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
            if actual != expected {
                return Err(CliError::Mismatch(format!(
                    "{} holds a {} policy but was passed as {}",
                    path.display(),
                    actual.name(),
                    expected.name()
                )));
            }
        }
        if params.layout != expected.layout() {
            return Err(CliError::Mismatch(format!("{} has the wrong head layout for {name}", path.display())));
        }
    }
    Ok(LoadedPolicy { name: name.to_string(), params })
}

pub fn load_discriminator(path: &Path) -> Result<DiscriminatorParams<f32>, CliError> {
    Ok(DiscriminatorParams::<f32>::from_checkpoint(&load_checkpoint(path)?)?)
}

/// Runs one experiment and writes `<experiment>.csv`, a JSON report and a
/// text summary to the output directory. Returns the summary.
pub fn cmd_eval(opts: EvalOptions) -> Result<String, CliError> {
    let cfg = &opts.config;
    if opts.policies.is_empty() {
        return Err(CliError::Usage("pass at least one --policy name=checkpoint".into()));
    }
    if opts.experiment.comparative() {
        let has_ours = opts.policies.iter().any(|(n, _)| n == "ours");
        if !has_ours || opts.policies.len() < 2 {
            return Err(CliError::MissingBaseline(format!(
                "the {} experiment compares `ours` against at least one baseline checkpoint",
                opts.experiment.name()
            )));
        }
    }
    let policies = opts.policies.iter().map(|(n, p)| load_policy(n, p)).collect::<Result<Vec<_>, _>>()?;
    let disc = opts.discriminator.as_deref().map(load_discriminator).transpose()?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.output.join("eval"));
    std::fs::create_dir_all(&out)?;
    let controllers: Vec<(String, Controller)> = policies
        .iter()
        .map(|p| {
            let c = Controller {
                policy: &p.params,
                discriminator: disc.as_ref(),
                switching: SelectionMode::Oracle,
                hysteresis: 1,
            };
            (p.name.clone(), c)
        })
        .collect();
    let env = &cfg.env;
    let name = opts.experiment.name();
    let write_json = |value: &dyn erased::Json| -> Result<(), CliError> {
        std::fs::write(out.join(format!("{name}.json")), value.json()?)?;
        Ok(())
    };

    let summary = match opts.experiment {
        Experiment::Survival => {
            let mut c = cfg.eval.survival.clone();
            if let Some(n) = opts.episodes {
                c.envs_per_group = n;
            }
            if let Some(s) = opts.switching {
                c.switching = s;
            }
            if let Some(seed) = opts.seed {
                c.seeds = (0..c.seeds.len().max(1) as u64).map(|k| seed + k).collect();
            }
            let r = run_survival(env, &controllers, &c)?;
            r.write_csv(&out.join("survival.csv"))?;
            write_json(&r)?;
            r.summary()
        }
        Experiment::Tracking => {
            let mut c = cfg.eval.tracking.clone();
            if let Some(n) = opts.episodes {
                c.envs = n;
            }
            if let Some(s) = opts.switching {
                c.switching = s;
            }
            if let Some(seed) = opts.seed {
                c.seed = seed;
            }
            let r = run_tracking(env, &controllers[0].1, &c)?;
            r.write_csv(&out.join("tracking.csv"), &out.join("tracking_series.csv"))?;
            write_json(&r)?;
            r.summary()
        }
        Experiment::Contact => {
            let mut c = cfg.eval.contact.clone();
            if let Some(n) = opts.episodes {
                c.envs = n;
            }
            if let Some(s) = opts.switching {
                c.switching = s;
            }
            if let Some(seed) = opts.seed {
                c.seed = seed;
            }
            let r = run_contact_time(env, &controllers, &c)?;
            r.write_csv(&out.join("contact.csv"))?;
            write_json(&r)?;
            r.summary()
        }
        Experiment::Distribution => {
            let mut c = cfg.eval.distribution.clone();
            if let Some(n) = opts.episodes {
                c.agents = n;
            }
            if let Some(s) = opts.switching {
                c.switching = s;
            }
            if let Some(seed) = opts.seed {
                c.seed = seed;
            }
            let mut lines = Vec::new();
            for (pname, controller) in &controllers {
                let rows = export_trajectories(env, controller, &c, Some(&out), &format!("trajectories_{pname}"))?;
                lines.push(format!("  {pname}: {} rows -> trajectories_{pname}.csv/.jsonl", rows.len()));
            }
            format!("trajectory export\n{}\n", lines.join("\n"))
        }
    };
    std::fs::write(out.join(format!("{name}_summary.txt")), &summary)?;
    Ok(summary)
}

mod erased {
    use crate::error::CliError;

    /// Lets the report types share one JSON writer.
    pub trait Json {
        fn json(&self) -> Result<String, CliError>;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> Result<String, CliError> {
            serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}
