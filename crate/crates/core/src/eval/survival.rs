use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean_std, median, run_episodes, Controller, EnvConfig, EpisodeSpec, EvalError, ExperimentConfig};

/// Survival of one policy in one (protocol, seed) group, or aggregated over
/// seeds when `seed` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub policy: String,
    pub protocol: String,
    pub seed: Option<u64>,
    pub episodes: usize,
    pub survived: usize,
    pub fraction: f64,
    /// Standard deviation of the per-seed fractions (aggregate rows only).
    pub seed_std: Option<f64>,
    /// Median ticks from a status change to the matching head.
    pub median_switch_latency: Option<f64>,
    /// Status changes never matched before the next one or the episode end.
    pub missed_switches: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalReport {
    pub groups: Vec<SurvivalRow>,
    pub aggregate: Vec<SurvivalRow>,
    pub envs_per_group: usize,
    pub switching: String,
}

impl SurvivalReport {
    pub fn fraction(&self, policy: &str, protocol: &str) -> Option<f64> {
        self.aggregate.iter().find(|r| r.policy == policy && r.protocol == protocol).map(|r| r.fraction)
    }

    pub fn total_episodes(&self) -> usize {
        self.groups.iter().map(|r| r.episodes).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "policy",
            "protocol",
            "seed",
            "episodes",
            "survived",
            "fraction",
            "seed_std",
            "median_switch_latency",
            "missed_switches",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        for r in self.groups.iter().chain(&self.aggregate) {
            w.write_record([
                r.policy.clone(),
                r.protocol.clone(),
                r.seed.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
                r.episodes.to_string(),
                r.survived.to_string(),
                format!("{}", r.fraction),
                opt(r.seed_std),
                opt(r.median_switch_latency),
                r.missed_switches.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = Vec::new();
        let n = self.envs_per_group;
        writeln!(s, "survival ({} switching, {n} episodes per group)", self.switching).ok();
        if n < 100 {
            writeln!(s, "note: reduced run, {n} episodes per group instead of 100").ok();
        }
        for r in &self.aggregate {
            writeln!(
                s,
                "  {:<14} {:<8} {:>6.1}% ({}/{}) ±{:.1}",
                r.policy,
                r.protocol,
                100.0 * r.fraction,
                r.survived,
                r.episodes,
                100.0 * r.seed_std.unwrap_or(0.0)
            )
            .ok();
        }
        String::from_utf8(s).expect("ascii")
    }
}

/// Runs every policy on the same episodes, so the comparison is paired:
/// episode `k` of a group has the same randomization, command and fault
/// schedule for every policy.
pub fn run_survival(
    env: &EnvConfig,
    policies: &[(String, Controller)],
    cfg: &ExperimentConfig,
) -> Result<SurvivalReport, EvalError> {
    cfg.validate(env)?;
    if policies.is_empty() {
        return Err(EvalError::Config("no policies to evaluate".into()));
    }
    let mut report = SurvivalReport {
        envs_per_group: cfg.envs_per_group,
        switching: format!("{:?}", cfg.switching).to_lowercase(),
        ..Default::default()
    };
    for (name, controller) in policies {
        let controller = Controller { switching: cfg.switching, hysteresis: cfg.hysteresis, ..*controller };
        for (pi, &protocol) in cfg.protocols.iter().enumerate() {
            let mut per_seed = Vec::new();
            let mut latencies_all = Vec::new();
            let mut missed_all = 0;
            for &seed in &cfg.seeds {
                let specs: Vec<EpisodeSpec> = (0..cfg.envs_per_group)
                    .map(|k| EpisodeSpec {
                        seed,
                        stream: ((pi as u64) << 32) | k as u64,
                        protocol,
                        command: cfg.command,
                    })
                    .collect();
                let outcomes = run_episodes(env, &controller, &specs, cfg.batch, |_| {})?;
                let survived = outcomes.iter().filter(|o| o.survived()).count();
                let lat: Vec<Option<usize>> = outcomes.iter().flat_map(|o| o.switch_latencies()).collect();
                let found: Vec<f64> = lat.iter().flatten().map(|&l| l as f64).collect();
                let missed = lat.iter().filter(|l| l.is_none()).count();
                report.groups.push(SurvivalRow {
                    policy: name.clone(),
                    protocol: protocol.name(),
                    seed: Some(seed),
                    episodes: outcomes.len(),
                    survived,
                    fraction: survived as f64 / outcomes.len() as f64,
                    seed_std: None,
                    median_switch_latency: median(&found),
                    missed_switches: missed,
                });
                per_seed.push(survived as f64 / outcomes.len() as f64);
                latencies_all.extend(found);
                missed_all += missed;
            }
            let rows = &report.groups[report.groups.len() - cfg.seeds.len()..];
            let episodes: usize = rows.iter().map(|r| r.episodes).sum();
            let survived: usize = rows.iter().map(|r| r.survived).sum();
            report.aggregate.push(SurvivalRow {
                policy: name.clone(),
                protocol: protocol.name(),
                seed: None,
                episodes,
                survived,
                fraction: survived as f64 / episodes as f64,
                seed_std: Some(mean_std(&per_seed).1),
                median_switch_latency: median(&latencies_all),
                missed_switches: missed_all,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CommandDist, Protocol};
    use crate::policy::{HierarchicalParams, Layout, PolicyArch, SelectionMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy() -> HierarchicalParams<f32> {
        let arch = PolicyArch { front_hidden: vec![8], latent: 4, head_hidden: vec![4], ..Default::default() };
        HierarchicalParams::new(arch, Layout::Hierarchical, &mut ChaCha8Rng::seed_from_u64(2))
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            envs_per_group: 3,
            seeds: vec![0, 1],
            switching: SelectionMode::Oracle,
            command: CommandDist::MIDDLE,
            ..Default::default()
        }
    }

    #[test]
    fn counts_sum_to_group_totals() {
        let p = policy();
        let env = EnvConfig { episode_steps: 40, ..Default::default() };
        let r = run_survival(&env, &[("ours".into(), Controller::oracle(&p))], &small_cfg()).unwrap();
        assert_eq!(r.groups.len(), 8);
        assert_eq!(r.total_episodes(), 24);
        for agg in &r.aggregate {
            let parts: Vec<&SurvivalRow> =
                r.groups.iter().filter(|g| g.protocol == agg.protocol && g.policy == agg.policy).collect();
            assert_eq!(agg.episodes, parts.iter().map(|g| g.episodes).sum::<usize>());
            assert_eq!(agg.survived, parts.iter().map(|g| g.survived).sum::<usize>());
            assert!((0.0..=1.0).contains(&agg.fraction));
        }
    }

    #[test]
    fn a_policy_that_falls_immediately_never_survives() {
        // Huge output bias drives every joint to its clip, folding the legs.
        let mut p = policy();
        for head in &mut p.heads {
            let last = head.layers.last_mut().unwrap();
            for (k, b) in last.bias.iter_mut().enumerate() {
                *b = if k % 2 == 0 { 1e3 } else { -1e3 };
            }
        }
        let env = EnvConfig::default();
        let cfg = ExperimentConfig { protocols: vec![Protocol::HealthOnly], ..small_cfg() };
        let r = run_survival(&env, &[("fall".into(), Controller::oracle(&p))], &cfg).unwrap();
        assert_eq!(r.fraction("fall", "health"), Some(0.0));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let p = policy();
        let env = EnvConfig { episode_steps: 30, ..Default::default() };
        let a = run_survival(&env, &[("ours".into(), Controller::oracle(&p))], &small_cfg()).unwrap();
        let b = run_survival(&env, &[("ours".into(), Controller::oracle(&p))], &small_cfg()).unwrap();
        assert_eq!(a, b);
    }
}
