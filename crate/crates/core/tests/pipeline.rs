//! End-to-end run of the library on a tiny budget: stage one, stage two,
//! discriminator fitting and every experiment, plus public-API properties.

use proptest::prelude::*;
use quadfault::discriminator::{evaluate, train_discriminator, DiscTrainConfig, DiscriminatorParams};
use quadfault::env::{EnvConfig, Partition};
use quadfault::eval::{
    export_trajectories, run_contact_time, run_survival, run_tracking, Controller, DistributionConfig,
    ExperimentConfig, TrackingConfig,
};
use quadfault::nets::{Checkpoint, Params};
use quadfault::policy::{HeadSelector, HierarchicalParams, Layout, PolicyArch, SelectionMode};
use quadfault::ppo::{read_dataset, train_stage1, train_stage2, write_dataset, PpoConfig, TrainConfig, TrainVariant};
use quadfault::sim::LegStatus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_arch() -> PolicyArch {
    PolicyArch {
        front_hidden: vec![16],
        latent: 8,
        head_hidden: vec![8],
        critic_front_hidden: vec![16],
        critic_latent: 8,
        critic_head_hidden: vec![8],
        ..Default::default()
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        arch: tiny_arch(),
        ppo: PpoConfig { iterations: 4, horizon: 16, epochs: 2, minibatches: 2, ..Default::default() },
        envs: 16,
        seed: 5,
        stage2_iterations: 40,
        checkpoint_every: 0,
        ..Default::default()
    }
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let stage1 = train_stage1(&cfg, TrainVariant::Ours, Some(dir.path())).unwrap();
    assert_eq!(stage1.metrics.len(), 4);
    assert!(dir.path().join("stage1.qfck").exists());

    let (stage2, dataset) = train_stage2(&cfg, &stage1.checkpoint, Some(dir.path())).unwrap();
    assert_eq!(stage2.metrics.first().unwrap().iteration, 4);
    assert!(!dataset.is_empty());
    for ep in &dataset {
        assert_eq!(ep.positions.len(), ep.labels.len());
        assert_eq!(ep.velocities.len(), ep.labels.len());
    }
    let path = dir.path().join("dataset.jsonl");
    write_dataset(&path, &dataset).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), dataset);

    let disc_cfg = DiscTrainConfig { epochs: 2, require_all_classes: false, ..Default::default() };
    let (disc, report) = train_discriminator(&dataset, &disc_cfg).unwrap();
    assert!((0.0..=1.0).contains(&report.heldout.settled_accuracy));
    let again = evaluate(&disc, &dataset, disc_cfg.settle_ticks).unwrap();
    assert!((0.0..=1.0).contains(&again.settled_accuracy));
    let disc = DiscriminatorParams::<f32>::from_checkpoint(&disc.to_checkpoint()).unwrap();

    let env = EnvConfig::default();
    let ours = Controller {
        policy: &stage2.params,
        discriminator: Some(&disc),
        switching: SelectionMode::Discriminator,
        hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
    };
    let normal = train_stage1(&cfg, TrainVariant::Normal, None).unwrap().params;
    assert_eq!(normal.layout, Layout::Single);
    let policies = [("ours".to_string(), ours), ("normal".to_string(), Controller::oracle(&normal))];

    let survival =
        run_survival(&env, &policies, &ExperimentConfig { envs_per_group: 3, seeds: vec![0, 1], ..Default::default() })
            .unwrap();
    assert_eq!(survival.total_episodes(), 2 * 4 * 2 * 3);
    for protocol in ["health", "limit", "weak", "mixed"] {
        let f = survival.fraction("ours", protocol).unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    let tracking = run_tracking(&env, &ours, &TrackingConfig { envs: 2, ..Default::default() }).unwrap();
    assert_eq!(tracking.rows.len(), 2 * 3);

    let contact =
        run_contact_time(&env, &policies, &quadfault::eval::ContactConfig { envs: 2, ..Default::default() }).unwrap();
    for row in &contact.rows {
        assert!(row.contact_time >= 0.0 && row.contact_time <= row.horizon);
    }

    let rows = export_trajectories(
        &env,
        &Controller::oracle(&stage2.params),
        &DistributionConfig { agents: 1, ticks: 5, ..Default::default() },
        Some(dir.path()),
        "distribution",
    )
    .unwrap();
    assert_eq!(rows.len(), 3 * 5);
    assert!(dir.path().join("distribution.csv").exists());
}

#[test]
fn every_variant_trains_and_resumes() {
    let cfg = TrainConfig {
        ppo: PpoConfig { iterations: 2, horizon: 4, ..tiny_config().ppo },
        stage2_iterations: 1,
        ..tiny_config()
    };
    for variant in TrainVariant::ALL {
        let s1 = train_stage1(&cfg, variant, None).unwrap();
        assert_eq!(s1.params.layout, variant.layout());
        match train_stage2(&cfg, &s1.checkpoint, None) {
            Ok(_) => assert_ne!(variant, TrainVariant::Normal, "normal cannot enter stage two"),
            Err(_) => assert_eq!(variant, TrainVariant::Normal),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn policy_checkpoints_round_trip_bitwise(
        seed in any::<u64>(),
        front in 1usize..12,
        latent in 1usize..6,
        head in 1usize..6,
        single in any::<bool>(),
    ) {
        let arch = PolicyArch { front_hidden: vec![front], latent, head_hidden: vec![head], ..tiny_arch() };
        let layout = if single { Layout::Single } else { Layout::Hierarchical };
        let p = HierarchicalParams::<f32>::new(arch, layout, &mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = {
            let mut buf = Vec::new();
            p.to_checkpoint(serde_json::json!({})).write_to(&mut buf).unwrap();
            buf
        };
        let back = HierarchicalParams::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back.flatten(), p.flatten());
        prop_assert_eq!(back.layout, layout);
    }

    #[test]
    fn fault_envs_pair_with_distinct_group_health_envs(n in 1usize..64) {
        let p = Partition::two_one_one(n);
        prop_assert_eq!(p.total(), 4 * n);
        for env in 0..p.total() {
            match p.group_of(env) {
                LegStatus::Health => prop_assert_eq!(p.paired_health(env), None),
                _ => {
                    let h = p.paired_health(env).unwrap();
                    prop_assert!(h < p.health);
                    prop_assert_eq!(p.group_of(h), LegStatus::Health);
                }
            }
        }
        // Within one fault group every partner is distinct.
        let partners: std::collections::BTreeSet<usize> = (p.health..p.health + p.weak).map(|e| p.paired_health(e).unwrap()).collect();
        prop_assert_eq!(partners.len(), p.weak);
    }
}
