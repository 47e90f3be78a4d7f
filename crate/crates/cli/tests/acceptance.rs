//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The training-dependent criteria read the checkpoints under `artifacts/`
//! produced by `scripts/train_all.sh`; a missing artifact is a failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use quadfault::discriminator::DiscriminatorParams;
use quadfault::env::{
    reflect_init, reset_env, step_env, CurriculumState, DomainRandomization, EnvConfig, Partition, Stage, VecEnv,
    VecEnvConfig, OBS_DIM,
};
use quadfault::eval::{
    run_contact_time, run_episodes, run_survival, run_tracking, CommandDist, ContactConfig, Controller, EpisodeSpec,
    ExperimentConfig, Protocol, TrackingConfig,
};
use quadfault::nets::gradcheck::max_relative_error;
use quadfault::nets::{AdamConfig, DenseStack, GaussianHead, GruCell, Mat, OptimizerState, Params};
use quadfault::policy::{HeadSelector, HierarchicalParams, Layout, PolicyArch, SelectionMode, SelectorInput, TaskId};
use quadfault::ppo::{collect_rollouts, compute_gae, ppo_update, PpoConfig};
use quadfault::sim::{
    contact_forces, forward_kinematics, integrate_substep, pd_torque, ContactParams, ContactState, FaultState, Leg,
    LegStatus, RobotModel, RobotState, Simulator, JOINTS,
};
use quadfault_cli::eval::{load_discriminator, load_policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
/// Evaluation episodes are drawn from this seed for every policy, so all
/// comparisons are paired.
const EVAL_SEED: u64 = 1000;
const EPISODES: usize = 100;
const SETTLE_TICKS: usize = 10;

type Verdict = Result<(bool, String), String>;

fn artifacts() -> PathBuf {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../artifacts");
    path.canonicalize().unwrap_or(path)
}

fn policy(variant: &str, seed: u64, stage: u8) -> Result<HierarchicalParams<f32>, String> {
    let path = artifacts().join(format!("{variant}/seed{seed}/stage{stage}.qfck"));
    load_policy(variant, &path).map(|p| p.params).map_err(|e| e.to_string())
}

fn discriminator(seed: u64) -> Result<DiscriminatorParams<f32>, String> {
    load_discriminator(&artifacts().join(format!("discriminator/seed{seed}/discriminator.qfck")))
        .map_err(|e| e.to_string())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pct(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{:.0}", 100.0 * x)).collect::<Vec<_>>().join("/")
}

// ---------------------------------------------------------------------------
// Invariant suite

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn gradcheck_dense() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sizes in [vec![5, 7, 3], vec![30, 16, 8, 8]] {
        let mut net = DenseStack::<f64>::orthogonal(&sizes, 1.3, 0.7, &mut rng);
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let x = random_mat(4, sizes[0], &mut rng);
        let target = random_mat(4, *sizes.last().unwrap(), &mut rng);
        let loss = |n: &DenseStack<f64>, x: &Mat<f64>| -> f64 {
            let y = n.forward_only(x).unwrap();
            y.data.iter().zip(&target.data).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
        };
        let cache = net.forward(&x).map_err(|e| e.to_string())?;
        let mut dy = cache.output().clone();
        dy.data.iter_mut().zip(&target.data).for_each(|(d, t)| *d -= t);
        let mut grads = DenseStack::zeros(&sizes);
        let dx = net.backward(&cache, &dy, &mut grads).map_err(|e| e.to_string())?;
        let e_p = max_relative_error(
            |p| {
                let mut n = net.clone();
                n.unflatten(p).unwrap();
                loss(&n, &x)
            },
            &net.flatten(),
            &grads.flatten(),
            1e-5,
        );
        let e_x =
            max_relative_error(|v| loss(&net, &Mat::from_vec(x.rows, x.cols, v.to_vec())), &x.data, &dx.data, 1e-5);
        check(e_p < 1e-4 && e_x < 1e-4, || format!("dense {sizes:?}: rel err {e_p:.2e}/{e_x:.2e}"))?;
    }
    Ok(())
}

fn gradcheck_gru() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (inputs, hidden, batch, steps) = (5, 6, 3, 8);
    let mut cell = GruCell::<f64>::orthogonal(inputs, hidden, &mut rng);
    cell.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let xs: Vec<Mat<f64>> = (0..steps).map(|_| random_mat(batch, inputs, &mut rng)).collect();
    let h0 = random_mat(batch, hidden, &mut rng);
    let w: Vec<Mat<f64>> = (0..steps).map(|_| random_mat(batch, hidden, &mut rng)).collect();
    let loss = |c: &GruCell<f64>, h0: &Mat<f64>| -> f64 {
        let (hs, _) = c.forward_sequence(&xs, h0).unwrap();
        hs.iter().zip(&w).map(|(h, w)| h.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let (_, cache) = cell.forward_sequence(&xs, &h0).map_err(|e| e.to_string())?;
    let mut grads = GruCell::zeros(inputs, hidden);
    let dh0 = cell.backward_sequence(&cache, &w, &mut grads).map_err(|e| e.to_string())?;
    let e_p = max_relative_error(
        |p| {
            let mut c = cell.clone();
            c.unflatten(p).unwrap();
            loss(&c, &h0)
        },
        &cell.flatten(),
        &grads.flatten(),
        1e-5,
    );
    let e_h = max_relative_error(|p| loss(&cell, &Mat::from_vec(batch, hidden, p.to_vec())), &h0.data, &dh0.data, 1e-5);
    check(e_p < 1e-4 && e_h < 1e-4, || format!("gru: rel err {e_p:.2e}/{e_h:.2e}"))
}

fn gradcheck_gaussian() -> Result<(), String> {
    let mean = [0.2, -0.7, 1.3, 0.0];
    let action = [0.5, -0.1, 0.8, -0.3];
    let head = GaussianHead::<f64> { log_std: vec![-0.4, 0.1, -1.1, -0.7] };
    let (dm, ds) = head.log_prob_grad(&mean, &action);
    let e_m = max_relative_error(|m| head.log_prob(m, &action).unwrap(), &mean, &dm, 1e-5);
    let e_s = max_relative_error(
        |ls| GaussianHead { log_std: ls.to_vec() }.log_prob(&mean, &action).unwrap(),
        &head.log_std,
        &ds,
        1e-5,
    );
    let e_h = max_relative_error(
        |ls| GaussianHead { log_std: ls.to_vec() }.entropy(),
        &head.log_std,
        &head.entropy_grad(),
        1e-5,
    );
    check(e_m < 1e-4 && e_s < 1e-4 && e_h < 1e-4, || format!("gaussian: rel err {e_m:.2e}/{e_s:.2e}/{e_h:.2e}"))
}

fn substep(
    model: &RobotModel,
    s: &RobotState,
    torque: &[f64; JOINTS],
    fault: &FaultState,
    prior: &ContactState,
) -> (RobotState, ContactState) {
    let params = ContactParams::default();
    let c = contact_forces(model, &params, &forward_kinematics(model, s), prior, 1e-3);
    integrate_substep(model, &params, s, torque, &c, fault, 1e-3).unwrap()
}

fn quaternion_normalized() -> Result<(), String> {
    let model = RobotModel::default();
    let mut s = RobotState::at_rest(1.5, model.default_pose);
    s.trunk_angular_velocity.x = 4.0;
    s.trunk_angular_velocity.y = -9.0;
    s.trunk_angular_velocity.z = 13.0;
    let mut c = ContactState::default();
    let fault = FaultState::healthy();
    for k in 0..1000 {
        (s, c) = substep(&model, &s, &[0.0; JOINTS], &fault, &c);
        let n = s.trunk_orientation.norm();
        check((n - 1.0).abs() <= 1e-6, || format!("|q| = {n} after {k} substeps"))?;
    }
    Ok(())
}

fn fault_semantics() -> Result<(), String> {
    let sim =
        Simulator::new(RobotModel::default(), Default::default(), Default::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = RobotState::standing(&sim.model, sim.model.default_pose);
    let mut contacts = ContactState::default();
    let mut weak = FaultState::healthy();
    weak.set_status(Leg::RightFront, LegStatus::Weak, &state);
    for _ in 0..25 {
        let a: [f64; JOINTS] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let tau = pd_torque(&sim.gains, &sim.model, &a, &state, &weak).map_err(|e| e.to_string())?;
        let (next, report) = sim.simulate_control_tick(&state, &contacts, &a, &weak).map_err(|e| e.to_string())?;
        for j in Leg::RightFront.joints() {
            check(tau[j] == 0.0 && report.mean_torque[j] == 0.0, || {
                format!("weak joint {j} torque {}", report.mean_torque[j])
            })?;
        }
        (state, contacts) = (next, report.contacts);
    }
    let mut state = RobotState::standing(&sim.model, sim.model.default_pose);
    let mut contacts = ContactState::default();
    let mut limit = FaultState::healthy();
    limit.set_status(Leg::LeftHind, LegStatus::Limit, &state);
    for _ in 0..50 {
        let a: [f64; JOINTS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let (next, report) = sim.simulate_control_tick(&state, &contacts, &a, &limit).map_err(|e| e.to_string())?;
        for j in Leg::LeftHind.joints() {
            let lock = limit.lock_angle(j).ok_or("limit joint without lock angle")?;
            check(next.q[j] == lock, || format!("limit joint {j} drifted to {} from {lock}", next.q[j]))?;
        }
        (state, contacts) = (next, report.contacts);
    }
    Ok(())
}

fn friction_cone() -> Result<(), String> {
    let model = RobotModel::default();
    let mu = ContactParams::default().friction;
    let mut s = RobotState::standing(&model, model.default_pose);
    s.trunk_position.z -= 0.005;
    s.trunk_linear_velocity.x = 1.2;
    s.trunk_linear_velocity.y = -0.9;
    s.trunk_angular_velocity.z = 2.5;
    let mut c = ContactState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..400 {
        let tau: [f64; JOINTS] = std::array::from_fn(|_| rng.random_range(-2.5..2.5));
        (s, c) = substep(&model, &s, &tau, &FaultState::healthy(), &c);
        for f in &c.feet {
            let t = f.tangential_magnitude();
            check(f.normal_force >= 0.0 && t <= mu * f.normal_force + 1e-9, || {
                format!("|F_t| = {t} exceeds mu F_n = {}", mu * f.normal_force)
            })?;
        }
    }
    Ok(())
}

fn ballistic_trunk() -> Result<(), String> {
    let model = RobotModel::default();
    let mut s = RobotState::at_rest(2.0, model.default_pose);
    s.trunk_linear_velocity.x = -0.3;
    s.trunk_linear_velocity.z = 2.0;
    let mut c = ContactState::default();
    let v0 = s.trunk_linear_velocity;
    for _ in 0..200 {
        (s, c) = substep(&model, &s, &[0.0; JOINTS], &FaultState::healthy(), &c);
    }
    let vz = v0.z - 9.81 * 0.2;
    check(
        (s.trunk_linear_velocity.z - vz).abs() < 1e-9
            && s.trunk_linear_velocity.x == v0.x
            && (s.time - 0.2).abs() < 1e-12,
        || format!("after 0.2 s of flight v = {:?}, expected vz {vz}", s.trunk_linear_velocity),
    )
}

fn observation_length() -> Result<(), String> {
    let cfg = EnvConfig::default();
    let ep =
        reset_env(&cfg, &mut ChaCha8Rng::seed_from_u64(5), LegStatus::Health, Stage::One).map_err(|e| e.to_string())?;
    let obs = ep.observation(&cfg).map_err(|e| e.to_string())?;
    check(obs.as_slice().len() == 30 && OBS_DIM == 30, || format!("observation length {}", obs.as_slice().len()))
}

fn reward_non_negative() -> Result<(), String> {
    let mut venv = VecEnv::new(VecEnvConfig {
        partition: Partition::two_one_one(4),
        seed: 6,
        parallel: false,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for it in 0..300 {
        venv.set_curriculum(CurriculumState::new(it, 300));
        let actions: Vec<[f64; JOINTS]> =
            (0..venv.len()).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
        for r in venv.step(&actions).map_err(|e| e.to_string())? {
            check(r.reward >= 0.0, || format!("reward {} at tick {it}", r.reward))?;
        }
    }
    Ok(())
}

fn randomization_bounds() -> Result<(), String> {
    let dr = DomainRandomization::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let s = dr.sample(&mut rng);
        let ok = (0.6..=1.5).contains(&s.friction)
            && (-0.2..=1.0).contains(&s.added_mass)
            && (0.0..=1.0).contains(&s.command.vx)
            && (-0.5..=0.5).contains(&s.command.wz)
            && s.joint_offsets.iter().all(|o| (-0.1..=0.1).contains(o));
        check(ok, || format!("sample out of bounds: {s:?}"))?;
    }
    Ok(())
}

fn reflection_copies() -> Result<(), String> {
    let cfg = EnvConfig::default();
    let mut health =
        reset_env(&cfg, &mut ChaCha8Rng::seed_from_u64(8), LegStatus::Health, Stage::One).map_err(|e| e.to_string())?;
    for k in 0..21 {
        let a = [0.25 * (0.7 * k as f64).cos(); JOINTS];
        step_env(&cfg, &mut health, &a, &CurriculumState::complete()).map_err(|e| e.to_string())?;
    }
    let before = health.clone();
    let mut fault =
        reset_env(&cfg, &mut ChaCha8Rng::seed_from_u64(9), LegStatus::Weak, Stage::One).map_err(|e| e.to_string())?;
    reflect_init(&health, &mut fault).map_err(|e| e.to_string())?;
    check(
        health == before
            && fault.robot == health.robot
            && fault.contacts == health.contacts
            && fault.prev_action == health.prev_action
            && fault.status() == LegStatus::Weak,
        || "reflected state differs from its healthy partner".into(),
    )
}

fn gae_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..11).map(|_| rng.random_range(-5.0..5.0)).collect();
        let dones: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
        let (gamma, lambda) = (rng.random_range(0.5..1.0), rng.random_range(0.0..=1.0));
        let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda).map_err(|e| e.to_string())?;
        for t in 0..10 {
            // Sum of (γλ)^k δ_{t+k} up to and including the first done.
            let mut expect = 0.0;
            let mut w = 1.0;
            for k in t..10 {
                let next = if dones[k] { 0.0 } else { values[k + 1] };
                expect += w * (rewards[k] + gamma * next - values[k]);
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            check((adv[t] - expect).abs() < 1e-6 && (ret[t] - adv[t] - values[t]).abs() < 1e-9, || {
                format!("A_{t} = {} vs oracle {expect}", adv[t])
            })?;
        }
        // λ = 1 without dones: plain discounted sum with a bootstrap.
        let (adv, _) = compute_gae(&rewards, &values, &[false; 10], gamma, 1.0).map_err(|e| e.to_string())?;
        for t in 0..10 {
            let disc: f64 = (t..10).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            let expect = disc + gamma.powi((10 - t) as i32) * values[10] - values[t];
            check((adv[t] - expect).abs() < 1e-6, || format!("λ=1 A_{t} = {} vs {expect}", adv[t]))?;
        }
    }
    Ok(())
}

fn task_exclusive_routing() -> Result<(), String> {
    let arch = PolicyArch {
        front_hidden: vec![16],
        latent: 8,
        head_hidden: vec![8],
        critic_front_hidden: vec![16],
        critic_latent: 8,
        critic_head_hidden: vec![8],
        ..Default::default()
    };
    let cfg = PpoConfig { horizon: 6, epochs: 2, minibatches: 2, ..Default::default() };
    for task in TaskId::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = HierarchicalParams::<f64>::new(arch.clone(), Layout::Hierarchical, &mut rng);
        let mut venv = VecEnv::new(VecEnvConfig {
            partition: Partition::two_one_one(2),
            seed: 11,
            parallel: false,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let (mut buf, _) = collect_rollouts(&mut venv, &p, &cfg, &mut rng, |_| {}).map_err(|e| e.to_string())?;
        buf.retain_tasks(&[task]);
        let before = p.clone();
        let lengths: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
        let mut opt = OptimizerState::new(AdamConfig::default(), &lengths);
        ppo_update(&mut p, &mut opt, &buf, &cfg, &mut rng).map_err(|e| e.to_string())?;
        for h in 0..TaskId::ALL.len() {
            let same = p.heads[h] == before.heads[h]
                && p.noise[h] == before.noise[h]
                && p.critic_heads[h] == before.critic_heads[h];
            check(same == (h != task.index()), || format!("head {h} after an update on task {}", task.index()))?;
        }
        check(p.front != before.front, || "front network did not move".into())?;
    }
    Ok(())
}

fn vec_step_matches_sequential() -> Result<(), String> {
    for stage in [Stage::One, Stage::Two] {
        let cfg = VecEnvConfig {
            partition: Partition::two_one_one(3),
            stage,
            seed: 12,
            parallel: true,
            ..Default::default()
        };
        let mut par = VecEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
        let mut seq = VecEnv::new(VecEnvConfig { parallel: false, ..cfg.clone() }).map_err(|e| e.to_string())?;
        for k in 0..80 {
            let a: Vec<[f64; JOINTS]> = (0..par.len())
                .map(|i| std::array::from_fn(|j| 0.5 * ((i * 5 + j * 3 + k) as f64 * 0.31).sin()))
                .collect();
            // Independent oracle: each environment stepped alone.
            let mut singles = seq.envs().to_vec();
            let cur = seq.curriculum();
            let r1 = par.step(&a).map_err(|e| e.to_string())?;
            let r2 = seq.step(&a).map_err(|e| e.to_string())?;
            check(r1 == r2, || format!("parallel and sequential batches differ at tick {k}"))?;
            for (i, ep) in singles.iter_mut().enumerate() {
                let s = step_env(&cfg.env, ep, &a[i], &cur).map_err(|e| e.to_string())?;
                let same = s.reward == r2[i].reward
                    && s.termination == r2[i].info.termination
                    && (s.termination.is_done() || s.obs == r2[i].obs);
                check(same, || format!("env {i} differs from its single-env step at tick {k}"))?;
            }
        }
    }
    Ok(())
}

fn invariant_suite() -> Verdict {
    let checks: [(&str, fn() -> Result<(), String>); 14] = [
        ("dense gradients", gradcheck_dense),
        ("GRU gradients", gradcheck_gru),
        ("Gaussian head gradients", gradcheck_gaussian),
        ("quaternion normalization", quaternion_normalized),
        ("weak/limit fault semantics", fault_semantics),
        ("friction cone", friction_cone),
        ("ballistic trunk", ballistic_trunk),
        ("observation length", observation_length),
        ("reward non-negative", reward_non_negative),
        ("randomization bounds", randomization_bounds),
        ("reflection copy", reflection_copies),
        ("GAE oracle", gae_oracle),
        ("task-exclusive gradients", task_exclusive_routing),
        ("vec_step vs sequential", vec_step_matches_sequential),
    ];
    let failures: Vec<String> =
        checks.iter().filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}"))).collect();
    if failures.is_empty() {
        Ok((true, format!("{} checks", checks.len())))
    } else {
        Ok((false, failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// Training-dependent criteria

fn survival_cfg(protocols: Vec<Protocol>, command: CommandDist) -> ExperimentConfig {
    ExperimentConfig {
        envs_per_group: EPISODES,
        seeds: vec![EVAL_SEED],
        protocols,
        command,
        switching: SelectionMode::Oracle,
        ..Default::default()
    }
}

/// Means of consecutive non-overlapping 50-iteration windows of a metrics
/// column.
fn window_means(csv_path: &Path, column: &str) -> Result<Vec<f64>, String> {
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let idx = reader.headers().map_err(|e| e.to_string())?.iter().position(|h| h == column).ok_or("missing column")?;
    let values: Vec<f64> = reader
        .records()
        .map(|r| r.map_err(|e| e.to_string()).and_then(|r| r[idx].parse::<f64>().map_err(|e| e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok(values.chunks_exact(50).map(mean).collect())
}

fn stage_one_training() -> Verdict {
    let env = EnvConfig::default();
    let mut survival = Vec::new();
    let mut monotone = Vec::new();
    for seed in SEEDS {
        let p = policy("ours", seed, 1)?;
        let report = run_survival(
            &env,
            &[("ours".into(), Controller::oracle(&p))],
            &survival_cfg(vec![Protocol::HealthOnly], CommandDist::MIDDLE),
        )
        .map_err(|e| e.to_string())?;
        survival.push(report.fraction("ours", "health").ok_or("no health row")?);
        let windows = window_means(&artifacts().join(format!("ours/seed{seed}/metrics_stage1.csv")), "return_health")?;
        let drops: Vec<String> = windows
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0])
            .map(|(k, w)| format!("window {}: {:.1} -> {:.1}", k + 1, w[0], w[1]))
            .collect();
        monotone.push((windows.len(), drops));
    }
    let surv_ok = survival.iter().all(|&s| s >= 0.9);
    let mono_ok = monotone.iter().all(|(n, d)| *n >= 2 && d.is_empty());
    let mut detail = format!("health survival {}% (need >= 90 each)", pct(&survival));
    for (seed, (n, drops)) in SEEDS.iter().zip(&monotone) {
        if drops.is_empty() {
            detail += &format!("; seed {seed}: {n} return windows non-decreasing");
        } else {
            detail += &format!("; seed {seed}: {}", drops.join(", "));
        }
    }
    Ok((surv_ok && mono_ok, detail))
}

fn comparative_survival() -> Verdict {
    let env = EnvConfig::default();
    let cfg = survival_cfg(
        vec![Protocol::HealthOnly, Protocol::Fault(LegStatus::Limit), Protocol::Fault(LegStatus::Weak)],
        CommandDist::MIDDLE,
    );
    let mut table: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let (ours, normal, mix) = (policy("ours", seed, 2)?, policy("normal", seed, 1)?, policy("mix", seed, 2)?);
        let policies = [
            ("ours".to_string(), Controller::oracle(&ours)),
            ("normal".to_string(), Controller::oracle(&normal)),
            ("mix".to_string(), Controller::oracle(&mix)),
        ];
        let report = run_survival(&env, &policies, &cfg).map_err(|e| e.to_string())?;
        for name in ["ours", "normal", "mix"] {
            for protocol in ["health", "limit", "weak"] {
                table.entry((name, protocol)).or_default().push(report.fraction(name, protocol).ok_or("missing row")?);
            }
        }
    }
    let m = |name, protocol| mean(&table[&(name, protocol)]);
    let weak_gap = m("ours", "weak") - m("normal", "weak");
    let limit_gap = m("ours", "limit") - m("normal", "limit");
    let health = (m("ours", "health"), m("mix", "health"));
    let detail = format!(
        "weak: ours {} vs normal {} (gap {:+.1} pts, need >= 20); limit: ours {} vs normal {} (gap {:+.1} pts, need >= 10); \
         health: ours {} vs mix {}",
        pct(&table[&("ours", "weak")]),
        pct(&table[&("normal", "weak")]),
        100.0 * weak_gap,
        pct(&table[&("ours", "limit")]),
        pct(&table[&("normal", "limit")]),
        100.0 * limit_gap,
        pct(&table[&("ours", "health")]),
        pct(&table[&("mix", "health")]),
    );
    Ok((weak_gap >= 0.20 && limit_gap >= 0.10 && health.0 >= health.1, detail))
}

fn reflection_ablation() -> Verdict {
    let env = EnvConfig::default();
    let cfg =
        survival_cfg(vec![Protocol::Fault(LegStatus::Weak), Protocol::Fault(LegStatus::Limit)], CommandDist::HIGH);
    let mut table: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let (ours, noref) = (policy("ours", seed, 2)?, policy("no_reflection", seed, 2)?);
        let policies = [
            ("ours".to_string(), Controller::oracle(&ours)),
            ("no_reflection".to_string(), Controller::oracle(&noref)),
        ];
        let report = run_survival(&env, &policies, &cfg).map_err(|e| e.to_string())?;
        for name in ["ours", "no_reflection"] {
            for protocol in ["weak", "limit"] {
                table.entry((name, protocol)).or_default().push(report.fraction(name, protocol).ok_or("missing row")?);
            }
        }
    }
    let ok = ["weak", "limit"].iter().all(|&p| mean(&table[&("ours", p)]) >= mean(&table[&("no_reflection", p)]));
    let detail = ["weak", "limit"]
        .iter()
        .map(|&p| {
            format!(
                "{p}: ours {} (mean {:.1}) vs no_reflection {} (mean {:.1})",
                pct(&table[&("ours", p)]),
                100.0 * mean(&table[&("ours", p)]),
                pct(&table[&("no_reflection", p)]),
                100.0 * mean(&table[&("no_reflection", p)])
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, format!("vx 0.8 +- 0.1; {detail}")))
}

fn hysteresis_holds() -> bool {
    let health = SelectorInput::Probabilities([0.8, 0.1, 0.1]);
    let limit = SelectorInput::Probabilities([0.1, 0.8, 0.1]);
    let mut s = HeadSelector::new(HeadSelector::DEFAULT_HYSTERESIS);
    let mut ok = true;
    for input in [health, health, limit, health, health, health] {
        ok &= s.update(input).map(|h| h == TaskId::HEALTH).unwrap_or(false);
    }
    let streak: Vec<TaskId> = (0..5).map(|_| s.update(limit).unwrap()).collect();
    ok && streak[..4].iter().all(|&h| h == TaskId::HEALTH) && streak[4] == TaskId::LIMIT
}

fn discriminator_criterion() -> Verdict {
    let env = EnvConfig::default();
    let mut correct = 0usize;
    let mut settled = 0usize;
    let mut latencies = Vec::new();
    let mut missed = 0usize;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let (ours, disc) = (policy("ours", seed, 2)?, discriminator(seed)?);
        let controller = Controller {
            policy: &ours,
            discriminator: Some(&disc),
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
        };
        let specs: Vec<EpisodeSpec> = (0..EPISODES as u64)
            .map(|k| EpisodeSpec {
                seed: EVAL_SEED,
                stream: k,
                protocol: Protocol::Mixed,
                command: CommandDist::MIDDLE,
            })
            .collect();
        // Per episode: (label of the previous tick, tick of the last change).
        let mut last: Vec<Option<(LegStatus, usize)>> = vec![None; specs.len()];
        let (mut c, mut n) = (0usize, 0usize);
        let outcomes = run_episodes(&env, &controller, &specs, 256, |v| {
            let label = v.step.label;
            let since = match last[v.episode] {
                Some((prev, at)) if prev == label => at,
                Some(_) => v.tick,
                None => 0,
            };
            last[v.episode] = Some((label, since));
            if v.tick >= since + SETTLE_TICKS {
                if let Some(u) = v.probabilities {
                    let argmax = (0..3).fold(0, |b, i| if u[i] > u[b] { i } else { b });
                    n += 1;
                    c += usize::from(argmax == label.index());
                }
            }
        })
        .map_err(|e| e.to_string())?;
        for o in &outcomes {
            for l in o.switch_latencies() {
                match l {
                    Some(l) => latencies.push(l),
                    None => missed += 1,
                }
            }
        }
        per_seed.push(c as f64 / n.max(1) as f64);
        correct += c;
        settled += n;
    }
    latencies.sort_unstable();
    let accuracy = correct as f64 / settled.max(1) as f64;
    let median = latencies.get(latencies.len() / 2).copied();
    let hysteresis = hysteresis_holds();
    let ok = accuracy >= 0.9 && median.is_some_and(|m| m <= 10) && hysteresis;
    let detail = format!(
        "settled accuracy {:.1}% over {settled} ticks (seeds {}; need >= 90); median switch latency {} ticks over {} switches, \
         {missed} missed (need <= 10); single-tick blip {}",
        100.0 * accuracy,
        pct(&per_seed),
        median.map_or("n/a".into(), |m| m.to_string()),
        latencies.len(),
        if hysteresis { "ignored" } else { "switched" },
    );
    Ok((ok, detail))
}

fn tracking_criterion() -> Verdict {
    let env = EnvConfig::default();
    let cfg =
        TrackingConfig { commands: vec![[0.45, 0.0]], switching: SelectionMode::Discriminator, ..Default::default() };
    let mut err = Vec::new();
    let mut yaw: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let (ours, disc) = (policy("ours", seed, 2)?, discriminator(seed)?);
        let controller = Controller {
            policy: &ours,
            discriminator: Some(&disc),
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
        };
        let report = run_tracking(&env, &controller, &TrackingConfig { seed: EVAL_SEED, ..cfg.clone() })
            .map_err(|e| e.to_string())?;
        err.push(report.row(LegStatus::Health, 0.45).ok_or("no health row")?.vx_error);
        for status in [LegStatus::Health, LegStatus::Limit, LegStatus::Weak] {
            yaw.entry(status.name()).or_default().push(report.row(status, 0.45).ok_or("missing row")?.mean_yaw_rate);
        }
    }
    let e = mean(&err);
    let yaw_ok = yaw.values().all(|v| mean(v).abs() <= 0.15);
    let yaw_text = yaw.iter().map(|(k, v)| format!("{k} {:+.3}", mean(v))).collect::<Vec<_>>().join(", ");
    Ok((
        e <= 0.30 && yaw_ok,
        format!(
            "health vx error {:.1}% (seeds {}; need <= 30); mean yaw rate rad/s {yaw_text} (need |.| <= 0.15)",
            100.0 * e,
            pct(&err)
        ),
    ))
}

fn contact_ordering() -> Verdict {
    let env = EnvConfig::default();
    let cfg = ContactConfig { seed: EVAL_SEED, ..Default::default() };
    let mut table: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let (ours, normal, mix, disc) =
            (policy("ours", seed, 2)?, policy("normal", seed, 1)?, policy("mix", seed, 2)?, discriminator(seed)?);
        let base = Controller {
            policy: &ours,
            discriminator: Some(&disc),
            switching: SelectionMode::Discriminator,
            hysteresis: HeadSelector::DEFAULT_HYSTERESIS,
        };
        let policies = [
            ("ours".to_string(), base),
            ("normal".to_string(), Controller { policy: &normal, discriminator: None, ..base }),
            ("mix".to_string(), Controller { policy: &mix, discriminator: None, ..base }),
        ];
        let report = run_contact_time(&env, &policies, &cfg).map_err(|e| e.to_string())?;
        for row in &report.rows {
            table.entry((row.policy.clone(), row.regime.clone())).or_default().push(row.contact_time);
        }
    }
    let m = |p: &str, r: &str| table.get(&(p.to_string(), r.to_string())).map(|v| mean(v));
    let mut ok = true;
    let mut parts = Vec::new();
    for regime in cfg.regimes.iter().map(|r| r.name.clone()) {
        let (o, n, x) = (m("ours", &regime), m("normal", &regime), m("mix", &regime));
        let (Some(o), Some(n), Some(x)) = (o, n, x) else { return Err(format!("missing {regime} rows")) };
        ok &= o <= n && o <= x;
        parts.push(format!("{regime}: ours {o:.2} s, normal {n:.2} s, mix {x:.2} s"));
    }
    Ok((ok, parts.join("; ")))
}

// ---------------------------------------------------------------------------
// Determinism of the command-line drivers

const DETERMINISM_CONFIG: &str = r#"
seed = 3
workers = 1

[model]
front_hidden = [32]
latent = 16
head_hidden = [16]
critic_front_hidden = [32]
critic_latent = 16
critic_head_hidden = [16]

[ppo]
iterations = 100
horizon = 8

[training]
envs = 32
checkpoint_every = 0
"#;

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_quadfault")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("failed").to_string())
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("det.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out_s = out.to_str().unwrap();
        run_cli(&["train", cfg, "--out", out_s, "--log-every", "0"])?;
        metrics.push(std::fs::read(out.join("metrics_stage1.csv")).map_err(|e| e.to_string())?);
        let ck = format!("ours={}", out.join("stage1.qfck").display());
        let eval_out = out.join("eval");
        run_cli(&[
            "eval",
            cfg,
            "--experiment",
            "tracking",
            "--policy",
            &ck,
            "--switching",
            "oracle",
            "--episodes",
            "3",
            "--out",
            eval_out.to_str().unwrap(),
        ])?;
        evals.push(std::fs::read(eval_out.join("tracking.csv")).map_err(|e| e.to_string())?);
    }
    let rows = String::from_utf8_lossy(&metrics[0]).lines().count().saturating_sub(1);
    let same_train = metrics[0] == metrics[1] && rows == 100;
    let same_eval = evals[0] == evals[1];
    Ok((
        same_train && same_eval,
        format!(
            "train metrics ({rows} iterations) {}; eval report {}",
            if same_train { "identical" } else { "differ" },
            if same_eval { "identical" } else { "differ" }
        ),
    ))
}

fn main() {
    // libtest-style filtering: `cargo test -- <filter>` runs matching criteria.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("invariant suite", invariant_suite),
        ("stage-1 training", stage_one_training),
        ("comparative survival", comparative_survival),
        ("reflection ablation", reflection_ablation),
        ("discriminator", discriminator_criterion),
        ("tracking", tracking_criterion),
        ("contact-time ordering", contact_ordering),
        ("determinism", determinism),
    ];
    println!("acceptance: artifacts from {}", artifacts().display());
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|flt| !name.contains(flt)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("could not evaluate: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} {name}: {detail} [{:.0} s]", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
