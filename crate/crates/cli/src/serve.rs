//! Real-time serving of one simulated robot over a websocket.
//!
//! The simulation thread owns the [`Session`] and advances it on a fixed
//! cadence. Network tasks only enqueue [`RemoteCommand`]s, which the
//! simulation drains between ticks, and forward serialized telemetry from a
//! broadcast channel; a client that falls behind skips frames.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use quadfault::discriminator::{DiscriminatorParams, StatusTracker};
use quadfault::env::{reset_env, step_env, Command, CurriculumState, EnvConfig, EpisodeState, Stage, Termination};
use quadfault::policy::{ActMode, HierarchicalParams, Layout, TaskId};
use quadfault::sim::LegStatus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

use crate::error::CliError;
use crate::protocol::{RemoteCommand, ServerMessage, TelemetryFrame, PROTOCOL_VERSION};

/// Simulation state of the served robot.
pub struct Session {
    env: EnvConfig,
    policy: HierarchicalParams<f32>,
    tracker: Option<StatusTracker<f32>>,
    ep: EpisodeState,
    rng: ChaCha8Rng,
    tick: u64,
    paused: bool,
    command: Command,
    head: TaskId,
    probabilities: Option<[f64; 3]>,
    pending_reset: bool,
}

impl Session {
    /// Without a discriminator the head follows the true status.
    pub fn new(
        env: &EnvConfig,
        policy: HierarchicalParams<f32>,
        discriminator: Option<DiscriminatorParams<f32>>,
        hysteresis: usize,
        seed: u64,
    ) -> Result<Self, CliError> {
        let mut env = env.clone();
        // The served robot runs until it falls or is reset.
        env.episode_steps = usize::MAX;
        env.randomization.enabled = false;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep =
            reset_env(&env, &mut rng, LegStatus::Health, Stage::One).map_err(|e| CliError::Config(e.to_string()))?;
        let command = Command::default();
        let tracker = discriminator.map(|d| StatusTracker::new(d, hysteresis.max(1)));
        let mut s = Self {
            env,
            policy,
            tracker,
            ep,
            rng,
            tick: 0,
            paused: false,
            command,
            head: TaskId::HEALTH,
            probabilities: None,
            pending_reset: false,
        };
        s.ep.command = command;
        Ok(s)
    }

    pub fn requires_discriminator(policy: &HierarchicalParams<f32>) -> bool {
        policy.layout == Layout::Hierarchical
    }

    fn reset(&mut self) -> Result<(), CliError> {
        self.ep = reset_env(&self.env, &mut self.rng, LegStatus::Health, Stage::One)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        self.ep.command = self.command;
        if let Some(t) = &mut self.tracker {
            t.reset();
        }
        self.head = TaskId::HEALTH;
        self.probabilities = None;
        self.pending_reset = false;
        Ok(())
    }

    /// Applies a command; called only between ticks.
    pub fn apply(&mut self, cmd: RemoteCommand) -> Result<(), CliError> {
        match cmd.clamped() {
            RemoteCommand::SetCommand { vx, wz } => {
                self.command = Command { vx, wz };
                self.ep.command = self.command;
            }
            RemoteCommand::InjectFault { status: LegStatus::Health, .. } | RemoteCommand::ClearFault => {
                self.ep.fault.clear(&self.ep.robot)
            }
            RemoteCommand::InjectFault { leg, status } => self.ep.fault.set_status(leg, status, &self.ep.robot),
            RemoteCommand::Reset => self.reset()?,
            RemoteCommand::Pause => self.paused = true,
            RemoteCommand::Resume => self.paused = false,
        }
        Ok(())
    }

    fn head_for_next_tick(&self) -> TaskId {
        match &self.tracker {
            Some(t) => TaskId::from(t.committed()),
            None => TaskId::from(self.ep.status()),
        }
    }

    /// Advances one control tick (unless paused) and describes the result.
    pub fn tick(&mut self) -> Result<TelemetryFrame, CliError> {
        if self.pending_reset {
            self.reset()?;
        }
        if self.paused {
            return Ok(self.frame(None, None, None, Termination::Running));
        }
        let rt = |e: String| CliError::Runtime(e);
        self.head = self.head_for_next_tick();
        let obs = self.ep.observation(&self.env).map_err(|e| rt(e.to_string()))?;
        let act = self
            .policy
            .act(&obs.values, self.head, &mut self.rng, ActMode::Deterministic)
            .map_err(|e| rt(e.to_string()))?;
        let step = step_env(&self.env, &mut self.ep, &act.action, &CurriculumState::complete())
            .map_err(|e| rt(e.to_string()))?;
        if let Some(t) = &mut self.tracker {
            self.probabilities = Some(t.push(&self.ep.robot.q, &self.ep.robot.qd)?.probabilities);
        }
        self.tick += 1;
        if step.termination == Termination::Death {
            self.pending_reset = true;
        }
        let torques = step.report.as_ref().map(|r| r.mean_torque);
        Ok(self.frame(torques, Some(act.action), Some(step.terms), step.termination))
    }

    fn frame(
        &self,
        torques: Option<[f64; 8]>,
        action: Option<[f64; 8]>,
        reward: Option<quadfault::env::RewardTerms>,
        termination: Termination,
    ) -> TelemetryFrame {
        let r = &self.ep.robot;
        let o = &r.trunk_orientation;
        TelemetryFrame {
            tick: self.tick,
            time: r.time,
            command: self.ep.command,
            trunk_position: r.trunk_position.into(),
            trunk_orientation: [o.w, o.i, o.j, o.k],
            trunk_linear_velocity: r.trunk_linear_velocity.into(),
            trunk_angular_velocity: r.trunk_angular_velocity.into(),
            q: r.q,
            qd: r.qd,
            torques,
            action,
            probabilities: self.probabilities,
            committed_status: self.head_for_next_tick().status(),
            active_head: self.head.status(),
            true_status: self.ep.status(),
            fault_leg: self.ep.fault.faulty_leg().map(|(l, _)| l),
            termination,
            paused: self.paused,
            reward,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub bind: String,
    pub port: u16,
    pub tick_rate: f64,
    /// Stop after this many ticks; runs until interrupted otherwise.
    pub max_ticks: Option<u64>,
    /// Also append every telemetry message to this JSONL file.
    pub record: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8765, tick_rate: 50.0, max_ticks: None, record: None }
    }
}

/// Statistics of a finished serve session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServeStats {
    pub ticks: u64,
    /// Mean achieved tick interval, s.
    pub mean_interval: f64,
}

fn hello(tick_rate: f64) -> String {
    serde_json::to_string(&ServerMessage::Hello {
        protocol_version: PROTOCOL_VERSION,
        tick_rate,
        server: "quadfault".into(),
    })
    .expect("static message")
}

async fn client(
    stream: tokio::net::TcpStream,
    mut frames: broadcast::Receiver<Arc<str>>,
    commands: mpsc::UnboundedSender<RemoteCommand>,
    tick_rate: f64,
) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else { return };
    let (mut sink, mut incoming) = ws.split();
    if sink.send(Message::text(hello(tick_rate))).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if sink.send(Message::text(text.to_string())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => {
                    let _ = sink.close().await;
                    return;
                }
            },
            msg = incoming.next() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<RemoteCommand>(&text) {
                    Ok(cmd) => {
                        if commands.send(cmd).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let err = ServerMessage::Error { message: format!("bad command: {e}") };
                        let text = serde_json::to_string(&err).expect("serializable");
                        if sink.send(Message::text(text)).await.is_err() {
                            return;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Runs the simulation loop until `max_ticks` or forever.
fn simulate(
    mut session: Session,
    opts: &ServeOptions,
    mut commands: mpsc::UnboundedReceiver<RemoteCommand>,
    frames: broadcast::Sender<Arc<str>>,
) -> Result<ServeStats, CliError> {
    let period = Duration::from_secs_f64(1.0 / opts.tick_rate);
    let mut record = opts.record.as_ref().map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let start = Instant::now();
    let mut deadline = start;
    let mut ticks = 0u64;
    loop {
        while let Ok(cmd) = commands.try_recv() {
            session.apply(cmd)?;
        }
        let frame = session.tick()?;
        let text: Arc<str> = serde_json::to_string(&ServerMessage::Telemetry(Box::new(frame)))
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .into();
        if let Some(w) = &mut record {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")?;
        }
        // No receivers is not an error: the robot runs with nobody watching.
        let _ = frames.send(text);
        ticks += 1;
        if opts.max_ticks.is_some_and(|m| ticks >= m) {
            break;
        }
        deadline += period;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > period {
            // Far behind: drop the backlog rather than bursting.
            deadline = now;
        }
    }
    if let Some(w) = &mut record {
        w.flush()?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(ServeStats { ticks, mean_interval: if ticks > 1 { elapsed / (ticks - 1) as f64 } else { 0.0 } })
}

/// Binds the port, then serves until the session ends. `on_ready` receives
/// the bound address before the first tick.
pub fn cmd_serve(
    session: Session,
    opts: ServeOptions,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<ServeStats, CliError> {
    if !(opts.tick_rate > 0.0 && opts.tick_rate.is_finite()) {
        return Err(CliError::Usage("--tick-rate must be positive".into()));
    }
    let listener = std::net::TcpListener::bind((opts.bind.as_str(), opts.port))
        .map_err(|e| CliError::Port(format!("cannot listen on {}:{}: {e}", opts.bind, opts.port)))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (frame_tx, _) = broadcast::channel::<Arc<str>>(64);
    let (done_tx, mut done_rx) = oneshot::channel::<()>();

    let net_frames = frame_tx.clone();
    let tick_rate = opts.tick_rate;
    let server = runtime.spawn(async move {
        let listener = tokio::net::TcpListener::from_std(listener).expect("listener inside runtime");
        loop {
            tokio::select! {
                accepted = listener.accept() => {
                    if let Ok((stream, _)) = accepted {
                        tokio::spawn(client(stream, net_frames.subscribe(), cmd_tx.clone(), tick_rate));
                    }
                }
                _ = &mut done_rx => break,
            }
        }
    });
    on_ready(addr);
    let result = simulate(session, &opts, cmd_rx, frame_tx);
    let _ = done_tx.send(());
    let _ = runtime.block_on(server);
    runtime.shutdown_timeout(Duration::from_millis(200));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use quadfault::policy::PolicyArch;
    use quadfault::sim::Leg;

    fn session() -> Session {
        let arch = PolicyArch { front_hidden: vec![8], latent: 4, head_hidden: vec![4], ..Default::default() };
        let policy = HierarchicalParams::<f32>::zeros(arch, Layout::Hierarchical);
        Session::new(&EnvConfig::default(), policy, None, 5, 0).unwrap()
    }

    #[test]
    fn weak_injection_zeroes_the_leg_torques_on_the_next_tick() {
        let mut s = session();
        for _ in 0..5 {
            s.tick().unwrap();
        }
        s.apply(RemoteCommand::InjectFault { leg: Leg::LeftFront, status: LegStatus::Weak }).unwrap();
        let f = s.tick().unwrap();
        let t = f.torques.unwrap();
        for j in Leg::LeftFront.joints() {
            assert_eq!(t[j], 0.0);
        }
        assert_eq!(f.true_status, LegStatus::Weak);
        assert_eq!(f.fault_leg, Some(Leg::LeftFront));
    }

    #[test]
    fn command_is_echoed_and_pause_holds_the_tick() {
        let mut s = session();
        s.apply(RemoteCommand::SetCommand { vx: 0.45, wz: 0.0 }).unwrap();
        let f = s.tick().unwrap();
        assert_eq!((f.command.vx, f.command.wz), (0.45, 0.0));
        s.apply(RemoteCommand::Pause).unwrap();
        let a = s.tick().unwrap();
        let b = s.tick().unwrap();
        assert!(a.paused && b.paused);
        assert_eq!(a.tick, b.tick);
        assert_eq!(a.q, b.q);
        s.apply(RemoteCommand::Resume).unwrap();
        assert!(s.tick().unwrap().tick > b.tick);
    }

    #[test]
    fn clear_restores_health() {
        let mut s = session();
        s.apply(RemoteCommand::InjectFault { leg: Leg::RightHind, status: LegStatus::Limit }).unwrap();
        assert_eq!(s.tick().unwrap().true_status, LegStatus::Limit);
        s.apply(RemoteCommand::ClearFault).unwrap();
        assert_eq!(s.tick().unwrap().true_status, LegStatus::Health);
    }
}
