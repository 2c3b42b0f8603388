//! A live simulation as a deterministic state machine: commands are applied
//! at policy-tick boundaries and every sim-affecting command is recorded
//! with its tick, so a recording replays to identical telemetry.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use quadcpg::cpg::{phase_error, GaitLibrary};
use quadcpg::policy::Policy;
use quadcpg::sim::episode::{build_simulation, ClosedLoop, EpisodeSpec};
use quadcpg::sim::{Simulation, Termination};
use quadcpg::{Error, Result};

use crate::protocol::{Command, TelemetryFrame};

pub const RECORDING_SCHEMA: &str = "quadcpg-session";
pub const RECORDING_VERSION: u32 = 1;
pub const TELEMETRY_PERIOD: f64 = 0.02;
const COT_WINDOW: f64 = 1.0;
const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedCommand {
    pub tick: u64,
    pub command: Command,
}

/// Everything needed to reproduce a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub schema: String,
    pub version: u32,
    pub spec: EpisodeSpec,
    pub policy: Policy,
    pub commands: Vec<RecordedCommand>,
    /// Policy ticks simulated.
    pub ticks: u64,
    pub frames: u64,
    /// SHA-256 over the JSON of every telemetry frame, in order.
    pub digest: String,
}

impl Recording {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let schema = v.get("schema").and_then(|s| s.as_str()).unwrap_or("");
        let version = v.get("version").and_then(|s| s.as_u64()).unwrap_or(0);
        if schema != RECORDING_SCHEMA || version != RECORDING_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: format!("{RECORDING_SCHEMA} v{RECORDING_VERSION}"),
                found: format!("{schema} v{version}"),
            });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Telemetry decimation, rolling COT and the frame digest.
struct Telemetry {
    every: u64,
    seq: u64,
    /// (t, x, cumulative energy) samples for the rolling COT.
    window: VecDeque<(f64, f64, f64)>,
    energy: f64,
    hasher: Sha256,
    outbox: Vec<TelemetryFrame>,
}

impl Telemetry {
    fn restart(&mut self, sim: &Simulation, episode: u64, tick: u64) {
        self.energy = 0.0;
        self.window.clear();
        self.emit(sim, episode, tick);
    }

    fn on_step(&mut self, sim: &Simulation, episode: u64, tick: u64) {
        let s = sim.state();
        self.energy += s.tau.iter().zip(&s.q_dot).map(|(a, b)| (a * b).abs()).sum::<f64>() * sim.config().dt;
        if sim.steps() % self.every == 0 {
            self.emit(sim, episode, tick);
        }
    }

    fn emit(&mut self, sim: &Simulation, episode: u64, tick: u64) {
        let s = sim.state();
        let t = sim.time();
        let x = s.base_position[0];
        self.window.push_back((t, x, self.energy));
        while self.window.len() > 2 && t - self.window[1].0 >= COT_WINDOW {
            self.window.pop_front();
        }
        let (_, x0, e0) = self.window[0];
        let dx = x - x0;
        let rolling_cot = (dx > 1e-3).then(|| (self.energy - e0) / (sim.total_mass() * GRAVITY * dx));
        let frame = TelemetryFrame {
            seq: self.seq,
            episode,
            tick,
            t,
            base_pos: s.base_position,
            base_quat: s.base_orientation,
            base_lin_vel: s.base_lin_vel,
            base_ang_vel: s.base_ang_vel,
            q: s.q,
            foot_pos: s.foot_positions,
            contacts: s.contacts,
            locked: sim.locks().map(|l| l.is_some()),
            cpg_r: sim.cpg().r,
            cpg_theta: sim.cpg().phases(),
            gait: sim.gait().name.clone(),
            phase_error: phase_error(sim.cpg(), sim.gait()),
            style: *sim.style(),
            v_cmd: sim.velocity_command(),
            power: s.tau.iter().zip(&s.q_dot).map(|(a, b)| (a * b).abs()).sum(),
            rolling_cot,
        };
        self.seq += 1;
        self.hasher.update(serde_json::to_vec(&frame).expect("frames serialize"));
        self.outbox.push(frame);
    }
}

pub struct Session {
    spec: EpisodeSpec,
    policy: Policy,
    library: GaitLibrary,
    lp: ClosedLoop<Policy>,
    next_event: usize,
    tick: u64,
    episode: u64,
    commands: Vec<RecordedCommand>,
    tel: Telemetry,
}

impl Session {
    pub fn new(spec: EpisodeSpec, policy: Policy, library: GaitLibrary) -> Result<Self> {
        policy.validate()?;
        let sim = build_simulation(&spec, &library)?;
        let dt = sim.config().dt;
        let every = (TELEMETRY_PERIOD / dt).round() as u64;
        if every == 0 || (every as f64 * dt - TELEMETRY_PERIOD).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("dt = {dt} does not divide the 20 ms telemetry period")));
        }
        let mut tel = Telemetry {
            every,
            seq: 0,
            window: VecDeque::new(),
            energy: 0.0,
            hasher: Sha256::new(),
            outbox: Vec::new(),
        };
        tel.restart(&sim, 0, 0);
        let lp = ClosedLoop::new(sim, policy.clone());
        Ok(Session { spec, policy, library, lp, next_event: 0, tick: 0, episode: 0, commands: Vec::new(), tel })
    }

    pub fn sim(&self) -> &Simulation {
        &self.lp.sim
    }

    pub fn library(&self) -> &GaitLibrary {
        &self.library
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn frames(&self) -> u64 {
        self.tel.seq
    }

    pub fn policy_hz(&self) -> f64 {
        1.0 / self.lp.sim.config().control_dt()
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.lp.sim.termination()
    }

    /// Frames produced since the last call.
    pub fn drain_frames(&mut self) -> Vec<TelemetryFrame> {
        std::mem::take(&mut self.tel.outbox)
    }

    /// Applies a simulation command before the next tick and records it.
    /// Pacing commands are ignored.
    pub fn apply(&mut self, cmd: &Command) -> Result<()> {
        if !cmd.affects_simulation() {
            return Ok(());
        }
        cmd.validate(&self.library).map_err(|e| Error::InvalidConfig(e.message))?;
        match cmd {
            Command::Reset => {
                let sim = build_simulation(&self.spec, &self.library)?;
                self.lp = ClosedLoop::new(sim, self.policy.clone());
                self.next_event = 0;
                self.episode += 1;
                self.tel.restart(&self.lp.sim, self.episode, self.tick);
            }
            _ => {
                if let Some(ev) = cmd.event() {
                    self.lp.sim.apply_event(&ev)?;
                }
            }
        }
        self.commands.push(RecordedCommand { tick: self.tick, command: cmd.clone() });
        Ok(())
    }

    /// Runs one policy period. Returns the termination if the episode has
    /// ended; a terminated session does not advance.
    pub fn step(&mut self) -> Result<Option<Termination>> {
        if let Some(t) = self.lp.sim.termination() {
            return Ok(Some(t.clone()));
        }
        let events = &self.spec.script.events;
        let t = self.lp.sim.time();
        while self.next_event < events.len() && events[self.next_event].t <= t + 1e-9 {
            self.lp.sim.apply_event(&events[self.next_event].event)?;
            self.next_event += 1;
        }
        let (episode, tick) = (self.episode, self.tick);
        let tel = &mut self.tel;
        let out = self.lp.control_period(|s| tel.on_step(s, episode, tick));
        self.tick += 1;
        Ok(out)
    }

    pub fn digest(&self) -> String {
        format!("{:x}", self.tel.hasher.clone().finalize())
    }

    pub fn recording(&self) -> Recording {
        Recording {
            schema: RECORDING_SCHEMA.into(),
            version: RECORDING_VERSION,
            spec: self.spec.clone(),
            policy: self.policy.clone(),
            commands: self.commands.clone(),
            ticks: self.tick,
            frames: self.tel.seq,
            digest: self.digest(),
        }
    }
}

/// Result of re-simulating a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub frames: u64,
    pub ticks: u64,
    pub digest: String,
    pub expected_digest: String,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.digest == self.expected_digest
    }
}

/// Re-runs `rec`, optionally under another seed, passing every frame to
/// `on_frame`.
pub fn replay(
    rec: &Recording,
    seed: Option<u64>,
    library: &GaitLibrary,
    mut on_frame: impl FnMut(&TelemetryFrame),
) -> Result<ReplayReport> {
    let mut spec = rec.spec.clone();
    if let Some(s) = seed {
        spec.sim.seed = s;
    }
    let mut session = Session::new(spec, rec.policy.clone(), library.clone())?;
    let mut cmds = rec.commands.iter().peekable();
    loop {
        while let Some(c) = cmds.next_if(|c| c.tick <= session.tick()) {
            session.apply(&c.command)?;
        }
        for f in session.drain_frames() {
            on_frame(&f);
        }
        // a terminated session only advances after a reset
        if session.tick() >= rec.ticks || session.termination().is_some() {
            break;
        }
        session.step()?;
    }
    Ok(ReplayReport {
        frames: session.frames(),
        ticks: session.tick(),
        digest: session.digest(),
        expected_digest: rec.digest.clone(),
    })
}
