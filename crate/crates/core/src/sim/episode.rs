//! Closed-loop episodes: the policy is queried every `control_decimation`
//! physics steps and the reward is accumulated per control period.

use serde::{Deserialize, Serialize};

use crate::cpg::{GaitLibrary, GaitMatrix, ModulationCommand};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, reward, MetricsRecord, RewardInputs};
use crate::pattern::StyleParams;

use super::log::TrajectoryLog;
use super::observation::Observation;
use super::randomize::randomize;
use super::scenario::{Event, GaitSpec, ScenarioScript};
use super::{SimConfig, Simulation, Termination};

/// Maps observations to CPG modulation commands.
pub trait Controller {
    fn act(&mut self, obs: &Observation, gait: &GaitMatrix<f64>) -> ModulationCommand<f64>;

    fn reset(&mut self) {}
}

impl<C: Controller + ?Sized> Controller for &mut C {
    fn act(&mut self, obs: &Observation, gait: &GaitMatrix<f64>) -> ModulationCommand<f64> {
        (**self).act(obs, gait)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn act(&mut self, obs: &Observation, gait: &GaitMatrix<f64>) -> ModulationCommand<f64> {
        (**self).act(obs, gait)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Always returns the same command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantController(pub ModulationCommand<f64>);

impl Controller for ConstantController {
    fn act(&mut self, _: &Observation, _: &GaitMatrix<f64>) -> ModulationCommand<f64> {
        self.0
    }
}

/// Per-control-period averages of the reward inputs.
#[derive(Clone, Debug, Default)]
struct RewardAccumulator {
    lin_vel: [f64; 3],
    ang_vel: [f64; 3],
    power: f64,
    n: usize,
}

impl RewardAccumulator {
    fn add(&mut self, sim: &Simulation) {
        let s = sim.state();
        for k in 0..3 {
            self.lin_vel[k] += s.base_lin_vel[k];
            self.ang_vel[k] += s.base_ang_vel[k];
        }
        self.power += s.power();
        self.n += 1;
    }

    fn finish(&mut self, v_cmd: f64, dt: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let inp = RewardInputs {
            v_cmd,
            lin_vel: self.lin_vel.map(|x| x / n),
            ang_vel: self.ang_vel.map(|x| x / n),
            power: self.power / n,
        };
        *self = RewardAccumulator::default();
        reward(&inp, dt)
    }
}

/// A simulation driven by a controller.
pub struct ClosedLoop<C> {
    pub sim: Simulation,
    pub controller: C,
    acc: RewardAccumulator,
    total_return: f64,
    last_reward: f64,
    policy_queries: u64,
}

impl<C: Controller> ClosedLoop<C> {
    pub fn new(sim: Simulation, mut controller: C) -> Self {
        controller.reset();
        ClosedLoop {
            sim,
            controller,
            acc: RewardAccumulator::default(),
            total_return: 0.0,
            last_reward: 0.0,
            policy_queries: 0,
        }
    }

    pub fn total_return(&self) -> f64 {
        self.total_return
    }

    pub fn last_reward(&self) -> f64 {
        self.last_reward
    }

    pub fn policy_queries(&self) -> u64 {
        self.policy_queries
    }

    /// Queries the controller, then runs one control period of physics
    /// steps. `on_step` sees the simulation after every physics step.
    pub fn control_period(&mut self, mut on_step: impl FnMut(&Simulation)) -> Option<Termination> {
        if let Some(t) = self.sim.termination() {
            return Some(t.clone());
        }
        let obs = self.sim.observation();
        let cmd = self.controller.act(&obs, self.sim.gait());
        self.sim.set_action(cmd);
        self.policy_queries += 1;
        for _ in 0..self.sim.config().control_decimation {
            if let Some(t) = self.sim.step() {
                return Some(t.clone());
            }
            self.acc.add(&self.sim);
            on_step(&self.sim);
        }
        let dt = self.sim.config().control_dt();
        self.last_reward = self.acc.finish(self.sim.velocity_command(), dt);
        self.total_return += self.last_reward;
        None
    }
}

/// Everything needed to run one episode; also the `scenario run` file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSpec {
    pub sim: SimConfig,
    pub gait: GaitSpec,
    pub style: StyleParams<f64>,
    /// Forward velocity command, m/s.
    pub velocity: f64,
    pub script: ScenarioScript,
    /// Overrides `sim.episode_length`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Metrics are computed over `t >= metrics_from`.
    pub metrics_from: f64,
    /// Draw physical parameters and style from `sim.randomization`.
    pub randomize: bool,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            sim: SimConfig::default(),
            gait: GaitSpec::default(),
            style: StyleParams::default(),
            velocity: 0.5,
            script: ScenarioScript::default(),
            duration: None,
            metrics_from: 0.0,
            randomize: false,
        }
    }
}

impl EpisodeSpec {
    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(self.sim.episode_length)
    }

    pub fn validate(&self, library: &GaitLibrary) -> Result<()> {
        self.sim.validate()?;
        self.style.validate()?;
        self.script.validate()?;
        self.gait.resolve(library)?;
        for e in &self.script.events {
            if let Event::SetGait { gait } = &e.event {
                gait.resolve(library)?;
            }
        }
        let d = self.duration();
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidConfig(format!("episode duration must be > 0, got {d}")));
        }
        if !self.velocity.is_finite() {
            return Err(Error::OutOfRange("velocity must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Outcome of one episode.
#[derive(Clone, Debug)]
pub struct Episode {
    pub log: TrajectoryLog,
    pub metrics: MetricsRecord,
    pub termination: Termination,
    pub total_return: f64,
    pub steps: u64,
    pub policy_queries: u64,
    pub ik_clamps: u64,
    pub mass: f64,
    /// Physical configuration actually simulated (after randomization).
    pub sim: SimConfig,
    pub style: StyleParams<f64>,
}

impl Episode {
    pub fn fell(&self) -> bool {
        self.termination.is_fall()
    }
}

/// Builds the simulation an episode starts from, after randomization.
pub fn build_simulation(spec: &EpisodeSpec, library: &GaitLibrary) -> Result<Simulation> {
    spec.validate(library)?;
    let (sim_cfg, style) = if spec.randomize {
        let r = randomize(&spec.sim, &spec.style, spec.sim.seed)?;
        (r.sim, r.style)
    } else {
        (spec.sim.clone(), spec.style)
    };
    Simulation::new(sim_cfg, library.clone(), &spec.gait, style, spec.velocity)
}

/// Runs one deterministic episode.
pub fn run_episode<C: Controller>(controller: C, spec: &EpisodeSpec, library: &GaitLibrary) -> Result<Episode> {
    let sim = build_simulation(spec, library)?;
    let mut lp = ClosedLoop::new(sim, controller);
    let dt = lp.sim.config().dt;
    let log_every = lp.sim.config().log_decimation as u64;
    let mut log = TrajectoryLog::new(dt * log_every as f64);
    let total_steps = (spec.duration() / dt).round() as u64;
    let g = log.gait_index(&lp.sim.gait().name);
    log.rows.push(lp.sim.log_row(g));

    let events = &spec.script.events;
    let mut next_event = 0;
    let mut termination = None;
    while lp.sim.steps() < total_steps {
        let t = lp.sim.time();
        while next_event < events.len() && events[next_event].t <= t + 1e-9 {
            lp.sim.apply_event(&events[next_event].event)?;
            next_event += 1;
        }
        let mut rows = Vec::new();
        let outcome = lp.control_period(|s| {
            if s.steps() % log_every == 0 {
                rows.push((s.gait().name.clone(), s.log_row(0)));
            }
        });
        for (name, mut row) in rows {
            row.gait = log.gait_index(&name);
            log.rows.push(row);
        }
        if let Some(t) = outcome {
            termination = Some(t);
            break;
        }
    }
    let termination = termination.unwrap_or(Termination::Completed { time: lp.sim.time() });
    let mass = lp.sim.total_mass();
    let metrics = compute_metrics(&log.window(spec.metrics_from), mass);
    Ok(Episode {
        metrics,
        termination,
        total_return: lp.total_return(),
        steps: lp.sim.steps(),
        policy_queries: lp.policy_queries(),
        ik_clamps: lp.sim.ik_clamps(),
        mass,
        sim: lp.sim.config().clone(),
        style: *lp.sim.style(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leg::Leg;
    use crate::sim::Mode;

    fn spec(mode: Mode) -> EpisodeSpec {
        EpisodeSpec {
            sim: SimConfig { mode, episode_length: 2.0, ..SimConfig::default() },
            ..EpisodeSpec::default()
        }
    }

    fn trot_cmd() -> ConstantController {
        // 0.5 m/s: f = 2.5 Hz, μ = 1 + 0.5/(4·0.2·2.5)
        ConstantController(ModulationCommand::uniform(1.25, 2.5))
    }

    #[test]
    fn episode_counts_and_determinism() {
        let lib = GaitLibrary::default();
        let s = spec(Mode::Kinematic);
        let a = run_episode(trot_cmd(), &s, &lib).unwrap();
        let b = run_episode(trot_cmd(), &s, &lib).unwrap();
        assert_eq!(a.steps, 2000);
        assert_eq!(a.policy_queries, 200);
        assert_eq!(a.log.rows.len(), 201);
        assert_eq!(a.log.rows, b.log.rows);
        assert_eq!(a.total_return, b.total_return);
        assert!(a.termination.is_completed());
    }

    #[test]
    fn events_fire_at_control_ticks() {
        let lib = GaitLibrary::default();
        let mut s = spec(Mode::Kinematic);
        s.script.push(0.503, Event::SetGait { gait: GaitSpec::Named("pace".into()) });
        s.script.push(1.0, Event::DisableLeg { leg: Leg::HR, lock_angles: None });
        let ep = run_episode(trot_cmd(), &s, &lib).unwrap();
        assert_eq!(ep.log.gaits, vec!["trot".to_string(), "pace".to_string()]);
        let first_pace = ep.log.rows.iter().find(|r| r.gait == 1).unwrap();
        assert!((first_pace.t - 0.52).abs() < 1e-9, "{}", first_pace.t);
    }

    #[test]
    fn invalid_script_rejected_before_running() {
        let lib = GaitLibrary::default();
        let mut s = spec(Mode::Kinematic);
        s.script.push(0.5, Event::SetGait { gait: GaitSpec::Named("hop".into()) });
        assert!(matches!(run_episode(trot_cmd(), &s, &lib), Err(Error::UnknownGait { .. })));
    }

    #[test]
    fn spec_toml_round_trip() {
        let mut s = spec(Mode::Dynamic);
        s.script.push(1.0, Event::Push { magnitude: 0.3, direction: Some(0.0) });
        let text = s.to_toml().unwrap();
        assert_eq!(EpisodeSpec::from_toml(&text).unwrap(), s);
    }
}
