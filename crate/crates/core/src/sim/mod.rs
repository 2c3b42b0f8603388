//! Closed-loop simulator: CPG, pattern formation, IK and PD on a quadruped
//! body, in either a kinematic or a rigid-body dynamic tier.

pub mod dynamic;
pub mod episode;
pub mod kinematic;
pub mod log;
pub mod observation;
pub mod randomize;
pub mod robot;
pub mod scenario;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpg::{self, CpgConfig, GaitLibrary, GaitMatrix, ModulationCommand, OscillatorNetworkState};
use crate::error::{Error, Result};
use crate::kinematics::{fk, ik, knee_position, JointAngles};
use crate::leg::{Leg, NUM_LEGS};
use crate::pattern::{map_to_foot_targets, swing_flag, StyleParams};

use self::dynamic::DynamicBody;
use self::kinematic::KinematicBody;
use self::log::LogRow;
use self::observation::Observation;
use self::randomize::RandomizationRanges;
use self::robot::{RobotModel, RobotState, NUM_JOINTS, NUM_LINKS};
use self::scenario::{Event, GaitSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Kinematic,
    Dynamic,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kinematic" => Ok(Mode::Kinematic),
            "dynamic" => Ok(Mode::Dynamic),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?} (kinematic, dynamic)"))),
        }
    }
}

/// Ground contact model of the dynamic tier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    /// Coulomb coefficient.
    pub friction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            stiffness: 1e4,
            damping: 300.0,
            tangential_stiffness: 1e4,
            tangential_damping: 300.0,
            friction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicParams {
    /// First-order joint tracking time constant, s.
    pub tracking_time_constant: f64,
    /// A stance foot this close to the ground (m) becomes anchored.
    pub touchdown_window: f64,
    /// Base height smoothing time constant, s.
    pub height_time_constant: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        KinematicParams {
            tracking_time_constant: 0.005,
            touchdown_window: 0.02,
            height_time_constant: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub mode: Mode,
    /// Physics and CPG step, s.
    pub dt: f64,
    /// Physics steps per policy query.
    pub control_decimation: usize,
    pub kp: f64,
    pub kd: f64,
    pub contact: ContactParams,
    /// Multipliers on the nominal link masses (trunk, then hip/thigh/calf per leg).
    pub mass_scales: [f64; NUM_LINKS],
    /// kg
    pub added_base_mass: f64,
    /// Oscillator settings. `dt` here is overridden by [`SimConfig::dt`].
    pub cpg: CpgConfig<f64>,
    pub robot: RobotModel,
    pub randomization: RandomizationRanges,
    /// Episode length, s.
    pub episode_length: f64,
    pub seed: u64,
    /// Physics steps per log row.
    pub log_decimation: usize,
    /// Initial phases are perturbed by U(−x, x) rad.
    pub init_phase_noise: f64,
    /// Phase diffusion, rad/√s. Breaks the exact symmetry that otherwise
    /// pins some gait switches (trot to pace, say) on an unstable lock.
    pub phase_jitter: f64,
    /// Contact flag threshold on foot height, m.
    pub contact_threshold: f64,
    pub kinematic: KinematicParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: Mode::Kinematic,
            dt: 0.001,
            control_decimation: 10,
            kp: 100.0,
            kd: 2.0,
            contact: ContactParams::default(),
            mass_scales: [1.0; NUM_LINKS],
            added_base_mass: 0.0,
            cpg: CpgConfig::default(),
            robot: RobotModel::go1(),
            randomization: RandomizationRanges::default(),
            episode_length: 10.0,
            seed: 0,
            log_decimation: 10,
            init_phase_noise: 0.5,
            phase_jitter: 0.01,
            contact_threshold: 0.002,
            kinematic: KinematicParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt <= 0.002) {
            return bad(format!("dt must be in (0, 0.002], got {}", self.dt));
        }
        if self.control_decimation == 0 || self.log_decimation == 0 {
            return bad("control_decimation and log_decimation must be >= 1".into());
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0 && self.kp.is_finite() && self.kd.is_finite()) {
            return bad(format!("PD gains must be finite and >= 0 (kp {}, kd {})", self.kp, self.kd));
        }
        let c = &self.contact;
        if [c.stiffness, c.damping, c.tangential_stiffness, c.tangential_damping, c.friction]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return bad("contact parameters must be finite and >= 0".into());
        }
        if self.mass_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("mass scales must be > 0".into());
        }
        if !(self.added_base_mass.is_finite() && self.added_base_mass >= 0.0) {
            return bad("added_base_mass must be >= 0".into());
        }
        if !(self.episode_length.is_finite() && self.episode_length > 0.0) {
            return bad("episode_length must be > 0".into());
        }
        if !(self.init_phase_noise.is_finite() && self.init_phase_noise >= 0.0) {
            return bad("init_phase_noise must be >= 0".into());
        }
        if !(self.phase_jitter.is_finite() && self.phase_jitter >= 0.0) {
            return bad("phase_jitter must be >= 0".into());
        }
        if !(self.contact_threshold.is_finite() && self.contact_threshold >= 0.0) {
            return bad("contact_threshold must be >= 0".into());
        }
        let k = &self.kinematic;
        if [k.tracking_time_constant, k.touchdown_window, k.height_time_constant]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return bad("kinematic parameters must be finite and >= 0".into());
        }
        self.cpg_config().validate()?;
        self.robot.validate()?;
        self.randomization.validate()
    }

    pub fn cpg_config(&self) -> CpgConfig<f64> {
        CpgConfig { dt: self.dt, ..self.cpg }
    }

    /// Policy period, s.
    pub fn control_dt(&self) -> f64 {
        self.dt * self.control_decimation as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.robot.total_mass(&self.mass_scales, self.added_base_mass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallReason {
    BaseHeight,
    KneeContact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed { time: f64 },
    Fall { time: f64, reason: FallReason },
    Fault { time: f64, message: String },
}

impl Termination {
    pub fn time(&self) -> f64 {
        match self {
            Termination::Completed { time }
            | Termination::Fall { time, .. }
            | Termination::Fault { time, .. } => *time,
        }
    }

    pub fn is_fall(&self) -> bool {
        matches!(self, Termination::Fall { .. })
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed { .. })
    }
}

/// `τ = Kp(q_des − q) − Kd·q̇`, clamped to `±limit`.
pub fn pd_torque(q_des: f64, q: f64, q_dot: f64, kp: f64, kd: f64, limit: f64) -> f64 {
    (kp * (q_des - q) - kd * q_dot).clamp(-limit, limit)
}

/// [`pd_torque`] for all joints.
pub fn pd_torques(
    q_des: &[f64; NUM_JOINTS],
    q: &[f64; NUM_JOINTS],
    q_dot: &[f64; NUM_JOINTS],
    kp: f64,
    kd: f64,
    limit: f64,
) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|k| pd_torque(q_des[k], q[k], q_dot[k], kp, kd, limit))
}

/// Foot position in the base frame.
pub fn foot_in_base(robot: &RobotModel, leg: Leg, q: [f64; 3]) -> Vector3<f64> {
    robot.hip(leg) + Vector3::from(fk(&JointAngles::from_array(q), &robot.leg_geometry(leg)))
}

/// Knee position in the base frame.
pub fn knee_in_base(robot: &RobotModel, leg: Leg, q: [f64; 3]) -> Vector3<f64> {
    robot.hip(leg)
        + Vector3::from(knee_position(&JointAngles::from_array(q), &robot.leg_geometry(leg)))
}

pub(crate) fn quat_from_array(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub(crate) fn quat_to_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Inputs shared by both tiers for one physics step.
pub(crate) struct StepInput<'a> {
    pub cfg: &'a SimConfig,
    pub q_des: &'a [f64; NUM_JOINTS],
    pub swing: [bool; NUM_LEGS],
    pub locks: &'a [Option<[f64; 3]>; NUM_LEGS],
    pub mass: f64,
    pub time: f64,
}

#[derive(Clone, Debug)]
enum Body {
    Kinematic(KinematicBody),
    Dynamic(DynamicBody),
}

impl Body {
    fn step(&mut self, input: &StepInput) -> RobotState {
        match self {
            Body::Kinematic(b) => b.step(input),
            Body::Dynamic(b) => b.step(input),
        }
    }

    fn push(&mut self, dv: Vector2<f64>) {
        match self {
            Body::Kinematic(b) => b.push(dv),
            Body::Dynamic(b) => b.push(dv),
        }
    }
}

/// One simulated robot with its oscillator network.
#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: SimConfig,
    cpg_cfg: CpgConfig<f64>,
    library: GaitLibrary,
    gait: GaitMatrix<f64>,
    style: StyleParams<f64>,
    v_cmd: f64,
    action: ModulationCommand<f64>,
    cpg: OscillatorNetworkState<f64>,
    locks: [Option<[f64; 3]>; NUM_LEGS],
    q_des: [f64; NUM_JOINTS],
    body: Body,
    state: RobotState,
    time: f64,
    steps: u64,
    rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    ik_clamps: u64,
    mass: f64,
    termination: Option<Termination>,
}

impl Simulation {
    pub fn new(
        cfg: SimConfig,
        library: GaitLibrary,
        gait: &GaitSpec,
        style: StyleParams<f64>,
        velocity: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        style.validate()?;
        if !velocity.is_finite() {
            return Err(Error::OutOfRange("velocity command must be finite".into()));
        }
        let gait = gait.resolve(&library)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = if cfg.init_phase_noise > 0.0 {
            let n = cfg.init_phase_noise;
            [(); NUM_LEGS].map(|_| rng.random_range(-n..=n))
        } else {
            [0.0; NUM_LEGS]
        };
        let cpg_state = OscillatorNetworkState::at_gait(&gait, noise);
        let mass = cfg.total_mass();
        let mut sim = Simulation {
            cpg_cfg: cfg.cpg_config(),
            library,
            gait,
            style,
            v_cmd: velocity,
            action: ModulationCommand::uniform(1.0, 0.0),
            cpg: cpg_state,
            locks: [None; NUM_LEGS],
            q_des: [0.0; NUM_JOINTS],
            body: Body::Kinematic(KinematicBody::placeholder()),
            state: RobotState::default(),
            time: 0.0,
            steps: 0,
            rng,
            jitter_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED),
            ik_clamps: 0,
            mass,
            termination: None,
            cfg,
        };
        sim.update_q_des();
        let swing = sim.swing_flags();
        sim.body = match sim.cfg.mode {
            Mode::Kinematic => Body::Kinematic(KinematicBody::new(&sim.cfg, &sim.q_des, swing, &sim.style)),
            Mode::Dynamic => Body::Dynamic(DynamicBody::new(&sim.cfg, &sim.q_des, &sim.style)),
        };
        sim.state = match &sim.body {
            Body::Kinematic(b) => b.snapshot(&sim.cfg),
            Body::Dynamic(b) => b.snapshot(&sim.cfg),
        };
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn library(&self) -> &GaitLibrary {
        &self.library
    }

    pub fn gait(&self) -> &GaitMatrix<f64> {
        &self.gait
    }

    pub fn style(&self) -> &StyleParams<f64> {
        &self.style
    }

    pub fn velocity_command(&self) -> f64 {
        self.v_cmd
    }

    pub fn action(&self) -> &ModulationCommand<f64> {
        &self.action
    }

    pub fn cpg(&self) -> &OscillatorNetworkState<f64> {
        &self.cpg
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn q_des(&self) -> &[f64; NUM_JOINTS] {
        &self.q_des
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Number of IK solves that hit a joint limit or reach bound.
    pub fn ik_clamps(&self) -> u64 {
        self.ik_clamps
    }

    pub fn total_mass(&self) -> f64 {
        self.mass
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.termination.as_ref()
    }

    pub fn is_locked(&self, leg: Leg) -> bool {
        self.locks[leg.index()].is_some()
    }

    pub fn locks(&self) -> &[Option<[f64; 3]>; NUM_LEGS] {
        &self.locks
    }

    /// Whether `step` is due to query the policy first.
    pub fn at_control_tick(&self) -> bool {
        self.steps % self.cfg.control_decimation as u64 == 0
    }

    pub fn observation(&self) -> Observation {
        Observation::new(&self.state, &self.cpg, self.v_cmd, self.action.to_array())
    }

    /// Sets the CPG modulation; it is clamped into range.
    pub fn set_action(&mut self, cmd: ModulationCommand<f64>) {
        self.action = cmd.clamped();
    }

    pub fn set_gait(&mut self, gait: GaitMatrix<f64>) {
        self.gait = gait;
    }

    pub fn set_style(&mut self, style: StyleParams<f64>) -> Result<()> {
        style.validate()?;
        self.style = style;
        Ok(())
    }

    pub fn set_velocity_command(&mut self, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::OutOfRange("velocity command must be finite".into()));
        }
        self.v_cmd = v;
        Ok(())
    }

    /// Nominal standing joint angles for `leg` under the current style.
    pub fn nominal_stance(&self, leg: Leg) -> [f64; 3] {
        let y = if leg.is_left() { self.cfg.robot.l_abd } else { -self.cfg.robot.l_abd };
        let target = [self.style.x_off, y, -self.style.h];
        ik(&target, &self.cfg.robot.leg_geometry(leg)).angles.to_array()
    }

    pub fn apply_event(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::SetGait { gait } => {
                let g = gait.resolve(&self.library)?;
                self.set_gait(g);
            }
            Event::SetStyle { style } => self.set_style(*style)?,
            Event::SetVelocityCommand { velocity } => self.set_velocity_command(*velocity)?,
            Event::Push { magnitude, direction } => {
                if !magnitude.is_finite() || direction.is_some_and(|d| !d.is_finite()) {
                    return Err(Error::OutOfRange("push must be finite".into()));
                }
                let dir = match direction {
                    Some(d) => *d,
                    None => self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                };
                self.body.push(Vector2::new(dir.cos(), dir.sin()) * *magnitude);
            }
            Event::DisableLeg { leg, lock_angles } => {
                let angles = match lock_angles {
                    Some(a) => {
                        if a.iter().any(|x| !x.is_finite()) {
                            return Err(Error::OutOfRange("lock angles must be finite".into()));
                        }
                        let lim = &self.cfg.robot.joint_limits;
                        lim.clamp(JointAngles::from_array(*a)).to_array()
                    }
                    None => self.nominal_stance(*leg),
                };
                self.locks[leg.index()] = Some(angles);
            }
            Event::EnableLeg { leg } => self.locks[leg.index()] = None,
        }
        Ok(())
    }

    fn swing_flags(&self) -> [bool; NUM_LEGS] {
        Leg::ALL.map(|l| swing_flag(&self.cpg, l))
    }

    fn update_q_des(&mut self) {
        let targets = map_to_foot_targets(&self.cpg, &self.style, self.cfg.robot.l_abd);
        for leg in Leg::ALL {
            let i = leg.index();
            let q = match self.locks[i] {
                Some(lock) => lock,
                None => {
                    let sol = ik(&targets[i], &self.cfg.robot.leg_geometry(leg));
                    if sol.clamped {
                        self.ik_clamps += 1;
                    }
                    self.cfg.robot.joint_limits.clamp(sol.angles).to_array()
                }
            };
            self.q_des[3 * i..3 * i + 3].copy_from_slice(&q);
        }
    }

    /// Advances one physics step. Returns the termination once the robot has
    /// fallen or the state became non-finite; further calls are no-ops.
    pub fn step(&mut self) -> Option<&Termination> {
        if self.termination.is_some() {
            return self.termination.as_ref();
        }
        match cpg::step(&self.cpg, &self.action, &self.gait, &self.cpg_cfg) {
            Ok(s) => self.cpg = s,
            Err(e) => {
                self.termination = Some(Termination::Fault { time: self.time, message: e.to_string() });
                return self.termination.as_ref();
            }
        }
        if self.cfg.phase_jitter > 0.0 {
            let k = self.cfg.phase_jitter * self.cfg.dt.sqrt();
            for th in self.cpg.theta.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut self.jitter_rng);
                *th += k * n;
            }
        }
        self.update_q_des();
        let input = StepInput {
            cfg: &self.cfg,
            q_des: &self.q_des,
            swing: self.swing_flags(),
            locks: &self.locks,
            mass: self.mass,
            time: self.time,
        };
        self.state = self.body.step(&input);
        self.time = (self.steps + 1) as f64 * self.cfg.dt;
        self.steps += 1;
        self.termination = self.check_termination();
        self.termination.as_ref()
    }

    fn check_termination(&self) -> Option<Termination> {
        let s = &self.state;
        let finite = s.base_position.iter().all(|x| x.is_finite())
            && s.base_orientation.iter().all(|x| x.is_finite())
            && s.base_lin_vel.iter().all(|x| x.is_finite())
            && s.q.iter().all(|x| x.is_finite())
            && s.q_dot.iter().all(|x| x.is_finite())
            && self.cpg.is_finite();
        if !finite {
            return Some(Termination::Fault { time: self.time, message: "non-finite state".into() });
        }
        if s.base_position[2] < 0.5 * self.style.h {
            return Some(Termination::Fall { time: self.time, reason: FallReason::BaseHeight });
        }
        let rot = quat_from_array(s.base_orientation);
        let p = Vector3::from(s.base_position);
        for leg in Leg::ALL {
            let knee = p + rot * knee_in_base(&self.cfg.robot, leg, s.leg_q(leg));
            if knee.z < 0.0 {
                return Some(Termination::Fall { time: self.time, reason: FallReason::KneeContact });
            }
        }
        None
    }

    /// Snapshot as a log row; `gait` is the caller's index for the active gait.
    pub fn log_row(&self, gait: usize) -> LogRow {
        let s = &self.state;
        LogRow {
            t: self.time,
            base_pos: s.base_position,
            base_quat: s.base_orientation,
            base_lin_vel: s.base_lin_vel,
            base_ang_vel: s.base_ang_vel,
            q: s.q,
            q_dot: s.q_dot,
            tau: s.tau,
            cpg_r: self.cpg.r,
            cpg_r_dot: self.cpg.r_dot,
            cpg_theta: self.cpg.phases(),
            cpg_theta_dot: self.cpg.theta_dot,
            contacts: s.contacts,
            foot_pos: s.foot_positions,
            v_cmd: self.v_cmd,
            mu: self.action.mu,
            omega: self.action.omega,
            gait,
        }
    }
}
