//! Kinematic tier. Joints track their targets with a rate-limited first-order
//! lag, stance feet near the ground are pinned in place, and the base pose is
//! fitted to the pinned feet.

use nalgebra::{Rotation2, UnitQuaternion, Vector2, Vector3};

use crate::kinematics::{ik, jacobian, jacobian_transpose_mul, JointAngles};
use crate::leg::{Leg, NUM_LEGS};
use crate::pattern::StyleParams;
use crate::scalar::wrap_to_pi;

use super::robot::{RobotState, GRAVITY, NUM_JOINTS};
use super::{foot_in_base, quat_to_array, SimConfig, StepInput};

#[derive(Clone, Debug)]
pub(crate) struct KinematicBody {
    pos: Vector3<f64>,
    yaw: f64,
    vel: Vector3<f64>,
    yaw_rate: f64,
    vz: f64,
    q: [f64; NUM_JOINTS],
    q_dot: [f64; NUM_JOINTS],
    tau: [f64; NUM_JOINTS],
    anchors: [Option<Vector3<f64>>; NUM_LEGS],
    ever_anchored: bool,
    coast: Vector2<f64>,
    coast_yaw_rate: f64,
    interval_start: Option<(f64, Vector3<f64>, f64)>,
}

fn leg_slice(a: &[f64; NUM_JOINTS], leg: Leg) -> [f64; 3] {
    let i = 3 * leg.index();
    [a[i], a[i + 1], a[i + 2]]
}

/// Rotation `yaw` and translation `t` minimizing `Σ|R·b_i + t − a_i|²`.
pub(crate) fn fit_planar(body: &[Vector2<f64>], world: &[Vector2<f64>]) -> (f64, Vector2<f64>) {
    let n = body.len() as f64;
    let bc = body.iter().sum::<Vector2<f64>>() / n;
    let ac = world.iter().sum::<Vector2<f64>>() / n;
    let (mut s, mut c) = (0.0, 0.0);
    for (b, a) in body.iter().zip(world) {
        let p = b - bc;
        let q = a - ac;
        s += p.x * q.y - p.y * q.x;
        c += p.x * q.x + p.y * q.y;
    }
    let yaw = s.atan2(c);
    (yaw, ac - Rotation2::new(yaw) * bc)
}

impl KinematicBody {
    pub(crate) fn placeholder() -> Self {
        KinematicBody {
            pos: Vector3::zeros(),
            yaw: 0.0,
            vel: Vector3::zeros(),
            yaw_rate: 0.0,
            vz: 0.0,
            q: [0.0; NUM_JOINTS],
            q_dot: [0.0; NUM_JOINTS],
            tau: [0.0; NUM_JOINTS],
            anchors: [None; NUM_LEGS],
            ever_anchored: false,
            coast: Vector2::zeros(),
            coast_yaw_rate: 0.0,
            interval_start: None,
        }
    }

    pub(crate) fn new(
        cfg: &SimConfig,
        q_des: &[f64; NUM_JOINTS],
        swing: [bool; NUM_LEGS],
        style: &StyleParams<f64>,
    ) -> Self {
        let mut b = Self::placeholder();
        b.pos = Vector3::new(0.0, 0.0, style.h);
        b.q = *q_des;
        for leg in Leg::ALL {
            if swing[leg.index()] {
                continue;
            }
            let f = b.pos + foot_in_base(&cfg.robot, leg, leg_slice(q_des, leg));
            if f.z <= cfg.kinematic.touchdown_window {
                b.anchors[leg.index()] = Some(Vector3::new(f.x, f.y, 0.0));
                b.ever_anchored = true;
            }
        }
        if b.ever_anchored {
            b.interval_start = Some((0.0, b.pos, 0.0));
        }
        b
    }

    fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(0.0, 0.0, self.yaw)
    }

    pub(crate) fn push(&mut self, dv: Vector2<f64>) {
        self.coast += dv;
    }

    pub(crate) fn snapshot(&self, cfg: &SimConfig) -> RobotState {
        let rot = self.rotation();
        let mut feet = [[0.0; 3]; NUM_LEGS];
        let mut contacts = [false; NUM_LEGS];
        for leg in Leg::ALL {
            let f = self.pos + rot * foot_in_base(&cfg.robot, leg, leg_slice(&self.q, leg));
            feet[leg.index()] = f.into();
            contacts[leg.index()] = f.z <= cfg.contact_threshold;
        }
        RobotState {
            base_position: self.pos.into(),
            base_orientation: quat_to_array(&rot),
            base_lin_vel: (rot.inverse() * self.vel).into(),
            base_ang_vel: [0.0, 0.0, self.yaw_rate],
            q: self.q,
            q_dot: self.q_dot,
            tau: self.tau,
            contacts,
            foot_positions: feet,
        }
    }

    pub(crate) fn step(&mut self, input: &StepInput) -> RobotState {
        let cfg = input.cfg;
        let robot = &cfg.robot;
        let dt = cfg.dt;
        let kp = &cfg.kinematic;
        let q_old = self.q;
        let q_dot_old = self.q_dot;
        let pos_old = self.pos;
        let yaw_old = self.yaw;

        let alpha = if kp.tracking_time_constant > 0.0 {
            1.0 - (-dt / kp.tracking_time_constant).exp()
        } else {
            1.0
        };
        let max_dq = robot.velocity_limit * dt;
        for leg in Leg::ALL {
            let i = 3 * leg.index();
            match input.locks[leg.index()] {
                Some(lock) => self.q[i..i + 3].copy_from_slice(&lock),
                None => {
                    for k in i..i + 3 {
                        let dq = ((input.q_des[k] - self.q[k]) * alpha).clamp(-max_dq, max_dq);
                        self.q[k] += dq;
                    }
                }
            }
        }

        let rot = self.rotation();
        for leg in Leg::ALL {
            let l = leg.index();
            if input.locks[l].is_some() || input.swing[l] {
                self.anchors[l] = None;
            } else if self.anchors[l].is_none() {
                let f = self.pos + rot * foot_in_base(robot, leg, leg_slice(&self.q, leg));
                if f.z <= kp.touchdown_window {
                    self.anchors[l] = Some(Vector3::new(f.x, f.y, 0.0));
                }
            }
        }

        let anchored: Vec<Leg> = Leg::ALL.into_iter().filter(|l| self.anchors[l.index()].is_some()).collect();
        if anchored.is_empty() {
            if let Some((t0, p0, y0)) = self.interval_start.take() {
                let span = input.time - t0;
                if span > 0.0 {
                    self.coast = (self.pos - p0).xy() / span;
                    self.coast_yaw_rate = wrap_to_pi(self.yaw - y0) / span;
                }
            }
            self.pos.x += self.coast.x * dt;
            self.pos.y += self.coast.y * dt;
            self.yaw = wrap_to_pi(self.yaw + self.coast_yaw_rate * dt);
            if !self.ever_anchored {
                self.vz -= GRAVITY * dt;
                self.pos.z += self.vz * dt;
            }
        } else {
            self.ever_anchored = true;
            self.vz = 0.0;
            if self.interval_start.is_none() {
                self.interval_start = Some((input.time, self.pos, self.yaw));
            }
            let body: Vec<Vector3<f64>> = anchored
                .iter()
                .map(|&l| foot_in_base(robot, l, leg_slice(input.q_des, l)))
                .collect();
            let world: Vec<Vector3<f64>> = anchored.iter().map(|l| self.anchors[l.index()].unwrap()).collect();
            let z_target = -body.iter().map(|b| b.z).sum::<f64>() / body.len() as f64;
            let (yaw_target, xy_target) = if anchored.len() >= 2 {
                let b2: Vec<Vector2<f64>> = body.iter().map(|b| b.xy()).collect();
                let a2: Vec<Vector2<f64>> = world.iter().map(|a| a.xy()).collect();
                fit_planar(&b2, &a2)
            } else {
                (self.yaw, world[0].xy() - Rotation2::new(self.yaw) * body[0].xy())
            };
            let beta = if kp.height_time_constant > 0.0 {
                1.0 - (-dt / kp.height_time_constant).exp()
            } else {
                1.0
            };
            self.pos.x = xy_target.x;
            self.pos.y = xy_target.y;
            self.pos.z += beta * (z_target - self.pos.z);
            self.yaw = yaw_target;

            let rot = self.rotation();
            for &leg in &anchored {
                let a = self.anchors[leg.index()].unwrap();
                let local = rot.inverse() * (a - self.pos) - robot.hip(leg);
                let sol = ik(&[local.x, local.y, local.z], &robot.leg_geometry(leg));
                let q = robot.joint_limits.clamp(sol.angles).to_array();
                let i = 3 * leg.index();
                self.q[i..i + 3].copy_from_slice(&q);
            }
        }

        self.vel = (self.pos - pos_old) / dt;
        self.yaw_rate = wrap_to_pi(self.yaw - yaw_old) / dt;
        for k in 0..NUM_JOINTS {
            self.q_dot[k] = (self.q[k] - q_old[k]) / dt;
        }

        let load = if anchored.is_empty() { 0.0 } else { input.mass * GRAVITY / anchored.len() as f64 };
        for leg in Leg::ALL {
            let l = leg.index();
            let i = 3 * l;
            let q = leg_slice(&self.q, leg);
            let hold = if self.anchors[l].is_some() {
                let j = jacobian(&JointAngles::from_array(q), &robot.leg_geometry(leg));
                jacobian_transpose_mul(&j, &[0.0, 0.0, load])
            } else {
                [0.0; 3]
            };
            for k in 0..3 {
                let acc = (self.q_dot[i + k] - q_dot_old[i + k]) / dt;
                let t = -hold[k] + robot.joint_inertia[k] * acc + robot.joint_damping * self.q_dot[i + k];
                self.tau[i + k] = t.clamp(-robot.torque_limit, robot.torque_limit);
            }
        }
        self.snapshot(cfg)
    }
}
