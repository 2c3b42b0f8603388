//! Dynamic tier: a single rigid trunk on massless-linkage legs with
//! reflected joint inertia, PD joint control and compliant ground contact.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};

use crate::kinematics::{jacobian, jacobian_mul, jacobian_transpose_mul, JointAngles};
use crate::leg::{Leg, NUM_LEGS};
use crate::pattern::StyleParams;

use super::robot::{RobotState, GRAVITY, NUM_JOINTS};
use super::{foot_in_base, quat_to_array, ContactParams, SimConfig, StepInput};

#[derive(Clone, Debug)]
pub(crate) struct DynamicBody {
    pos: Vector3<f64>,
    rot: UnitQuaternion<f64>,
    /// World frame.
    vel: Vector3<f64>,
    /// Base frame.
    omega: Vector3<f64>,
    q: [f64; NUM_JOINTS],
    q_dot: [f64; NUM_JOINTS],
    tau: [f64; NUM_JOINTS],
    stick: [Option<Vector2<f64>>; NUM_LEGS],
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
}

/// Ground reaction on a foot, with which damping terms are active (linear in
/// the foot velocity).
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Contact {
    pub force: Vector3<f64>,
    pub normal_active: bool,
    pub sticking: bool,
}

/// Ground reaction on a foot at `p` moving with `v` (world frame). `stick`
/// is the tangential spring anchor, set at touchdown and dragged along while
/// the foot slides.
pub(crate) fn contact_force(
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    stick: &mut Option<Vector2<f64>>,
    c: &ContactParams,
) -> Contact {
    if p.z >= 0.0 {
        *stick = None;
        return Contact { force: Vector3::zeros(), normal_active: false, sticking: false };
    }
    let raw = -c.stiffness * p.z - c.damping * v.z;
    let normal = raw.max(0.0);
    let anchor = *stick.get_or_insert(p.xy());
    let mut ft = -c.tangential_stiffness * (p.xy() - anchor) - c.tangential_damping * v.xy();
    let cap = c.friction * normal;
    let mag = ft.norm();
    let sticking = mag <= cap;
    if !sticking {
        ft = if mag > 0.0 { ft * (cap / mag) } else { Vector2::zeros() };
        *stick = Some(if c.tangential_stiffness > 0.0 {
            p.xy() + ft / c.tangential_stiffness
        } else {
            p.xy()
        });
    }
    Contact { force: Vector3::new(ft.x, ft.y, normal), normal_active: raw > 0.0, sticking }
}

fn leg_slice(a: &[f64; NUM_JOINTS], leg: Leg) -> [f64; 3] {
    let i = 3 * leg.index();
    [a[i], a[i + 1], a[i + 2]]
}

impl DynamicBody {
    pub(crate) fn new(cfg: &SimConfig, q_des: &[f64; NUM_JOINTS], style: &StyleParams<f64>) -> Self {
        let inertia = cfg.robot.lumped_inertia(&cfg.mass_scales, cfg.added_base_mass, style.h);
        let inertia_inv = inertia.try_inverse().unwrap_or_else(Matrix3::identity);
        DynamicBody {
            pos: Vector3::new(0.0, 0.0, style.h),
            rot: UnitQuaternion::identity(),
            vel: Vector3::zeros(),
            omega: Vector3::zeros(),
            q: *q_des,
            q_dot: [0.0; NUM_JOINTS],
            tau: [0.0; NUM_JOINTS],
            stick: [None; NUM_LEGS],
            inertia,
            inertia_inv,
        }
    }

    pub(crate) fn push(&mut self, dv: Vector2<f64>) {
        self.vel.x += dv.x;
        self.vel.y += dv.y;
    }

    pub(crate) fn snapshot(&self, cfg: &SimConfig) -> RobotState {
        let mut feet = [[0.0; 3]; NUM_LEGS];
        let mut contacts = [false; NUM_LEGS];
        for leg in Leg::ALL {
            let f = self.pos + self.rot * foot_in_base(&cfg.robot, leg, leg_slice(&self.q, leg));
            feet[leg.index()] = f.into();
            contacts[leg.index()] = f.z <= cfg.contact_threshold;
        }
        RobotState {
            base_position: self.pos.into(),
            base_orientation: quat_to_array(&self.rot),
            base_lin_vel: (self.rot.inverse() * self.vel).into(),
            base_ang_vel: self.omega.into(),
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
        let mass = input.mass;

        let mut force = Vector3::new(0.0, 0.0, -mass * GRAVITY);
        let mut torque = Vector3::zeros();
        let mut q_ddot = [0.0; NUM_JOINTS];
        for leg in Leg::ALL {
            let l = leg.index();
            let i = 3 * l;
            let q = leg_slice(&self.q, leg);
            let qd = leg_slice(&self.q_dot, leg);
            let geom = robot.leg_geometry(leg);
            let j = jacobian(&JointAngles::from_array(q), &geom);
            let b = foot_in_base(robot, leg, q);
            let v_local = Vector3::from(jacobian_mul(&j, &qd));
            let p_w = self.pos + self.rot * b;
            let v_w = self.vel + self.rot * (self.omega.cross(&b) + v_local);
            let contact = contact_force(&p_w, &v_w, &mut self.stick[l], &cfg.contact);
            let f_w = contact.force;
            let f_b = self.rot.inverse() * f_w;
            force += f_w;
            torque += b.cross(&f_b);
            let gen = jacobian_transpose_mul(&j, &[f_b.x, f_b.y, f_b.z]);

            if input.locks[l].is_some() {
                for k in 0..3 {
                    self.tau[i + k] = (-gen[k]).clamp(-robot.torque_limit, robot.torque_limit);
                }
                continue;
            }

            // Damping terms are integrated implicitly: joint damping, the
            // derivative gain and the contact dampers seen through J.
            let jm = Matrix3::from_row_slice(&[
                j[0][0], j[0][1], j[0][2], j[1][0], j[1][1], j[1][2], j[2][0], j[2][1], j[2][2],
            ]);
            let ct = if contact.sticking { cfg.contact.tangential_damping } else { 0.0 };
            let cn = if contact.normal_active { cfg.contact.damping } else { 0.0 };
            let d_w = Matrix3::from_diagonal(&Vector3::new(ct, ct, cn));
            let r = self.rot.to_rotation_matrix();
            let d_b = r.transpose() * d_w * r.matrix();
            let mut a = jm.transpose() * d_b * jm;
            let mut rhs = Vector3::zeros();
            for k in 0..3 {
                let raw = cfg.kp * (input.q_des[i + k] - q[k]) - cfg.kd * qd[k];
                let t = raw.clamp(-robot.torque_limit, robot.torque_limit);
                self.tau[i + k] = t;
                let kd = if raw == t { cfg.kd } else { 0.0 };
                a[(k, k)] += robot.joint_inertia[k] / dt + kd + robot.joint_damping;
                rhs[k] = robot.joint_inertia[k] / dt * qd[k] + t + gen[k] + kd * qd[k];
            }
            rhs += jm.transpose() * d_b * jm * Vector3::from(qd);
            let qd_new = a.lu().solve(&rhs).unwrap_or_else(|| Vector3::from(qd));
            for k in 0..3 {
                q_ddot[i + k] = (qd_new[k] - qd[k]) / dt;
            }
        }

        self.vel += force / mass * dt;
        let gyro = self.omega.cross(&(self.inertia * self.omega));
        self.omega += self.inertia_inv * (torque - gyro) * dt;
        self.pos += self.vel * dt;
        self.rot *= UnitQuaternion::from_scaled_axis(self.omega * dt);

        let lim = &robot.joint_limits;
        for leg in Leg::ALL {
            let l = leg.index();
            let i = 3 * l;
            if let Some(lock) = input.locks[l] {
                self.q[i..i + 3].copy_from_slice(&lock);
                self.q_dot[i..i + 3].fill(0.0);
                continue;
            }
            for k in 0..3 {
                let mut w = self.q_dot[i + k] + q_ddot[i + k] * dt;
                w = w.clamp(-robot.velocity_limit, robot.velocity_limit);
                let mut q = self.q[i + k] + w * dt;
                if q < lim.lower[k] || q > lim.upper[k] {
                    q = q.clamp(lim.lower[k], lim.upper[k]);
                    w = 0.0;
                }
                self.q[i + k] = q;
                self.q_dot[i + k] = w;
            }
        }
        self.snapshot(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contact_is_zero_above_ground() {
        let mut s = Some(Vector2::new(1.0, 1.0));
        let f = contact_force(&Vector3::new(0.0, 0.0, 0.01), &Vector3::zeros(), &mut s, &ContactParams::default()).force;
        assert_eq!(f, Vector3::zeros());
        assert!(s.is_none());
    }

    #[test]
    fn contact_normal_spring_damper() {
        let c = ContactParams::default();
        let mut s = None;
        let f = contact_force(&Vector3::new(0.0, 0.0, -0.002), &Vector3::new(0.0, 0.0, -0.1), &mut s, &c).force;
        assert!((f.z - (1e4 * 0.002 + 300.0 * 0.1)).abs() < 1e-9);
        assert_eq!(s, Some(Vector2::zeros()));
        // pulling out of the ground never yields adhesion
        let f = contact_force(&Vector3::new(0.0, 0.0, -0.001), &Vector3::new(0.0, 0.0, 1.0), &mut s, &c).force;
        assert_eq!(f.z, 0.0);
    }

    #[test]
    fn friction_cone_respected_and_anchor_slides() {
        let c = ContactParams { friction: 0.5, ..ContactParams::default() };
        let mut s = Some(Vector2::zeros());
        let p = Vector3::new(0.05, 0.0, -0.003);
        let f = contact_force(&p, &Vector3::zeros(), &mut s, &c).force;
        let ft = (f.x * f.x + f.y * f.y).sqrt();
        assert!((ft - 0.5 * f.z).abs() < 1e-9);
        assert!(f.x < 0.0);
        // re-evaluating at the slid anchor gives exactly the capped force
        let f2 = contact_force(&p, &Vector3::zeros(), &mut s, &c).force;
        assert!((f2 - f).norm() < 1e-9);
    }

    #[test]
    fn stiction_below_cap() {
        let c = ContactParams::default();
        let mut s = Some(Vector2::zeros());
        let f = contact_force(&Vector3::new(0.0001, 0.0, -0.003), &Vector3::zeros(), &mut s, &c).force;
        assert!((f.x + 1.0).abs() < 1e-9);
        assert_eq!(s, Some(Vector2::zeros()));
    }
}
