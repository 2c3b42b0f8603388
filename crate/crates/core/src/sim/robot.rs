//! Robot description (geometry file) and the exported robot state.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointLimits, LegGeometry, Side};
use crate::leg::{Leg, NUM_LEGS};

pub const NUM_JOINTS: usize = 3 * NUM_LEGS;
/// Trunk plus hip, thigh and calf links of each leg.
pub const NUM_LINKS: usize = 1 + NUM_JOINTS;
pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMasses {
    pub trunk: f64,
    pub hip: f64,
    pub thigh: f64,
    pub calf: f64,
}

/// Link lengths, hip placement, limits and mass properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotModel {
    /// Hip joint positions in the body frame, FR FL HR HL.
    pub hip_positions: [[f64; 3]; NUM_LEGS],
    pub l_abd: f64,
    pub l_thigh: f64,
    pub l_calf: f64,
    pub joint_limits: JointLimits<f64>,
    /// N·m
    pub torque_limit: f64,
    /// rad/s
    pub velocity_limit: f64,
    pub masses: LinkMasses,
    /// Principal trunk inertia (kg·m²), legs excluded.
    pub trunk_inertia: [f64; 3],
    /// Reflected inertia seen by the abd, thigh and calf joints (kg·m²).
    pub joint_inertia: [f64; 3],
    /// Viscous joint friction (N·m·s/rad).
    pub joint_damping: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::go1()
    }
}

impl RobotModel {
    pub fn go1() -> Self {
        let (hx, hy) = (0.1881, 0.04675);
        RobotModel {
            hip_positions: [[hx, -hy, 0.0], [hx, hy, 0.0], [-hx, -hy, 0.0], [-hx, hy, 0.0]],
            l_abd: 0.08,
            l_thigh: 0.213,
            l_calf: 0.213,
            joint_limits: JointLimits::go1(),
            torque_limit: 23.7,
            velocity_limit: 30.0,
            masses: LinkMasses {
                trunk: 5.204,
                hip: 0.68,
                thigh: 1.009,
                calf: 0.196,
            },
            trunk_inertia: [0.0168, 0.063, 0.0717],
            joint_inertia: [0.03, 0.035, 0.015],
            joint_damping: 0.05,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RobotModel = toml::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for leg in Leg::ALL {
            self.leg_geometry(leg).validate()?;
        }
        let positive = [
            self.torque_limit,
            self.velocity_limit,
            self.masses.trunk,
            self.joint_inertia[0],
            self.joint_inertia[1],
            self.joint_inertia[2],
        ];
        if positive.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidConfig(
                "torque/velocity limits, trunk mass and joint inertia must be > 0".into(),
            ));
        }
        let m = &self.masses;
        if [m.hip, m.thigh, m.calf].iter().any(|&x| x < 0.0) || self.joint_damping < 0.0 {
            return Err(Error::InvalidConfig("link masses and damping must be >= 0".into()));
        }
        for k in 0..3 {
            if self.joint_limits.lower[k] >= self.joint_limits.upper[k] {
                return Err(Error::InvalidConfig("joint limit lower >= upper".into()));
            }
        }
        Ok(())
    }

    pub fn leg_geometry(&self, leg: Leg) -> LegGeometry<f64> {
        LegGeometry {
            l_abd: self.l_abd,
            l_thigh: self.l_thigh,
            l_calf: self.l_calf,
            side: Side::of(leg),
        }
    }

    pub fn hip(&self, leg: Leg) -> Vector3<f64> {
        Vector3::from(self.hip_positions[leg.index()])
    }

    /// Per-link masses after applying scale factors, trunk first then
    /// (hip, thigh, calf) per leg.
    pub fn link_masses(&self, scales: &[f64; NUM_LINKS]) -> [f64; NUM_LINKS] {
        let mut out = [0.0; NUM_LINKS];
        out[0] = self.masses.trunk * scales[0];
        for l in 0..NUM_LEGS {
            out[1 + 3 * l] = self.masses.hip * scales[1 + 3 * l];
            out[2 + 3 * l] = self.masses.thigh * scales[2 + 3 * l];
            out[3 + 3 * l] = self.masses.calf * scales[3 + 3 * l];
        }
        out
    }

    pub fn total_mass(&self, scales: &[f64; NUM_LINKS], added_base_mass: f64) -> f64 {
        self.link_masses(scales).iter().sum::<f64>() + added_base_mass
    }

    /// Inertia of the trunk with leg masses lumped at points under the hips
    /// (standing at `nominal_height`).
    pub fn lumped_inertia(
        &self,
        scales: &[f64; NUM_LINKS],
        added_base_mass: f64,
        nominal_height: f64,
    ) -> Matrix3<f64> {
        let masses = self.link_masses(scales);
        let trunk_scale = (masses[0] + added_base_mass) / self.masses.trunk;
        let mut inertia = Matrix3::from_diagonal(&Vector3::from(self.trunk_inertia)) * trunk_scale;
        for leg in Leg::ALL {
            let l = leg.index();
            let m = masses[1 + 3 * l] + masses[2 + 3 * l] + masses[3 + 3 * l];
            let side = if leg.is_left() { 1.0 } else { -1.0 };
            let r = self.hip(leg) + Vector3::new(0.0, side * 0.5 * self.l_abd, -0.3 * nominal_height);
            inertia += (Matrix3::identity() * r.norm_squared() - r * r.transpose()) * m;
        }
        inertia
    }
}

/// Snapshot of the robot exported to observers, logs and telemetry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// World frame (m).
    pub base_position: [f64; 3],
    /// Body→world rotation as (w, x, y, z).
    pub base_orientation: [f64; 4],
    /// Base frame (m/s).
    pub base_lin_vel: [f64; 3],
    /// Base frame (rad/s).
    pub base_ang_vel: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub contacts: [bool; NUM_LEGS],
    /// World frame (m).
    pub foot_positions: [[f64; 3]; NUM_LEGS],
}

impl RobotState {
    pub fn leg_q(&self, leg: Leg) -> [f64; 3] {
        let i = 3 * leg.index();
        [self.q[i], self.q[i + 1], self.q[i + 2]]
    }

    /// Mechanical power summed per joint, `Σ|τ_j·q̇_j|`.
    pub fn abs_power(&self) -> f64 {
        self.tau.iter().zip(&self.q_dot).map(|(t, w)| (t * w).abs()).sum()
    }

    /// `τ·q̇` over all joints.
    pub fn power(&self) -> f64 {
        self.tau.iter().zip(&self.q_dot).map(|(t, w)| t * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn go1_mass_and_file_round_trip() {
        let m = RobotModel::go1();
        m.validate().unwrap();
        let total = m.total_mass(&[1.0; NUM_LINKS], 0.0);
        assert!((total - (5.204 + 4.0 * (0.68 + 1.009 + 0.196))).abs() < 1e-12);
        let text = toml::to_string(&m).unwrap();
        let back: RobotModel = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn lumped_inertia_is_symmetric_positive() {
        let m = RobotModel::go1();
        let i = m.lumped_inertia(&[1.0; NUM_LINKS], 2.0, 0.3);
        assert!((i - i.transpose()).norm() < 1e-12);
        let eig = i.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > 0.0));
    }
}
