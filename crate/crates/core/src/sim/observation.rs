//! Policy observation vector.
//!
//! Layout (63 values):
//!
//! | offset | len | content                                   |
//! |-------:|----:|-------------------------------------------|
//! | 0      | 1   | commanded forward velocity (m/s)          |
//! | 1      | 4   | base orientation quaternion (w, x, y, z)  |
//! | 5      | 3   | base linear velocity, base frame          |
//! | 8      | 3   | base angular velocity, base frame         |
//! | 11     | 12  | joint positions                           |
//! | 23     | 12  | joint velocities                          |
//! | 35     | 4   | foot contacts (0/1)                       |
//! | 39     | 8   | last action (μ×4, ω×4)                    |
//! | 47     | 4   | oscillator amplitudes r                   |
//! | 51     | 4   | amplitude rates ṙ                         |
//! | 55     | 4   | phases θ, wrapped to [0, 2π)              |
//! | 59     | 4   | phase rates θ̇                             |
//!
//! The active gait and the style parameters are deliberately absent.

use crate::cpg::OscillatorNetworkState;
use crate::leg::NUM_LEGS;
use crate::sim::robot::{RobotState, NUM_JOINTS};

pub const OBS_DIM: usize = 63;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub velocity_command: f64,
    pub base_orientation: [f64; 4],
    pub base_lin_vel: [f64; 3],
    pub base_ang_vel: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
    pub contacts: [bool; NUM_LEGS],
    pub last_action: [f64; 2 * NUM_LEGS],
    pub cpg: OscillatorNetworkState<f64>,
}

impl Observation {
    pub fn new(
        robot: &RobotState,
        cpg: &OscillatorNetworkState<f64>,
        velocity_command: f64,
        last_action: [f64; 2 * NUM_LEGS],
    ) -> Self {
        Observation {
            velocity_command,
            base_orientation: robot.base_orientation,
            base_lin_vel: robot.base_lin_vel,
            base_ang_vel: robot.base_ang_vel,
            q: robot.q,
            q_dot: robot.q_dot,
            contacts: robot.contacts,
            last_action,
            cpg: *cpg,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.push(self.velocity_command);
        v.extend_from_slice(&self.base_orientation);
        v.extend_from_slice(&self.base_lin_vel);
        v.extend_from_slice(&self.base_ang_vel);
        v.extend_from_slice(&self.q);
        v.extend_from_slice(&self.q_dot);
        v.extend(self.contacts.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        v.extend_from_slice(&self.last_action);
        v.extend_from_slice(&self.cpg.r);
        v.extend_from_slice(&self.cpg.r_dot);
        v.extend(self.cpg.phases());
        v.extend_from_slice(&self.cpg.theta_dot);
        debug_assert_eq!(v.len(), OBS_DIM);
        v
    }
}
