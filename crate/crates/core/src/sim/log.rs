//! Trajectory log and its columnar CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::leg::{Leg, NUM_LEGS};
use crate::sim::robot::NUM_JOINTS;

pub const LOG_SCHEMA: &str = "quadcpg-trajectory-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub base_pos: [f64; 3],
    pub base_quat: [f64; 4],
    pub base_lin_vel: [f64; 3],
    pub base_ang_vel: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub cpg_r: [f64; NUM_LEGS],
    pub cpg_r_dot: [f64; NUM_LEGS],
    pub cpg_theta: [f64; NUM_LEGS],
    pub cpg_theta_dot: [f64; NUM_LEGS],
    pub contacts: [bool; NUM_LEGS],
    pub foot_pos: [[f64; 3]; NUM_LEGS],
    pub v_cmd: f64,
    pub mu: [f64; NUM_LEGS],
    pub omega: [f64; NUM_LEGS],
    /// Index into [`TrajectoryLog::gaits`].
    pub gait: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    /// Time between consecutive rows (s).
    pub dt: f64,
    /// Names of gaits referenced by rows.
    pub gaits: Vec<String>,
    pub rows: Vec<LogRow>,
}

const JOINT_NAMES: [&str; 3] = ["abd", "thigh", "calf"];

impl TrajectoryLog {
    pub fn new(dt: f64) -> Self {
        TrajectoryLog {
            dt,
            gaits: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn gait_index(&mut self, name: &str) -> usize {
        match self.gaits.iter().position(|g| g == name) {
            Some(i) => i,
            None => {
                self.gaits.push(name.to_string());
                self.gaits.len() - 1
            }
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Rows with `t >= from`, sharing `dt` and gait names.
    pub fn window(&self, from: f64) -> TrajectoryLog {
        TrajectoryLog {
            dt: self.dt,
            gaits: self.gaits.clone(),
            rows: self.rows.iter().filter(|r| r.t >= from - 1e-9).cloned().collect(),
        }
    }

    /// Every `k`-th row, with `dt` scaled accordingly.
    pub fn decimate(&self, k: usize) -> TrajectoryLog {
        let k = k.max(1);
        TrajectoryLog {
            dt: self.dt * k as f64,
            gaits: self.gaits.clone(),
            rows: self.rows.iter().step_by(k).cloned().collect(),
        }
    }

    pub fn header() -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(["x", "y", "z"].map(|a| format!("base_{a}")));
        h.extend(["qw", "qx", "qy", "qz"].map(|a| format!("base_{a}")));
        h.extend(["vx", "vy", "vz"].map(|a| format!("base_{a}")));
        h.extend(["wx", "wy", "wz"].map(|a| format!("base_{a}")));
        for prefix in ["q", "dq", "tau"] {
            for leg in Leg::ALL {
                for j in JOINT_NAMES {
                    h.push(format!("{prefix}_{leg}_{j}"));
                }
            }
        }
        for prefix in ["r", "dr", "theta", "dtheta", "contact"] {
            for leg in Leg::ALL {
                h.push(format!("{prefix}_{leg}"));
            }
        }
        for leg in Leg::ALL {
            for a in ["x", "y", "z"] {
                h.push(format!("foot_{leg}_{a}"));
            }
        }
        h.push("v_cmd".into());
        for prefix in ["mu", "omega"] {
            for leg in Leg::ALL {
                h.push(format!("{prefix}_{leg}"));
            }
        }
        h.push("gait".into());
        h
    }

    /// Writes `# <schema> v<version> dt=<dt>` followed by a CSV table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# {LOG_SCHEMA} v{LOG_VERSION} dt={}", self.dt)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header())?;
        for r in &self.rows {
            let mut rec: Vec<String> = Vec::with_capacity(120);
            let mut put = |xs: &[f64]| rec.extend(xs.iter().map(|x| x.to_string()));
            put(&[r.t]);
            put(&r.base_pos);
            put(&r.base_quat);
            put(&r.base_lin_vel);
            put(&r.base_ang_vel);
            put(&r.q);
            put(&r.q_dot);
            put(&r.tau);
            put(&r.cpg_r);
            put(&r.cpg_r_dot);
            put(&r.cpg_theta);
            put(&r.cpg_theta_dot);
            put(&r.contacts.map(|c| if c { 1.0 } else { 0.0 }));
            for f in &r.foot_pos {
                put(f);
            }
            put(&[r.v_cmd]);
            put(&r.mu);
            put(&r.omega);
            rec.push(self.gaits.get(r.gait).cloned().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
