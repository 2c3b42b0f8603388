//! Gait metrics: cost of transport, base angular velocity, joint
//! acceleration, and the per-step tracking reward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sim::log::TrajectoryLog;
use crate::sim::robot::GRAVITY;

/// Control period the reward weights are expressed in (s).
pub const REWARD_DT: f64 = 0.01;

/// Displacements below this are treated as zero.
pub const MIN_DISPLACEMENT: f64 = 1e-6;

/// Quantities the reward is computed from, all in the base frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardInputs<T> {
    pub v_cmd: T,
    pub lin_vel: [T; 3],
    pub ang_vel: [T; 3],
    /// `τ·q̇` summed over joints (W).
    pub power: T,
}

/// `f(x) = exp(−‖x‖² / 0.25)`
#[inline]
pub fn tracking_kernel<T: Real>(x: T) -> T {
    (-(x * x) / T::lit(0.25)).exp()
}

/// Sum of the four reward terms for one control step of length `dt`.
pub fn reward<T: Real>(inp: &RewardInputs<T>, dt: T) -> T {
    let [vx, vy, vz] = inp.lin_vel;
    let [wx, wy, wz] = inp.ang_vel;
    T::lit(3.0) * dt * tracking_kernel(inp.v_cmd - vx)
        - T::lit(2.0) * dt * (vy * vy + vz * vz)
        - T::lit(0.1) * dt * (wx * wx + wy * wy + wz * wz)
        - T::lit(0.001) * dt * inp.power.abs()
}

/// `E / (m·g·d)`. Undefined (error) without forward displacement.
pub fn cost_of_transport<T: Real>(energy: T, mass: T, distance: T) -> Result<T> {
    if !(distance > T::lit(MIN_DISPLACEMENT)) {
        return Err(Error::ZeroDisplacement);
    }
    Ok(energy / (mass * T::lit(GRAVITY) * distance))
}

/// Per-episode summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `None` when the base made no forward progress.
    pub cot: Option<f64>,
    /// Mean of `|ω_x| + |ω_y| + |ω_z|` (rad/s).
    pub mean_ang_vel: f64,
    /// Mean absolute joint acceleration (rad/s²).
    pub mean_joint_acc: f64,
    /// Forward displacement over duration (m/s).
    pub mean_vx: f64,
    /// Mean of `Σ_j |τ_j·q̇_j|` (W).
    pub mean_power: f64,
    /// Forward distance (m), never negative.
    pub distance: f64,
    pub duration: f64,
}

/// `Σ_t Σ_j |τ_j·q̇_j|·dt` over the log's intervals.
pub fn mechanical_energy(log: &TrajectoryLog) -> f64 {
    log.rows
        .iter()
        .skip(1)
        .map(|r| r.tau.iter().zip(&r.q_dot).map(|(t, w)| (t * w).abs()).sum::<f64>())
        .sum::<f64>()
        * log.dt
}

pub fn forward_displacement(log: &TrajectoryLog) -> f64 {
    match (log.rows.first(), log.rows.last()) {
        (Some(a), Some(b)) => b.base_pos[0] - a.base_pos[0],
        _ => 0.0,
    }
}

pub fn cot_from_log(log: &TrajectoryLog, mass: f64) -> Result<f64> {
    if log.duration() <= 0.0 {
        return Err(Error::InsufficientData("log spans no time".into()));
    }
    cost_of_transport(mechanical_energy(log), mass, forward_displacement(log))
}

/// Mean absolute joint acceleration from central differences of `q̇`.
pub fn mean_joint_acc(log: &TrajectoryLog) -> f64 {
    let rows = &log.rows;
    if rows.len() < 3 || log.dt <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 1..rows.len() - 1 {
        for j in 0..rows[k].q_dot.len() {
            sum += ((rows[k + 1].q_dot[j] - rows[k - 1].q_dot[j]) / (2.0 * log.dt)).abs();
            n += 1;
        }
    }
    sum / n as f64
}

pub fn mean_ang_vel(log: &TrajectoryLog) -> f64 {
    if log.rows.is_empty() {
        return 0.0;
    }
    log.rows
        .iter()
        .map(|r| r.base_ang_vel.iter().map(|w| w.abs()).sum::<f64>())
        .sum::<f64>()
        / log.rows.len() as f64
}

pub fn compute_metrics(log: &TrajectoryLog, mass: f64) -> MetricsRecord {
    let duration = log.duration();
    let energy = mechanical_energy(log);
    let dx = forward_displacement(log);
    let (mean_vx, mean_power) = if duration > 0.0 {
        (dx / duration, energy / duration)
    } else {
        (0.0, 0.0)
    };
    MetricsRecord {
        cot: cost_of_transport(energy, mass, dx).ok().filter(|_| duration > 0.0),
        mean_ang_vel: mean_ang_vel(log),
        mean_joint_acc: mean_joint_acc(log),
        mean_vx,
        mean_power,
        distance: dx.max(0.0),
        duration,
    }
}

/// Joint-acceleration residuals: for every velocity bin, each gait's value
/// minus the mean over all gaits in that bin.
///
/// Input is `(velocity, [(gait, mean_joint_acc)])` per bin; output maps each
/// gait to its `(velocity, residual)` series in input order.
pub fn joint_acc_residuals<T: Real>(
    bins: &[(T, Vec<(String, T)>)],
) -> Result<BTreeMap<String, Vec<(T, T)>>> {
    let mut out: BTreeMap<String, Vec<(T, T)>> = BTreeMap::new();
    for (v, entries) in bins {
        if entries.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "velocity bin {v} has {} gait(s); residuals need at least 2",
                entries.len()
            )));
        }
        let mean = entries.iter().map(|(_, a)| *a).sum::<T>() / T::from_usize(entries.len()).unwrap();
        for (g, a) in entries {
            out.entry(g.clone()).or_default().push((*v, *a - mean));
        }
    }
    Ok(out)
}
