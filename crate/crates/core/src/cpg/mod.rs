//! Rhythm generator: four amplitude-controlled phase oscillators, one per
//! leg, coupled through a gait's phase-bias matrix.
//!
//! ```text
//! r̈_i = a·(a/4·(μ_i − r_i) − ṙ_i)
//! θ̇_i = 2π·ω_i + Σ_j r_j·w_ij·sin(θ_j − θ_i − φ_ij)
//! ```

mod gait;

pub use gait::{
    all_to_all_mask, custom_gait, gait_library, library_gait, GaitEntry, GaitFile, GaitLibrary,
    GaitMatrix, GaitName, Matrix4, GAIT_FILE_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leg::NUM_LEGS;
use crate::scalar::{angle_distance, wrap_to_2pi, Real};

pub const MU_MIN: f64 = 1.0;
pub const MU_MAX: f64 = 2.0;
pub const OMEGA_MIN_HZ: f64 = 0.0;
pub const OMEGA_MAX_HZ: f64 = 8.0;

/// Amplitudes, phases and their rates for the four oscillators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorNetworkState<T> {
    pub r: [T; NUM_LEGS],
    pub r_dot: [T; NUM_LEGS],
    /// Unwrapped phase (rad).
    pub theta: [T; NUM_LEGS],
    pub theta_dot: [T; NUM_LEGS],
}

impl<T: Real> OscillatorNetworkState<T> {
    pub fn new(r: [T; NUM_LEGS], theta: [T; NUM_LEGS]) -> Self {
        OscillatorNetworkState {
            r,
            r_dot: [T::zero(); NUM_LEGS],
            theta,
            theta_dot: [T::zero(); NUM_LEGS],
        }
    }

    /// Unit amplitude at rest, phases at the gait's locked pattern shifted
    /// by `noise`.
    pub fn at_gait(gait: &GaitMatrix<T>, noise: [T; NUM_LEGS]) -> Self {
        let locked = gait.locked_phases(T::zero());
        let mut theta = [T::zero(); NUM_LEGS];
        for i in 0..NUM_LEGS {
            theta[i] = locked[i] + noise[i];
        }
        Self::new([T::one(); NUM_LEGS], theta)
    }

    /// Reported phase of leg `i`, in `[0, 2π)`.
    #[inline]
    pub fn phase(&self, i: usize) -> T {
        wrap_to_2pi(self.theta[i])
    }

    pub fn phases(&self) -> [T; NUM_LEGS] {
        self.theta.map(wrap_to_2pi)
    }

    pub fn is_finite(&self) -> bool {
        self.r
            .iter()
            .chain(&self.r_dot)
            .chain(&self.theta)
            .chain(&self.theta_dot)
            .all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpgConfig<T> {
    /// Convergence factor `a` (1/s).
    pub convergence: T,
    /// Coupling weight `w`, scaled per pair by the gait's weight mask.
    pub coupling_weight: T,
    /// Integration step (s).
    pub dt: T,
    /// Commanded ω is in Hz and contributes 2π·ω to θ̇. When false ω is rad/s.
    pub omega_is_hz: bool,
    pub integrator: Integrator,
}

impl<T: Real> Default for CpgConfig<T> {
    fn default() -> Self {
        CpgConfig {
            convergence: T::lit(50.0),
            coupling_weight: T::lit(10.0),
            dt: T::lit(0.001),
            omega_is_hz: true,
            integrator: Integrator::Rk4,
        }
    }
}

impl<T: Real> CpgConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "convergence factor must be > 0, got {}",
                self.convergence
            )));
        }
        if !(self.coupling_weight >= T::zero()) {
            return Err(Error::InvalidConfig("coupling weight must be >= 0".into()));
        }
        if !(self.dt > T::zero() && self.dt <= T::lit(0.002)) {
            return Err(Error::InvalidConfig(format!(
                "integration step must be in (0, 0.002] s, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Intrinsic amplitude and frequency (Hz) per leg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationCommand<T> {
    pub mu: [T; NUM_LEGS],
    pub omega: [T; NUM_LEGS],
}

impl<T: Real> ModulationCommand<T> {
    pub fn uniform(mu: T, omega: T) -> Self {
        ModulationCommand {
            mu: [mu; NUM_LEGS],
            omega: [omega; NUM_LEGS],
        }
    }

    /// Clamps into μ ∈ [1, 2], ω ∈ [0, 8] Hz. NaN maps to the lower bound.
    pub fn clamped(&self) -> Self {
        let clamp = |x: T, lo: f64, hi: f64| {
            let (lo, hi) = (T::lit(lo), T::lit(hi));
            if x.is_nan() {
                lo
            } else {
                x.max(lo).min(hi)
            }
        };
        ModulationCommand {
            mu: self.mu.map(|m| clamp(m, MU_MIN, MU_MAX)),
            omega: self.omega.map(|w| clamp(w, OMEGA_MIN_HZ, OMEGA_MAX_HZ)),
        }
    }

    pub fn in_range(&self) -> bool {
        self.mu.iter().all(|&m| m >= T::lit(MU_MIN) && m <= T::lit(MU_MAX))
            && self
                .omega
                .iter()
                .all(|&w| w >= T::lit(OMEGA_MIN_HZ) && w <= T::lit(OMEGA_MAX_HZ))
    }

    /// Flattened as `[μ_FR, μ_FL, μ_HR, μ_HL, ω_FR, …]`.
    pub fn to_array(&self) -> [T; 2 * NUM_LEGS] {
        let mut a = [T::zero(); 2 * NUM_LEGS];
        a[..NUM_LEGS].copy_from_slice(&self.mu);
        a[NUM_LEGS..].copy_from_slice(&self.omega);
        a
    }
}

/// Coupling contribution to θ̇_i: `Σ_j r_j·w_ij·sin(θ_j − θ_i − φ_ij)`.
pub fn coupling_term<T: Real>(
    r: &[T; NUM_LEGS],
    theta: &[T; NUM_LEGS],
    gait: &GaitMatrix<T>,
    weight: T,
    i: usize,
) -> T {
    (0..NUM_LEGS)
        .filter(|&j| j != i)
        .map(|j| {
            r[j] * weight * gait.weight_mask[i][j] * (theta[j] - theta[i] - gait.phi[i][j]).sin()
        })
        .sum()
}

#[derive(Clone, Copy)]
struct Deriv<T> {
    dr: [T; NUM_LEGS],
    dr_dot: [T; NUM_LEGS],
    dtheta: [T; NUM_LEGS],
}

fn derivative<T: Real>(
    r: &[T; NUM_LEGS],
    r_dot: &[T; NUM_LEGS],
    theta: &[T; NUM_LEGS],
    mu: &[T; NUM_LEGS],
    omega_rad: &[T; NUM_LEGS],
    gait: &GaitMatrix<T>,
    cfg: &CpgConfig<T>,
) -> Deriv<T> {
    let a = cfg.convergence;
    let quarter = T::lit(0.25);
    let mut d = Deriv {
        dr: *r_dot,
        dr_dot: [T::zero(); NUM_LEGS],
        dtheta: [T::zero(); NUM_LEGS],
    };
    for i in 0..NUM_LEGS {
        d.dr_dot[i] = a * (a * quarter * (mu[i] - r[i]) - r_dot[i]);
        d.dtheta[i] = omega_rad[i] + coupling_term(r, theta, gait, cfg.coupling_weight, i);
    }
    d
}

fn axpy<T: Real>(x: &[T; NUM_LEGS], h: T, d: &[T; NUM_LEGS]) -> [T; NUM_LEGS] {
    let mut out = *x;
    for i in 0..NUM_LEGS {
        out[i] += h * d[i];
    }
    out
}

/// Advances the network by one integration step.
///
/// The command is clamped into range. Non-finite input state is reported as
/// [`Error::Divergence`].
pub fn step<T: Real>(
    state: &OscillatorNetworkState<T>,
    cmd: &ModulationCommand<T>,
    gait: &GaitMatrix<T>,
    cfg: &CpgConfig<T>,
) -> Result<OscillatorNetworkState<T>> {
    if !state.is_finite() {
        return Err(Error::Divergence("non-finite oscillator state".into()));
    }
    let cmd = cmd.clamped();
    let scale = if cfg.omega_is_hz { T::TAU() } else { T::one() };
    let omega_rad = cmd.omega.map(|w| w * scale);
    let mu = &cmd.mu;
    let h = cfg.dt;
    let f = |r: &[T; NUM_LEGS], rd: &[T; NUM_LEGS], th: &[T; NUM_LEGS]| {
        derivative(r, rd, th, mu, &omega_rad, gait, cfg)
    };

    let (r, r_dot, theta) = match cfg.integrator {
        Integrator::Euler => {
            let k = f(&state.r, &state.r_dot, &state.theta);
            (
                axpy(&state.r, h, &k.dr),
                axpy(&state.r_dot, h, &k.dr_dot),
                axpy(&state.theta, h, &k.dtheta),
            )
        }
        Integrator::Rk4 => {
            let half = h * T::lit(0.5);
            let k1 = f(&state.r, &state.r_dot, &state.theta);
            let k2 = f(
                &axpy(&state.r, half, &k1.dr),
                &axpy(&state.r_dot, half, &k1.dr_dot),
                &axpy(&state.theta, half, &k1.dtheta),
            );
            let k3 = f(
                &axpy(&state.r, half, &k2.dr),
                &axpy(&state.r_dot, half, &k2.dr_dot),
                &axpy(&state.theta, half, &k2.dtheta),
            );
            let k4 = f(
                &axpy(&state.r, h, &k3.dr),
                &axpy(&state.r_dot, h, &k3.dr_dot),
                &axpy(&state.theta, h, &k3.dtheta),
            );
            let sixth = h / T::lit(6.0);
            let two = T::lit(2.0);
            let mut r = state.r;
            let mut r_dot = state.r_dot;
            let mut theta = state.theta;
            for i in 0..NUM_LEGS {
                r[i] += sixth * (k1.dr[i] + two * k2.dr[i] + two * k3.dr[i] + k4.dr[i]);
                r_dot[i] +=
                    sixth * (k1.dr_dot[i] + two * k2.dr_dot[i] + two * k3.dr_dot[i] + k4.dr_dot[i]);
                theta[i] += sixth
                    * (k1.dtheta[i] + two * k2.dtheta[i] + two * k3.dtheta[i] + k4.dtheta[i]);
            }
            (r, r_dot, theta)
        }
    };
    let theta_dot = f(&r, &r_dot, &theta).dtheta;
    let next = OscillatorNetworkState {
        r,
        r_dot,
        theta,
        theta_dot,
    };
    if !next.is_finite() {
        return Err(Error::Divergence("oscillator state became non-finite".into()));
    }
    Ok(next)
}

/// Largest deviation, over leg pairs, between the measured phase offset
/// `θ_j − θ_i` and the gait's bias `φ_ij`. Zero when perfectly locked.
pub fn phase_error<T: Real>(state: &OscillatorNetworkState<T>, gait: &GaitMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..NUM_LEGS {
        for j in (i + 1)..NUM_LEGS {
            let e = angle_distance(state.theta[j] - state.theta[i], gait.phi[i][j]);
            worst = worst.max(e);
        }
    }
    worst
}
