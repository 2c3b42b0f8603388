//! Pattern formation: oscillator state → desired foot position in each hip
//! frame, shaped by the gait style.

use serde::{Deserialize, Serialize};

use crate::cpg::OscillatorNetworkState;
use crate::error::{Error, Result};
use crate::leg::{Leg, NUM_LEGS};
use crate::scalar::{wrap_to_2pi, Real};

pub const H_RANGE: (f64, f64) = (0.18, 0.35);
pub const GC_RANGE: (f64, f64) = (0.02, 0.12);
pub const GP_RANGE: (f64, f64) = (0.0, 0.015);
pub const XOFF_RANGE: (f64, f64) = (-0.08, 0.03);

/// Gait style: posture and foot trajectory shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct StyleParams<T> {
    /// Body height (m).
    pub h: T,
    /// Max swing ground clearance (m).
    pub g_c: T,
    /// Max stance ground penetration (m).
    pub g_p: T,
    /// Foot x-offset from the hip (m).
    pub x_off: T,
    /// Max step length (m).
    #[serde(default = "default_d_step")]
    pub d_step: T,
}

fn default_d_step<T: Real>() -> T {
    T::lit(0.2)
}

impl<T: Real> Default for StyleParams<T> {
    fn default() -> Self {
        StyleParams {
            h: T::lit(0.3),
            g_c: T::lit(0.05),
            g_p: T::lit(0.01),
            x_off: T::zero(),
            d_step: default_d_step(),
        }
    }
}

fn check<T: Real>(name: &str, v: T, (lo, hi): (f64, f64)) -> Result<()> {
    // small slack so grid values written as decimals are not rejected
    let eps = 1e-12;
    let x = v.to_f64_lossy();
    if x.is_finite() && x >= lo - eps && x <= hi + eps {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("{name} = {x} outside [{lo}, {hi}]")))
    }
}

impl<T: Real> StyleParams<T> {
    pub fn validate(&self) -> Result<()> {
        check("h", self.h, H_RANGE)?;
        check("g_c", self.g_c, GC_RANGE)?;
        check("g_p", self.g_p, GP_RANGE)?;
        check("x_off", self.x_off, XOFF_RANGE)?;
        if !(self.d_step > T::zero() && self.d_step.is_finite()) {
            return Err(Error::OutOfRange(format!("d_step = {} must be > 0", self.d_step)));
        }
        Ok(())
    }
}

/// Swing/stance split: swing iff `sin θ > 0`; `sin θ = 0` counts as stance.
#[inline]
pub fn is_swing_phase<T: Real>(theta: T) -> bool {
    let p = wrap_to_2pi(theta);
    p > T::zero() && p < T::PI()
}

pub fn swing_flag<T: Real>(state: &OscillatorNetworkState<T>, leg: Leg) -> bool {
    is_swing_phase(state.theta[leg.index()])
}

/// Desired foot position of one leg in its hip frame.
pub fn foot_target<T: Real>(r: T, theta: T, style: &StyleParams<T>, lateral: T) -> [T; 3] {
    let x = style.x_off - style.d_step * (r - T::one()) * theta.cos();
    let s = theta.sin();
    let z = if is_swing_phase(theta) {
        -style.h + style.g_c * s
    } else {
        -style.h + style.g_p * s
    };
    [x, lateral, z]
}

/// Desired foot positions for all legs. `lateral_offset` is the nominal
/// hip-to-foot lateral distance; left legs get `+`, right legs `−`.
pub fn map_to_foot_targets<T: Real>(
    state: &OscillatorNetworkState<T>,
    style: &StyleParams<T>,
    lateral_offset: T,
) -> [[T; 3]; NUM_LEGS] {
    let mut out = [[T::zero(); 3]; NUM_LEGS];
    for leg in Leg::ALL {
        let i = leg.index();
        let y = if leg.is_left() { lateral_offset } else { -lateral_offset };
        out[i] = foot_target(state.r[i], state.theta[i], style, y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

    fn style() -> StyleParams<f64> {
        StyleParams {
            h: 0.3,
            g_c: 0.05,
            g_p: 0.01,
            x_off: 0.0,
            d_step: 0.1,
        }
    }

    #[test]
    fn swing_apex_and_max_penetration() {
        let p = foot_target(1.5, FRAC_PI_2, &style(), 0.08);
        assert!(p[0].abs() < 1e-15);
        assert!((p[2] + 0.25).abs() < 1e-15);
        let p = foot_target(1.5, 3.0 * FRAC_PI_2, &style(), 0.08);
        assert!(p[0].abs() < 1e-15);
        assert!((p[2] + 0.31).abs() < 1e-15);
    }

    #[test]
    fn unit_amplitude_stands_in_place() {
        let mut s = style();
        s.x_off = -0.05;
        for k in 0..16 {
            let p = foot_target(1.0, k as f64 * 0.4, &s, 0.0);
            assert_eq!(p[0], -0.05);
        }
    }

    #[test]
    fn swing_flag_boundaries() {
        assert!(is_swing_phase(FRAC_PI_4));
        assert!(!is_swing_phase(PI));
        assert!(!is_swing_phase(0.0));
        assert!(!is_swing_phase(3.0 * FRAC_PI_2));
        assert!(!is_swing_phase(TAU));
    }

    #[test]
    fn lateral_sign_by_side() {
        let st = OscillatorNetworkState::new([1.0; 4], [0.0; 4]);
        let t = map_to_foot_targets(&st, &style(), 0.08);
        assert_eq!(t[Leg::FR.index()][1], -0.08);
        assert_eq!(t[Leg::HL.index()][1], 0.08);
    }

    #[test]
    fn style_validation() {
        assert!(StyleParams::<f64>::default().validate().is_ok());
        let mut s = StyleParams::<f64>::default();
        s.h = 0.5;
        assert!(matches!(s.validate(), Err(Error::OutOfRange(_))));
        s.h = 0.3;
        s.g_p = 0.02;
        assert!(s.validate().is_err());
    }

    #[test]
    fn half_cycle_is_swing() {
        let n = 100_000;
        let swing = (0..n)
            .filter(|k| is_swing_phase((*k as f64 + 0.5) * TAU / n as f64))
            .count();
        assert_eq!(swing, n / 2);
    }

    proptest! {
        #[test]
        fn target_within_bounds(
            r in 1.0f64..2.0, theta in -20.0f64..20.0,
            h in 0.18f64..0.35, g_c in 0.02f64..0.12, g_p in 0.0f64..0.015,
            x_off in -0.08f64..0.03, d_step in 0.01f64..0.3,
        ) {
            let s = StyleParams { h, g_c, g_p, x_off, d_step };
            let p = foot_target(r, theta, &s, 0.08);
            prop_assert!(p[2] >= -h - g_p - 1e-12 && p[2] <= -h + g_c + 1e-12);
            prop_assert!((p[0] - x_off).abs() <= d_step + 1e-12);
        }

        #[test]
        fn z_continuous_at_boundary(eps in 1e-9f64..1e-6, h in 0.18f64..0.35) {
            let s = StyleParams { h, ..style() };
            for b in [0.0, PI] {
                let lo = foot_target(1.5, b - eps, &s, 0.0)[2];
                let hi = foot_target(1.5, b + eps, &s, 0.0)[2];
                prop_assert!((lo - hi).abs() < 1e-5);
                prop_assert!((lo + h).abs() < 1e-5);
            }
        }
    }
}
