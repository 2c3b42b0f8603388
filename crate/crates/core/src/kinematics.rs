//! Analytic kinematics of a 3-DOF leg (hip abduction, thigh, calf).
//!
//! Hip frame: x forward, y left, z up. At zero angles the leg points straight
//! down with the foot at `(0, ±l_abd, −(l_thigh + l_calf))`. Positive thigh
//! angle swings the foot backward; the calf angle is ≤ 0 (knee points back).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leg::Leg;
use crate::scalar::{wrap_to_pi, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn of(leg: Leg) -> Side {
        if leg.is_left() {
            Side::Left
        } else {
            Side::Right
        }
    }

    #[inline]
    pub fn sign<T: Real>(self) -> T {
        match self {
            Side::Left => T::one(),
            Side::Right => -T::one(),
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegGeometry<T> {
    /// Lateral hip offset (m).
    pub l_abd: T,
    pub l_thigh: T,
    pub l_calf: T,
    pub side: Side,
}

impl<T: Real> LegGeometry<T> {
    /// Go1-like proportions.
    pub fn go1(side: Side) -> Self {
        LegGeometry {
            l_abd: T::lit(0.08),
            l_thigh: T::lit(0.213),
            l_calf: T::lit(0.213),
            side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_abd > T::zero() && self.l_thigh > T::zero() && self.l_calf > T::zero() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("leg link lengths must be > 0".into()))
        }
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointAngles<T> {
    pub abd: T,
    pub thigh: T,
    pub calf: T,
}

impl<T: Real> JointAngles<T> {
    pub fn new(abd: T, thigh: T, calf: T) -> Self {
        JointAngles { abd, thigh, calf }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.abd, self.thigh, self.calf]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        JointAngles::new(a[0], a[1], a[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits<T> {
    pub lower: [T; 3],
    pub upper: [T; 3],
}

impl<T: Real> JointLimits<T> {
    pub fn go1() -> Self {
        JointLimits {
            lower: [T::lit(-0.863), T::lit(-0.686), T::lit(-2.818)],
            upper: [T::lit(0.863), T::lit(4.501), T::lit(-0.888)],
        }
    }

    pub fn clamp(&self, q: JointAngles<T>) -> JointAngles<T> {
        let a = q.to_array();
        let mut out = a;
        for k in 0..3 {
            out[k] = a[k].max(self.lower[k]).min(self.upper[k]);
        }
        JointAngles::from_array(out)
    }

    pub fn contains(&self, q: JointAngles<T>) -> bool {
        q.to_array()
            .iter()
            .enumerate()
            .all(|(k, &x)| x >= self.lower[k] && x <= self.upper[k])
    }
}

/// IK result. `clamped` is set when the target was outside the reachable
/// workspace and was projected onto its boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkSolution<T> {
    pub angles: JointAngles<T>,
    pub clamped: bool,
}

/// Foot position in the hip frame.
pub fn fk<T: Real>(q: &JointAngles<T>, geom: &LegGeometry<T>) -> [T; 3] {
    let (l1, l2) = (geom.l_thigh, geom.l_calf);
    let ly = geom.side.sign::<T>() * geom.l_abd;
    let tc = q.thigh + q.calf;
    let xp = -l1 * q.thigh.sin() - l2 * tc.sin();
    let zp = -l1 * q.thigh.cos() - l2 * tc.cos();
    let (sa, ca) = q.abd.sin_cos();
    [xp, ca * ly - sa * zp, sa * ly + ca * zp]
}

/// Knee position in the hip frame (thigh-link end point).
pub fn knee_position<T: Real>(q: &JointAngles<T>, geom: &LegGeometry<T>) -> [T; 3] {
    let ly = geom.side.sign::<T>() * geom.l_abd;
    let xp = -geom.l_thigh * q.thigh.sin();
    let zp = -geom.l_thigh * q.thigh.cos();
    let (sa, ca) = q.abd.sin_cos();
    [xp, ca * ly - sa * zp, sa * ly + ca * zp]
}

/// Analytic inverse kinematics on the knee-backward branch.
pub fn ik<T: Real>(target: &[T; 3], geom: &LegGeometry<T>) -> IkSolution<T> {
    let [mut x, y, z] = *target;
    let (l1, l2) = (geom.l_thigh, geom.l_calf);
    let ly = geom.side.sign::<T>() * geom.l_abd;
    let mut clamped = false;

    let mut zp2 = y * y + z * z - geom.l_abd * geom.l_abd;
    if zp2 < T::zero() {
        zp2 = T::zero();
        clamped = true;
    }
    let mut zp = -zp2.sqrt();
    let abd = wrap_to_pi(z.atan2(y) - zp.atan2(ly));

    let d_max = l1 + l2;
    let d_min = (l1 - l2).abs();
    let d = (x * x + zp * zp).sqrt();
    if d > d_max {
        let s = d_max / d;
        x = x * s;
        zp = zp * s;
        clamped = true;
    } else if d < d_min || d == T::zero() {
        if d == T::zero() {
            x = T::zero();
            zp = -d_min;
        } else {
            let s = d_min / d;
            x = x * s;
            zp = zp * s;
        }
        clamped = true;
    }

    let two = T::lit(2.0);
    let d2 = x * x + zp * zp;
    let cos_knee = ((d2 - l1 * l1 - l2 * l2) / (two * l1 * l2))
        .max(-T::one())
        .min(T::one());
    let calf = -cos_knee.acos();
    let a = l1 + l2 * calf.cos();
    let b = l2 * calf.sin();
    let thigh = (-x).atan2(-zp) - b.atan2(a);

    IkSolution {
        angles: JointAngles::new(abd, wrap_to_pi(thigh), calf),
        clamped,
    }
}

pub type Mat3<T> = [[T; 3]; 3];

/// `∂(foot position)/∂q`, columns in (abd, thigh, calf) order.
pub fn jacobian<T: Real>(q: &JointAngles<T>, geom: &LegGeometry<T>) -> Mat3<T> {
    let (l1, l2) = (geom.l_thigh, geom.l_calf);
    let ly = geom.side.sign::<T>() * geom.l_abd;
    let tc = q.thigh + q.calf;
    let zp = -l1 * q.thigh.cos() - l2 * tc.cos();
    let (sa, ca) = q.abd.sin_cos();

    let dxp_dt = -l1 * q.thigh.cos() - l2 * tc.cos();
    let dzp_dt = l1 * q.thigh.sin() + l2 * tc.sin();
    let dxp_dc = -l2 * tc.cos();
    let dzp_dc = l2 * tc.sin();

    [
        [T::zero(), dxp_dt, dxp_dc],
        [-sa * ly - ca * zp, -sa * dzp_dt, -sa * dzp_dc],
        [ca * ly - sa * zp, ca * dzp_dt, ca * dzp_dc],
    ]
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `Jᵀ·f`: joint torques equivalent to a force applied at the foot.
pub fn jacobian_transpose_mul<T: Real>(j: &Mat3<T>, f: &[T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = j[0][c] * f[0] + j[1][c] * f[1] + j[2][c] * f[2];
    }
    out
}

pub fn jacobian_mul<T: Real>(j: &Mat3<T>, v: &[T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = j[r][0] * v[0] + j[r][1] * v[1] + j[r][2] * v[2];
    }
    out
}
