//! Domain randomization of physical parameters and gait style.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{StyleParams, GC_RANGE, GP_RANGE, H_RANGE, XOFF_RANGE};
use crate::sim::robot::NUM_LINKS;
use crate::sim::SimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub kp: (f64, f64),
    pub kd: (f64, f64),
    /// Multiplier applied to each link mass independently.
    pub link_mass_scale: (f64, f64),
    /// kg
    pub added_base_mass: (f64, f64),
    pub friction: (f64, f64),
    pub h: (f64, f64),
    pub g_c: (f64, f64),
    pub g_p: (f64, f64),
    pub x_off: (f64, f64),
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            kp: (30.0, 100.0),
            kd: (0.5, 2.0),
            link_mass_scale: (0.7, 1.3),
            added_base_mass: (0.0, 5.0),
            friction: (0.3, 1.0),
            h: H_RANGE,
            g_c: GC_RANGE,
            g_p: GP_RANGE,
            x_off: XOFF_RANGE,
        }
    }
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("kp", self.kp),
            ("kd", self.kd),
            ("link_mass_scale", self.link_mass_scale),
            ("added_base_mass", self.added_base_mass),
            ("friction", self.friction),
            ("h", self.h),
            ("g_c", self.g_c),
            ("g_p", self.g_p),
            ("x_off", self.x_off),
        ];
        for (name, (lo, hi)) in all {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("randomization range {name} = [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// A randomized physical configuration plus the style drawn for the reset.
#[derive(Clone, Debug, PartialEq)]
pub struct Randomized {
    pub sim: SimConfig,
    pub style: StyleParams<f64>,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Uniform draws of PD gains, link masses, added base mass, friction and
/// style parameters. `d_step` is carried over from `base_style`.
pub fn randomize(cfg: &SimConfig, base_style: &StyleParams<f64>, seed: u64) -> Result<Randomized> {
    let r = &cfg.randomization;
    r.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sim = cfg.clone();
    sim.kp = draw(&mut rng, r.kp);
    sim.kd = draw(&mut rng, r.kd);
    let mut scales = [1.0; NUM_LINKS];
    for s in scales.iter_mut() {
        *s = draw(&mut rng, r.link_mass_scale);
    }
    sim.mass_scales = scales;
    sim.added_base_mass = draw(&mut rng, r.added_base_mass);
    sim.contact.friction = draw(&mut rng, r.friction);
    let style = StyleParams {
        h: draw(&mut rng, r.h),
        g_c: draw(&mut rng, r.g_c),
        g_p: draw(&mut rng, r.g_p),
        x_off: draw(&mut rng, r.x_off),
        d_step: base_style.d_step,
    };
    Ok(Randomized { sim, style })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SimConfig::default();
        let s = StyleParams::default();
        assert_eq!(randomize(&cfg, &s, 9).unwrap(), randomize(&cfg, &s, 9).unwrap());
        assert_ne!(randomize(&cfg, &s, 9).unwrap(), randomize(&cfg, &s, 10).unwrap());
    }

    #[test]
    fn draws_stay_in_bounds() {
        let cfg = SimConfig::default();
        let s = StyleParams::default();
        let mut lo = [f64::INFINITY; 5];
        let mut hi = [f64::NEG_INFINITY; 5];
        for seed in 0..10_000 {
            let r = randomize(&cfg, &s, seed).unwrap();
            let scale_min = r.sim.mass_scales.iter().cloned().fold(f64::INFINITY, f64::min);
            let scale_max = r.sim.mass_scales.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = [r.sim.kp, r.sim.kd, r.sim.added_base_mass, r.sim.contact.friction, scale_min];
            for k in 0..5 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(if k == 4 { scale_max } else { v[k] });
            }
            r.style.validate().unwrap();
        }
        let bounds = [(30.0, 100.0), (0.5, 2.0), (0.0, 5.0), (0.3, 1.0), (0.7, 1.3)];
        for k in 0..5 {
            assert!(lo[k] >= bounds[k].0 && hi[k] <= bounds[k].1, "{k}: {} {}", lo[k], hi[k]);
            // the draws cover the range
            assert!(lo[k] - bounds[k].0 < 0.02 * (bounds[k].1 - bounds[k].0));
            assert!(bounds[k].1 - hi[k] < 0.02 * (bounds[k].1 - bounds[k].0));
        }
    }
}
