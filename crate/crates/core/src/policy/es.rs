//! Evolution strategies with mirrored sampling and centered-rank fitness
//! shaping. Maximizes a deterministic objective; the population is evaluated
//! in parallel and reduced in a fixed order.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric decay `max(initial·decay^k, floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial: f64,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default)]
    pub floor: f64,
}

fn one() -> f64 {
    1.0
}

impl Schedule {
    pub const fn constant(x: f64) -> Self {
        Schedule { initial: x, decay: 1.0, floor: 0.0 }
    }

    pub fn at(&self, k: usize) -> f64 {
        (self.initial * self.decay.powi(k as i32)).max(self.floor)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.initial > 0.0 && self.decay > 0.0 && self.decay <= 1.0 && self.floor >= 0.0)
            || !self.initial.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "{name} schedule needs initial > 0, decay in (0, 1], floor >= 0"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    /// Even, at least 4: half are mirrored copies.
    pub population: usize,
    pub iterations: usize,
    /// Perturbation scale.
    pub sigma: Schedule,
    /// Update length in units of `sigma`.
    pub step_size: Schedule,
    pub seed: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            population: 32,
            iterations: 60,
            sigma: Schedule { initial: 0.05, decay: 0.97, floor: 0.005 },
            step_size: Schedule::constant(1.0),
            seed: 0,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.population % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "population must be even and >= 4, got {}",
                self.population
            )));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        self.sigma.validate("sigma")?;
        self.step_size.validate("step_size")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Objective at the search mean before this iteration's update.
    pub center: f64,
    /// Mean over the population's non-faulted samples.
    pub mean: f64,
    pub best_sample: f64,
    pub best_so_far: f64,
    pub sigma: f64,
    pub step_size: f64,
    pub faulted: usize,
}

#[derive(Clone, Debug)]
pub struct EsResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub mean: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

/// Weights in `[−0.5, 0.5]` by rank; ties share the average rank. NaN
/// (faulted) entries rank lowest.
pub fn centered_ranks(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let key = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| key(fitness[a]).total_cmp(&key(fitness[b])));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && key(fitness[idx[j + 1]]) == key(fitness[idx[i]]) {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = r / (n - 1) as f64 - 0.5;
        }
        i = j + 1;
    }
    out
}

/// Maximizes `f` starting from `x0`. `f` returns `None` for a faulted
/// evaluation. Only coordinates listed in `active` are perturbed (all when
/// `None`); `bounds` clip every candidate.
pub fn maximize<F>(
    f: F,
    x0: &[f64],
    active: Option<&[usize]>,
    bounds: Option<(&[f64], &[f64])>,
    cfg: &EsConfig,
) -> Result<EsResult>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    cfg.validate()?;
    let dims: Vec<usize> = match active {
        Some(a) => a.to_vec(),
        None => (0..x0.len()).collect(),
    };
    if dims.iter().any(|&d| d >= x0.len()) {
        return Err(Error::InvalidConfig("active coordinate out of range".into()));
    }
    let clip = |x: &mut Vec<f64>| {
        if let Some((lo, hi)) = bounds {
            for &d in &dims {
                x[d] = x[d].clamp(lo[d], hi[d]);
            }
        }
    };
    let mut mean = x0.to_vec();
    clip(&mut mean);
    let mut best = mean.clone();
    let mut best_fitness = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let half = cfg.population / 2;

    for it in 0..cfg.iterations {
        let sigma = cfg.sigma.at(it);
        let step = cfg.step_size.at(it);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (it as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let eps: Vec<Vec<f64>> = (0..half)
            .map(|_| dims.iter().map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut candidates = vec![mean.clone()];
        for e in &eps {
            for sign in [1.0, -1.0] {
                let mut x = mean.clone();
                for (k, &d) in dims.iter().enumerate() {
                    x[d] += sign * sigma * e[k];
                }
                clip(&mut x);
                candidates.push(x);
            }
        }
        let fit: Vec<f64> = candidates
            .par_iter()
            .map(|x| f(x).filter(|v| v.is_finite()).unwrap_or(f64::NAN))
            .collect();
        let center = fit[0];
        let pop = &fit[1..];
        let faulted = pop.iter().filter(|v| v.is_nan()).count();
        if faulted == pop.len() {
            return Err(Error::OptimizerAborted(format!(
                "iteration {it}: all {} population evaluations faulted",
                pop.len()
            )));
        }
        for (x, &v) in candidates.iter().zip(&fit) {
            if v > best_fitness {
                best_fitness = v;
                best = x.clone();
            }
        }
        let ok: Vec<f64> = pop.iter().copied().filter(|v| !v.is_nan()).collect();
        trace.push(TraceRow {
            iteration: it,
            center,
            mean: ok.iter().sum::<f64>() / ok.len() as f64,
            best_sample: ok.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            best_so_far: best_fitness,
            sigma,
            step_size: step,
            faulted,
        });

        let w = centered_ranks(pop);
        for (k, &d) in dims.iter().enumerate() {
            let g: f64 = (0..half).map(|j| (w[2 * j] - w[2 * j + 1]) * eps[j][k]).sum();
            mean[d] += step * sigma * g / half as f64;
        }
        clip(&mut mean);
    }
    Ok(EsResult { best, best_fitness, mean, trace })
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_are_centered_and_tie_aware() {
        assert_eq!(centered_ranks(&[3.0, 1.0, 2.0]), vec![0.5, -0.5, 0.0]);
        assert_eq!(centered_ranks(&[1.0, 1.0, 5.0]), vec![-0.25, -0.25, 0.5]);
        assert_eq!(centered_ranks(&[f64::NAN, 0.0]), vec![-0.5, 0.5]);
        let r = centered_ranks(&[0.3, -2.0, 9.0, 4.0, 4.0, 1.0]);
        assert!(r.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn quadratic_1d_converges() {
        let cfg = EsConfig {
            population: 8,
            iterations: 50,
            sigma: Schedule { initial: 1.0, decay: 0.85, floor: 0.0 },
            step_size: Schedule::constant(1.5),
            seed: 3,
        };
        let r = maximize(|x| Some(-(x[0] - 3.0).powi(2)), &[0.0], None, None, &cfg).unwrap();
        assert!((r.best[0] - 3.0).abs() < 1e-3, "{:?}", r.best);
    }

    #[test]
    fn inactive_coordinates_untouched_and_bounds_respected() {
        let cfg = EsConfig { population: 6, iterations: 20, ..EsConfig::default() };
        let lo = [0.0, 0.0, 0.0];
        let hi = [1.0, 0.2, 1.0];
        let r = maximize(
            |x| Some(x[1] + x[2]),
            &[0.5, 0.1, 0.5],
            Some(&[1]),
            Some((&lo, &hi)),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.best[0], 0.5);
        assert_eq!(r.best[2], 0.5);
        assert!(r.best[1] <= 0.2);
    }

    #[test]
    fn trace_best_so_far_monotone_and_reproducible() {
        let cfg = EsConfig { population: 10, iterations: 30, seed: 11, ..EsConfig::default() };
        let f = |x: &[f64]| Some(-(x[0] - 0.3).abs() - (x[1] + 0.1).powi(2) + (7.0 * x[0]).sin() * 0.05);
        let a = maximize(f, &[0.0, 0.0], None, None, &cfg).unwrap();
        let b = maximize(f, &[0.0, 0.0], None, None, &cfg).unwrap();
        assert!(a.trace.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn all_faulted_aborts() {
        let cfg = EsConfig { population: 4, iterations: 3, ..EsConfig::default() };
        let r = maximize(|_| None, &[0.0], None, None, &cfg);
        assert!(matches!(r, Err(Error::OptimizerAborted(_))));
    }

    #[test]
    fn config_validation() {
        assert!(EsConfig { population: 5, ..EsConfig::default() }.validate().is_err());
        assert!(EsConfig { population: 2, ..EsConfig::default() }.validate().is_err());
        assert!(EsConfig { iterations: 0, ..EsConfig::default() }.validate().is_err());
        assert!(EsConfig::default().validate().is_ok());
    }
}
