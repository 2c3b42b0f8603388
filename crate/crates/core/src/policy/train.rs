//! Policy evaluation and ES training over a curriculum of tasks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cpg::GaitLibrary;
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::pattern::StyleParams;
use crate::sim::episode::{run_episode, EpisodeSpec};
use crate::sim::log::TrajectoryLog;
use crate::sim::scenario::GaitSpec;
use crate::sim::{Mode, SimConfig, Termination};

use super::es::{maximize, EsConfig, TraceRow};
use super::{Feedback, Policy, Variant};

/// Result of one policy rollout.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub total_return: f64,
    pub metrics: MetricsRecord,
    pub termination: Termination,
}

/// Runs the policy on `spec` (seeded by `spec.sim.seed`). A numerical fault
/// in the simulator is returned as an error; falls are ordinary outcomes.
pub fn evaluate(policy: &Policy, spec: &EpisodeSpec, library: &GaitLibrary) -> Result<Evaluation> {
    let ep = run_episode(policy.clone(), spec, library)?;
    if let Termination::Fault { time, message } = &ep.termination {
        return Err(Error::Divergence(format!("simulator fault at t = {time:.3} s: {message}")));
    }
    Ok(Evaluation { total_return: ep.total_return, metrics: ep.metrics, termination: ep.termination })
}

/// What the optimizer maximizes, averaged over tasks and seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Summed per-step reward.
    Return,
    /// `−(COT + w·|v̄ − v*| / max(v*, 0.1))`; no forward progress counts as
    /// `cot_cap`.
    Cot { tracking_weight: f64, cot_cap: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::Return
    }
}

/// One training condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub gait: GaitSpec,
    pub velocity: f64,
    /// Styles to evaluate; empty means the default style.
    #[serde(default)]
    pub styles: Vec<StyleParams<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub es: EsConfig,
    pub sim: SimConfig,
    /// Fidelity tiers every task is evaluated in; empty means `sim.mode`.
    pub modes: Vec<Mode>,
    pub episode_length: f64,
    /// Metrics ignore the first part of each episode.
    pub metrics_from: f64,
    pub seeds_per_task: u64,
    /// Draw physics parameters from `sim.randomization` per seed.
    pub randomize: bool,
    pub objective: Objective,
    /// Subtracted once per fallen episode.
    pub fall_penalty: f64,
    /// Optimize each task's table entries separately (feedback weights are
    /// then left untouched).
    pub separable: bool,
    pub tasks: Vec<Task>,
    /// Expanded into further tasks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<TaskGrid>,
    /// Starting point when no checkpoint is given.
    pub init: InitSpec,
}

/// Every gait × velocity combination, each over the same styles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGrid {
    /// Empty means every library gait.
    #[serde(default)]
    pub gaits: Vec<String>,
    pub velocities: Vec<f64>,
    #[serde(default)]
    pub styles: Vec<StyleParams<f64>>,
}

/// Hand-tuned table over `knots` for every library gait, plus feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitSpec {
    pub knots: Vec<f64>,
    pub variant: Variant,
    pub hidden: usize,
    pub warmup_queries: u32,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            knots: (0..=12).map(|k| k as f64 * 0.25).collect(),
            variant: Variant::ConstantTable,
            hidden: 16,
            warmup_queries: 150,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            es: EsConfig::default(),
            sim: SimConfig::default(),
            modes: Vec::new(),
            episode_length: 4.0,
            metrics_from: 1.0,
            seeds_per_task: 1,
            randomize: false,
            objective: Objective::Return,
            fall_penalty: 0.0,
            separable: false,
            tasks: vec![Task { gait: GaitSpec::default(), velocity: 0.5, styles: Vec::new() }],
            grid: None,
            init: InitSpec::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, library: &GaitLibrary) -> Result<()> {
        self.es.validate()?;
        self.sim.validate()?;
        let tasks = self.all_tasks(library);
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("optimizer needs at least one task".into()));
        }
        if self.seeds_per_task < 1 {
            return Err(Error::InvalidConfig("seeds_per_task must be >= 1".into()));
        }
        if !(self.episode_length > 0.0 && self.metrics_from >= 0.0 && self.metrics_from < self.episode_length) {
            return Err(Error::InvalidConfig("need 0 <= metrics_from < episode_length".into()));
        }
        for t in &tasks {
            t.gait.resolve(library)?;
            if !t.velocity.is_finite() {
                return Err(Error::OutOfRange("task velocity must be finite".into()));
            }
            for s in &t.styles {
                s.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Explicit tasks followed by the grid, gait-major.
    pub fn all_tasks(&self, library: &GaitLibrary) -> Vec<Task> {
        let mut out = self.tasks.clone();
        if let Some(g) = &self.grid {
            let gaits: Vec<String> = if g.gaits.is_empty() {
                library.names().map(str::to_string).collect()
            } else {
                g.gaits.clone()
            };
            for name in gaits {
                for &v in &g.velocities {
                    out.push(Task { gait: GaitSpec::Named(name.clone()), velocity: v, styles: g.styles.clone() });
                }
            }
        }
        out
    }

    pub fn initial_policy(&self, library: &GaitLibrary) -> Result<Policy> {
        let d_step = StyleParams::<f64>::default().d_step;
        let mut p = Policy::hand_tuned(library.names(), &self.init.knots, d_step)?
            .with_feedback(Feedback::init(self.init.variant, self.init.hidden, self.es.seed))?;
        p.warmup_queries = self.init.warmup_queries;
        Ok(p)
    }

    fn specs(&self, task: &Task) -> Vec<EpisodeSpec> {
        let styles = if task.styles.is_empty() { vec![StyleParams::default()] } else { task.styles.clone() };
        let modes = if self.modes.is_empty() { vec![self.sim.mode] } else { self.modes.clone() };
        let mut out = Vec::new();
        for (mode, style) in modes.iter().flat_map(|m| styles.iter().map(move |s| (*m, *s))) {
            for s in 0..self.seeds_per_task {
                out.push(EpisodeSpec {
                    sim: SimConfig { seed: self.es.seed.wrapping_add(s), mode, ..self.sim.clone() },
                    gait: task.gait.clone(),
                    style,
                    velocity: task.velocity,
                    duration: Some(self.episode_length),
                    metrics_from: self.metrics_from,
                    randomize: self.randomize,
                    ..EpisodeSpec::default()
                });
            }
        }
        out
    }

    fn score(&self, e: &Evaluation, v_cmd: f64) -> f64 {
        let fall = if e.termination.is_fall() { self.fall_penalty } else { 0.0 };
        match self.objective {
            Objective::Return => e.total_return - fall,
            Objective::Cot { tracking_weight, cot_cap } => {
                let cot = e.metrics.cot.unwrap_or(cot_cap).min(cot_cap);
                let track = (e.metrics.mean_vx - v_cmd).abs() / v_cmd.abs().max(0.1);
                -(cot + tracking_weight * track) - fall
            }
        }
    }

    /// Mean score over `specs`; `None` if any rollout faulted.
    fn fitness(&self, policy: &Policy, specs: &[EpisodeSpec], library: &GaitLibrary) -> Option<f64> {
        let mut sum = 0.0;
        for spec in specs {
            let e = evaluate(policy, spec, library).ok()?;
            sum += self.score(&e, spec.velocity);
        }
        Some(sum / specs.len() as f64)
    }
}

/// Training result.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub policy: Policy,
    pub best_fitness: f64,
    pub initial_fitness: f64,
    /// One trace per ES run (a single run unless `separable`).
    pub traces: Vec<(String, Vec<TraceRow>)>,
}

fn task_label(t: &Task) -> String {
    match &t.gait {
        GaitSpec::Named(n) => format!("{n}@{}", t.velocity),
        GaitSpec::Custom { .. } => format!("custom@{}", t.velocity),
    }
}

fn table_dims(policy: &Policy, task: &Task) -> Vec<usize> {
    let GaitSpec::Named(name) = &task.gait else { return Vec::new() };
    let g = if policy.table.gaits.contains_key(name) { name.as_str() } else { policy.table.fallback.as_str() };
    policy
        .table
        .bracket(task.velocity)
        .into_iter()
        .filter_map(|k| policy.table_index(g, k))
        .flat_map(|i| [i, i + 1])
        .collect()
}

fn bounds(policy: &Policy) -> (Vec<f64>, Vec<f64>) {
    let n = policy.num_params();
    let t = policy.table_len();
    let lo = (0..n).map(|i| if i < t { 0.0 } else { f64::NEG_INFINITY }).collect();
    let hi = (0..n).map(|i| if i < t { 1.0 } else { f64::INFINITY }).collect();
    (lo, hi)
}

/// Improves `init` by ES. Only table entries touched by some task (and the
/// feedback weights) are searched; the returned policy is the best seen.
pub fn optimize_es(cfg: &OptimizerConfig, init: &Policy, library: &GaitLibrary) -> Result<Outcome> {
    cfg.validate(library)?;
    init.validate()?;
    let (lo, hi) = bounds(init);
    let tasks = cfg.all_tasks(library);
    let groups: Vec<(String, Vec<&Task>, Vec<usize>)> = if cfg.separable {
        tasks.iter().map(|t| (task_label(t), vec![t], table_dims(init, t))).collect()
    } else {
        let mut dims: Vec<usize> = tasks.iter().flat_map(|t| table_dims(init, t)).collect();
        dims.extend(init.table_len()..init.num_params());
        dims.sort_unstable();
        dims.dedup();
        vec![("all".to_string(), tasks.iter().collect(), dims)]
    };

    let all_specs: Vec<EpisodeSpec> = tasks.iter().flat_map(|t| cfg.specs(t)).collect();
    let initial_fitness = cfg
        .fitness(init, &all_specs, library)
        .ok_or_else(|| Error::OptimizerAborted("initial policy faulted".into()))?;

    let mut policy = init.clone();
    let mut traces = Vec::new();
    for (label, tasks, dims) in groups {
        if dims.is_empty() {
            continue;
        }
        let specs: Vec<EpisodeSpec> = tasks.iter().flat_map(|t| cfg.specs(t)).collect();
        let template = policy.clone();
        let f = |x: &[f64]| {
            let mut p = template.clone();
            p.set_params(x).ok()?;
            cfg.fitness(&p, &specs, library)
        };
        let r = maximize(f, &policy.params(), Some(&dims), Some((&lo, &hi)), &cfg.es)?;
        policy.set_params(&r.best)?;
        traces.push((label, r.trace));
    }
    let best_fitness = cfg
        .fitness(&policy, &all_specs, library)
        .ok_or_else(|| Error::OptimizerAborted("optimized policy faulted".into()))?;
    Ok(Outcome { policy, best_fitness, initial_fitness, traces })
}

/// Mean commanded modulation over a steady-state window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTrace {
    pub velocity: f64,
    pub mu: [f64; 4],
    pub omega: [f64; 4],
    pub mean_mu: f64,
    pub mean_omega: f64,
    pub samples: usize,
}

/// Averages the logged `μ`, `ω` per commanded velocity over `t ≥ from`.
/// Each velocity's window must span at least one cycle at its mean
/// frequency.
pub fn cpg_param_trace(log: &TrajectoryLog, from: f64) -> Result<Vec<ParamTrace>> {
    let mut groups: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for (i, r) in log.rows.iter().enumerate() {
        if r.t + 1e-12 >= from {
            groups.entry(r.v_cmd.to_bits()).or_insert((r.v_cmd, Vec::new())).1.push(i);
        }
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData(format!("no log rows at or after t = {from}")));
    }
    let mut out = Vec::new();
    for (v, idx) in groups.into_values() {
        let n = idx.len() as f64;
        let mut mu = [0.0; 4];
        let mut omega = [0.0; 4];
        for &i in &idx {
            for l in 0..4 {
                mu[l] += log.rows[i].mu[l] / n;
                omega[l] += log.rows[i].omega[l] / n;
            }
        }
        let mean_mu = mu.iter().sum::<f64>() / 4.0;
        let mean_omega = omega.iter().sum::<f64>() / 4.0;
        let span = log.rows[*idx.last().unwrap()].t - log.rows[idx[0]].t;
        if !(mean_omega > 0.0 && span * mean_omega >= 1.0) {
            return Err(Error::InsufficientData(format!(
                "window at v* = {v} spans {span:.3} s, shorter than one gait cycle"
            )));
        }
        out.push(ParamTrace { velocity: v, mu, omega, mean_mu, mean_omega, samples: idx.len() });
    }
    out.sort_by(|a, b| a.velocity.total_cmp(&b.velocity));
    Ok(out)
}
