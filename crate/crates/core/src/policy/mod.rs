//! Policies mapping observations to oscillator modulation commands.
//!
//! Every variant starts from a per-gait table of normalized actions indexed
//! by commanded velocity. The linear and small-MLP variants add a feedback
//! term computed from the observation. Normalized actions `(p_μ, p_ω)` in
//! `[0, 1]²` map to `μ = 1 + p_μ` and `ω = 8·p_ω` Hz.

pub mod es;
pub mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cpg::{GaitMatrix, ModulationCommand, MU_MIN, OMEGA_MAX_HZ};
use crate::error::{Error, Result};
use crate::leg::NUM_LEGS;
use crate::sim::episode::Controller;
use crate::sim::observation::{Observation, OBS_DIM};

pub use es::{EsConfig, EsResult, Schedule, TraceRow};
pub use train::{
    cpg_param_trace, evaluate, optimize_es, Evaluation, InitSpec, Objective, OptimizerConfig, Outcome, ParamTrace, Task, TaskGrid,
};

pub const POLICY_SCHEMA: &str = "quadcpg-policy";
pub const POLICY_VERSION: u32 = 1;

/// Number of action outputs: μ and ω for each leg.
pub const ACTION_DIM: usize = 2 * NUM_LEGS;

const BASELINE_JSON: &str = include_str!("../../data/baseline_policy.json");

/// `μ`, `ω` from normalized values.
#[inline]
pub fn denormalize(p_mu: f64, p_omega: f64) -> (f64, f64) {
    (MU_MIN + p_mu, OMEGA_MAX_HZ * p_omega)
}

#[inline]
pub fn normalize(mu: f64, omega: f64) -> (f64, f64) {
    (mu - MU_MIN, omega / OMEGA_MAX_HZ)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    ConstantTable,
    Linear,
    SmallMlp,
}

impl Variant {
    pub fn id(self) -> &'static str {
        match self {
            Variant::ConstantTable => "constant-table",
            Variant::Linear => "linear",
            Variant::SmallMlp => "small-mlp",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant-table" => Ok(Variant::ConstantTable),
            "linear" => Ok(Variant::Linear),
            "small-mlp" => Ok(Variant::SmallMlp),
            _ => Err(Error::InvalidConfig(format!(
                "unknown policy variant `{s}` (expected constant-table, linear or small-mlp)"
            ))),
        }
    }
}

/// Normalized `(p_μ, p_ω)` per gait and velocity knot, shared by all legs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityTable {
    /// Strictly increasing commanded velocities (m/s).
    pub knots: Vec<f64>,
    pub gaits: BTreeMap<String, Vec<[f64; 2]>>,
    /// Row used for gaits missing from the table.
    pub fallback: String,
}

impl VelocityTable {
    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::InvalidConfig("policy table needs at least one velocity knot".into()));
        }
        if self.knots.iter().any(|k| !k.is_finite()) || self.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("velocity knots must be finite and strictly increasing".into()));
        }
        if !self.gaits.contains_key(&self.fallback) {
            return Err(Error::InvalidConfig(format!("fallback gait `{}` missing from table", self.fallback)));
        }
        for (g, rows) in &self.gaits {
            if rows.len() != self.knots.len() {
                return Err(Error::InvalidConfig(format!(
                    "gait `{g}` has {} rows for {} knots",
                    rows.len(),
                    self.knots.len()
                )));
            }
            if rows.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("gait `{g}` has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn row(&self, gait: &str) -> &[[f64; 2]] {
        self.gaits.get(gait).unwrap_or_else(|| &self.gaits[&self.fallback])
    }

    /// Piecewise-linear in velocity, constant beyond the end knots.
    pub fn lookup(&self, gait: &str, v: f64) -> [f64; 2] {
        let rows = self.row(gait);
        let k = &self.knots;
        if !(v > k[0]) {
            return rows[0];
        }
        if v >= k[k.len() - 1] {
            return rows[k.len() - 1];
        }
        let i = k.partition_point(|&x| x <= v) - 1;
        let s = (v - k[i]) / (k[i + 1] - k[i]);
        [0, 1].map(|j| rows[i][j] + s * (rows[i + 1][j] - rows[i][j]))
    }

    /// Index of the knots bracketing `v`.
    pub fn bracket(&self, v: f64) -> Vec<usize> {
        let k = &self.knots;
        if v <= k[0] {
            return vec![0];
        }
        if v >= k[k.len() - 1] {
            return vec![k.len() - 1];
        }
        let i = k.partition_point(|&x| x <= v) - 1;
        if k[i] == v {
            vec![i]
        } else {
            vec![i, i + 1]
        }
    }
}

/// Fixed per-entry scales applied to the observation before the feedback
/// term. Phases enter as `θ/π − 1`.
pub fn features(obs: &Observation) -> [f64; OBS_DIM] {
    let raw = obs.to_vec();
    let mut f = [0.0; OBS_DIM];
    for (i, x) in raw.iter().enumerate() {
        f[i] = match i {
            0 => x / 3.0,
            1..=4 => *x,
            5..=7 => x / 2.0,
            8..=10 => x / 5.0,
            11..=22 => *x,
            23..=34 => x / 20.0,
            35..=38 => 2.0 * x - 1.0,
            39..=42 => x - 1.5,
            43..=46 => x / OMEGA_MAX_HZ,
            47..=50 => x - 1.0,
            51..=54 => x / 10.0,
            55..=58 => x / std::f64::consts::PI - 1.0,
            _ => x / 50.0,
        };
    }
    f
}

/// Observation feedback added to the table output, in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Feedback {
    ConstantTable,
    /// `Δ = W·φ`, `W` is `ACTION_DIM × OBS_DIM` row-major.
    Linear { weights: Vec<f64> },
    /// `Δ = W₂·tanh(W₁·φ + b₁) + b₂`.
    SmallMlp {
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

impl Feedback {
    pub fn variant(&self) -> Variant {
        match self {
            Feedback::ConstantTable => Variant::ConstantTable,
            Feedback::Linear { .. } => Variant::Linear,
            Feedback::SmallMlp { .. } => Variant::SmallMlp,
        }
    }

    /// Linear weights start at zero; the MLP's first layer is random and its
    /// output layer zero, so both begin as the bare table.
    pub fn init(variant: Variant, hidden: usize, seed: u64) -> Self {
        match variant {
            Variant::ConstantTable => Feedback::ConstantTable,
            Variant::Linear => Feedback::Linear { weights: vec![0.0; ACTION_DIM * OBS_DIM] },
            Variant::SmallMlp => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = Normal::new(0.0, 1.0 / (OBS_DIM as f64).sqrt()).unwrap();
                Feedback::SmallMlp {
                    hidden,
                    w1: (0..hidden * OBS_DIM).map(|_| n.sample(&mut rng)).collect(),
                    b1: vec![0.0; hidden],
                    w2: vec![0.0; ACTION_DIM * hidden],
                    b2: vec![0.0; ACTION_DIM],
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("policy {what} has the wrong size")));
        match self {
            Feedback::ConstantTable => Ok(()),
            Feedback::Linear { weights } if weights.len() != ACTION_DIM * OBS_DIM => bad("linear weights"),
            Feedback::SmallMlp { hidden, w1, b1, w2, b2 }
                if w1.len() != hidden * OBS_DIM
                    || b1.len() != *hidden
                    || w2.len() != ACTION_DIM * hidden
                    || b2.len() != ACTION_DIM =>
            {
                bad("mlp layers")
            }
            _ => {
                if self.params().iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig("policy weights must be finite".into()));
                }
                Ok(())
            }
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Feedback::ConstantTable => Vec::new(),
            Feedback::Linear { weights } => weights.clone(),
            Feedback::SmallMlp { w1, b1, w2, b2, .. } => {
                w1.iter().chain(b1).chain(w2).chain(b2).copied().collect()
            }
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            Feedback::ConstantTable => {}
            Feedback::Linear { weights } => weights.copy_from_slice(p),
            Feedback::SmallMlp { w1, b1, w2, b2, .. } => {
                let mut it = p.iter().copied();
                for dst in [w1, b1, w2, b2] {
                    for x in dst.iter_mut() {
                        *x = it.next().unwrap();
                    }
                }
            }
        }
    }

    fn apply(&self, phi: &[f64; OBS_DIM]) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        match self {
            Feedback::ConstantTable => {}
            Feedback::Linear { weights } => {
                for (a, row) in out.iter_mut().zip(weights.chunks_exact(OBS_DIM)) {
                    *a = row.iter().zip(phi).map(|(w, x)| w * x).sum();
                }
            }
            Feedback::SmallMlp { hidden, w1, b1, w2, b2 } => {
                let h: Vec<f64> = (0..*hidden)
                    .map(|k| {
                        let row = &w1[k * OBS_DIM..(k + 1) * OBS_DIM];
                        (b1[k] + row.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>()).tanh()
                    })
                    .collect();
                for (a, (row, b)) in out.iter_mut().zip(w2.chunks_exact(*hidden).zip(b2)) {
                    *a = b + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
                }
            }
        }
        out
    }
}

/// On-disk policy checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub version: u32,
    #[serde(flatten)]
    pub policy: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub table: VelocityTable,
    pub feedback: Feedback,
    /// Amplitude offsets `μ − 1` ramp in linearly over this many queries
    /// after a reset.
    #[serde(default)]
    pub warmup_queries: u32,
    #[serde(skip)]
    queries: u32,
}

impl Policy {
    pub fn new(table: VelocityTable, feedback: Feedback, warmup_queries: u32) -> Result<Self> {
        let p = Policy { table, feedback, warmup_queries, queries: 0 };
        p.validate()?;
        Ok(p)
    }

    /// Uniform command for every gait and velocity.
    pub fn constant(mu: f64, omega: f64) -> Self {
        let (pm, pw) = normalize(mu, omega);
        let mut gaits = BTreeMap::new();
        gaits.insert("trot".to_string(), vec![[pm, pw]]);
        Policy {
            table: VelocityTable { knots: vec![0.0], gaits, fallback: "trot".into() },
            feedback: Feedback::ConstantTable,
            warmup_queries: 0,
            queries: 0,
        }
    }

    /// Stride-arithmetic table: `f = 2 + v` Hz and the amplitude giving `v`
    /// at that frequency, for every gait in `gaits`.
    pub fn hand_tuned<'a>(gaits: impl IntoIterator<Item = &'a str>, knots: &[f64], d_step: f64) -> Result<Self> {
        let row: Vec<[f64; 2]> = knots
            .iter()
            .map(|&v| {
                let f = 2.0 + v;
                let mu = (1.0 + v / (4.0 * d_step * f)).min(2.0);
                let (pm, pw) = normalize(mu, f.min(OMEGA_MAX_HZ));
                [pm, pw]
            })
            .collect();
        let gaits: BTreeMap<String, Vec<[f64; 2]>> = gaits.into_iter().map(|g| (g.to_string(), row.clone())).collect();
        let fallback = if gaits.contains_key("trot") {
            "trot".to_string()
        } else {
            gaits.keys().next().cloned().unwrap_or_default()
        };
        Policy::new(VelocityTable { knots: knots.to_vec(), gaits, fallback }, Feedback::ConstantTable, 0)
    }

    /// The shipped baseline checkpoint.
    pub fn baseline() -> Self {
        Policy::from_json(BASELINE_JSON).expect("bundled baseline policy is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.table.validate()?;
        self.feedback.validate()
    }

    pub fn variant(&self) -> Variant {
        self.feedback.variant()
    }

    pub fn with_feedback(mut self, feedback: Feedback) -> Result<Self> {
        self.feedback = feedback;
        self.validate()?;
        Ok(self)
    }

    /// Table entries (gait-major, knot, then `p_μ`, `p_ω`) followed by the
    /// feedback weights.
    pub fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.table.gaits.values().flatten().flatten().copied().collect();
        p.extend(self.feedback.params());
        p
    }

    pub fn num_params(&self) -> usize {
        self.table.gaits.len() * self.table.knots.len() * 2 + self.feedback.params().len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::InvalidConfig(format!(
                "parameter vector has {} entries, policy needs {}",
                p.len(),
                self.num_params()
            )));
        }
        let mut it = p.iter().copied();
        for row in self.table.gaits.values_mut() {
            for e in row.iter_mut() {
                e[0] = it.next().unwrap();
                e[1] = it.next().unwrap();
            }
        }
        let rest: Vec<f64> = it.collect();
        self.feedback.set_params(&rest);
        Ok(())
    }

    /// Offset of the `(p_μ, p_ω)` pair for `gait` at knot `k`.
    pub fn table_index(&self, gait: &str, k: usize) -> Option<usize> {
        let g = self.table.gaits.keys().position(|n| n == gait)?;
        (k < self.table.knots.len()).then_some(2 * (g * self.table.knots.len() + k))
    }

    pub fn table_len(&self) -> usize {
        self.table.gaits.len() * self.table.knots.len() * 2
    }

    /// Command for an observation, without warm-up scaling.
    pub fn command(&self, obs: &Observation, gait: &str) -> ModulationCommand<f64> {
        let [pm, pw] = self.table.lookup(gait, obs.velocity_command);
        let delta = match self.feedback {
            Feedback::ConstantTable => [0.0; ACTION_DIM],
            _ => self.feedback.apply(&features(obs)),
        };
        let mut cmd = ModulationCommand::uniform(0.0, 0.0);
        for i in 0..NUM_LEGS {
            let (mu, omega) = denormalize(pm + delta[i], pw + delta[NUM_LEGS + i]);
            cmd.mu[i] = mu;
            cmd.omega[i] = omega;
        }
        cmd.clamped()
    }

    pub fn to_json(&self) -> Result<String> {
        let c = Checkpoint { schema: POLICY_SCHEMA.into(), version: POLICY_VERSION, policy: self.clone() };
        Ok(serde_json::to_string_pretty(&c)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let schema = v.get("schema").and_then(|s| s.as_str()).unwrap_or_default();
        let version = v.get("version").and_then(|s| s.as_u64()).unwrap_or(0);
        if schema != POLICY_SCHEMA || version != POLICY_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: format!("{POLICY_SCHEMA} v{POLICY_VERSION}"),
                found: format!("{schema} v{version}"),
            });
        }
        let c: Checkpoint = serde_json::from_value(v)?;
        c.policy.validate()?;
        Ok(c.policy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Policy::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

impl Controller for Policy {
    fn act(&mut self, obs: &Observation, gait: &GaitMatrix<f64>) -> ModulationCommand<f64> {
        let mut cmd = self.command(obs, &gait.name);
        if self.queries < self.warmup_queries {
            self.queries += 1;
            let s = self.queries as f64 / self.warmup_queries as f64;
            cmd.mu = cmd.mu.map(|m| MU_MIN + (m - MU_MIN) * s);
        }
        cmd
    }

    fn reset(&mut self) {
        self.queries = 0;
    }
}
