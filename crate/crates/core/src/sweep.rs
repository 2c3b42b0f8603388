//! Grid sweeps over gait × style × velocity with an append-only journal,
//! argmin tables and plot-ready series.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpg::GaitLibrary;
use crate::error::{Error, Result};
use crate::metrics::joint_acc_residuals;
use crate::pattern::StyleParams;
use crate::policy::Policy;
use crate::sim::episode::{run_episode, EpisodeSpec};
use crate::sim::scenario::GaitSpec;
use crate::sim::{Mode, SimConfig, Termination};

pub const JOURNAL_SCHEMA: &str = "quadcpg-sweep-journal";
pub const JOURNAL_VERSION: u32 = 1;
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const RESULTS_FILE: &str = "results.csv";

/// Cells evaluated between journal flushes.
const BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub gaits: Vec<String>,
    pub h: Vec<f64>,
    pub g_c: Vec<f64>,
    pub x_off: Vec<f64>,
    pub velocities: Vec<f64>,
    pub repeats: u32,
    pub seed: u64,
    pub mode: Mode,
    /// Checkpoint path; `None` uses the bundled baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    pub episode_length: f64,
    pub metrics_from: f64,
    /// Stance penetration shared by every cell.
    pub g_p: f64,
    /// Physics overrides applied to every cell (mode and seed are replaced).
    pub sim: SimConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            gaits: vec!["trot".into()],
            h: vec![0.3],
            g_c: vec![0.05],
            x_off: vec![0.0],
            velocities: vec![0.5],
            repeats: 8,
            seed: 0,
            mode: Mode::Kinematic,
            policy: None,
            episode_length: 5.0,
            metrics_from: 2.0,
            g_p: 0.01,
            sim: SimConfig::default(),
        }
    }
}

/// One grid point and repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub gait: String,
    pub style: StyleParams<f64>,
    pub velocity: f64,
    pub repeat: u32,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SweepSpec {
    /// The full grid: 9 gaits, 5 heights × 4 clearances × 5 offsets, 28
    /// velocities from 0.3 to 3.0 m/s.
    pub fn paper_grid() -> Self {
        SweepSpec {
            gaits: crate::cpg::GaitName::ALL.iter().map(|g| g.id().to_string()).collect(),
            h: vec![0.18, 0.22, 0.26, 0.30, 0.34],
            g_c: vec![0.02, 0.05, 0.08, 0.12],
            x_off: vec![-0.075, -0.05, -0.025, 0.0, 0.025],
            velocities: (3..=30).map(|k| k as f64 / 10.0).collect(),
            ..SweepSpec::default()
        }
    }

    pub fn validate(&self, library: &GaitLibrary) -> Result<()> {
        let lists = [
            ("gaits", self.gaits.len()),
            ("h", self.h.len()),
            ("g_c", self.g_c.len()),
            ("x_off", self.x_off.len()),
            ("velocities", self.velocities.len()),
        ];
        for (name, n) in lists {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("sweep list `{name}` is empty")));
            }
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        for g in &self.gaits {
            library.get::<f64>(g)?;
        }
        for &h in &self.h {
            for &g_c in &self.g_c {
                for &x_off in &self.x_off {
                    StyleParams { h, g_c, x_off, g_p: self.g_p, ..StyleParams::default() }.validate()?;
                }
            }
        }
        if self.velocities.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("velocities must be finite".into()));
        }
        if !(self.episode_length > 0.0 && self.metrics_from >= 0.0 && self.metrics_from < self.episode_length) {
            return Err(Error::InvalidConfig("need 0 <= metrics_from < episode_length".into()));
        }
        self.sim.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn num_cells(&self) -> usize {
        self.gaits.len() * self.h.len() * self.g_c.len() * self.x_off.len() * self.velocities.len() * self.repeats as usize
    }

    /// Cells in gait, h, g_c, x_off, velocity, repeat order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.num_cells());
        for gait in &self.gaits {
            for &h in &self.h {
                for &g_c in &self.g_c {
                    for &x_off in &self.x_off {
                        for &velocity in &self.velocities {
                            for repeat in 0..self.repeats {
                                let index = out.len();
                                out.push(Cell {
                                    index,
                                    gait: gait.clone(),
                                    style: StyleParams { h, g_c, x_off, g_p: self.g_p, ..StyleParams::default() },
                                    velocity,
                                    repeat,
                                    seed: splitmix(self.seed ^ splitmix(index as u64)),
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Hash of everything that affects results, stored in the journal header.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self)?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }

    pub fn load_policy(&self) -> Result<Policy> {
        match &self.policy {
            Some(p) => Policy::load(p),
            None => Ok(Policy::baseline()),
        }
    }
}

/// One episode outcome. Falls and faults are flagged, never dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub cell: usize,
    pub gait: String,
    pub h: f64,
    pub g_c: f64,
    pub x_off: f64,
    pub velocity: f64,
    pub repeat: u32,
    pub seed: u64,
    pub cot: Option<f64>,
    pub mean_vx: f64,
    pub mean_ang_vel: f64,
    pub mean_joint_acc: f64,
    pub mean_power: f64,
    pub total_return: f64,
    /// `completed`, `fall` or `fault`.
    pub outcome: String,
    pub end_time: f64,
}

impl ResultRow {
    pub fn faulted(&self) -> bool {
        self.outcome != "completed"
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        if self.faulted() {
            return None;
        }
        match m {
            Metric::Cot => self.cot,
            Metric::AngVel => Some(self.mean_ang_vel),
            Metric::JointAcc => Some(self.mean_joint_acc),
        }
    }
}

pub fn run_cell(cell: &Cell, spec: &SweepSpec, policy: &Policy, library: &GaitLibrary) -> Result<ResultRow> {
    let ep_spec = EpisodeSpec {
        sim: SimConfig { mode: spec.mode, seed: cell.seed, ..spec.sim.clone() },
        gait: GaitSpec::Named(cell.gait.clone()),
        style: cell.style,
        velocity: cell.velocity,
        duration: Some(spec.episode_length),
        metrics_from: spec.metrics_from,
        ..EpisodeSpec::default()
    };
    let ep = run_episode(policy.clone(), &ep_spec, library)?;
    let outcome = match ep.termination {
        Termination::Completed { .. } => "completed",
        Termination::Fall { .. } => "fall",
        Termination::Fault { .. } => "fault",
    };
    let m = &ep.metrics;
    Ok(ResultRow {
        cell: cell.index,
        gait: cell.gait.clone(),
        h: cell.style.h,
        g_c: cell.style.g_c,
        x_off: cell.style.x_off,
        velocity: cell.velocity,
        repeat: cell.repeat,
        seed: cell.seed,
        cot: m.cot,
        mean_vx: m.mean_vx,
        mean_ang_vel: m.mean_ang_vel,
        mean_joint_acc: m.mean_joint_acc,
        mean_power: m.mean_power,
        total_return: ep.total_return,
        outcome: outcome.into(),
        end_time: ep.termination.time(),
    })
}

#[derive(Serialize, Deserialize)]
struct JournalHeader {
    schema: String,
    version: u32,
    fingerprint: String,
    cells: usize,
}

/// Completed rows from an existing journal. A final line without a newline
/// (interrupted write) is discarded and truncated away.
fn read_journal(path: &Path, fingerprint: &str, cells: usize) -> Result<BTreeMap<usize, ResultRow>> {
    let mut rows = BTreeMap::new();
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < text.len() {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(complete as u64)?;
    }
    let mut lines = text[..complete].lines().enumerate();
    match lines.next() {
        None => return Ok(rows),
        Some((_, first)) => {
            let h: JournalHeader = serde_json::from_str(first)
                .map_err(|e| Error::JournalCorrupt { line: 1, reason: format!("bad header: {e}") })?;
            if h.schema != JOURNAL_SCHEMA || h.version != JOURNAL_VERSION {
                return Err(Error::VersionMismatch {
                    expected: format!("{JOURNAL_SCHEMA} v{JOURNAL_VERSION}"),
                    found: format!("{} v{}", h.schema, h.version),
                });
            }
            if h.fingerprint != fingerprint || h.cells != cells {
                return Err(Error::JournalCorrupt {
                    line: 1,
                    reason: "journal belongs to a different sweep spec".into(),
                });
            }
        }
    }
    for (i, line) in lines {
        let row: ResultRow = serde_json::from_str(line)
            .map_err(|e| Error::JournalCorrupt { line: i + 1, reason: e.to_string() })?;
        if row.cell >= cells {
            return Err(Error::JournalCorrupt { line: i + 1, reason: format!("cell {} out of range", row.cell) });
        }
        rows.insert(row.cell, row);
    }
    Ok(rows)
}

/// Progress report after each journal flush.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub resumed: usize,
}

/// Runs every cell not yet in `out_dir/journal.jsonl`, then writes
/// `out_dir/results.csv` sorted by cell. Returns all rows.
pub fn run_sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    library: &GaitLibrary,
    mut progress: impl FnMut(Progress),
) -> Result<Vec<ResultRow>> {
    spec.validate(library)?;
    let policy = spec.load_policy()?;
    fs::create_dir_all(out_dir)?;
    let cells = spec.cells();
    let fp = spec.fingerprint()?;
    let journal = out_dir.join(JOURNAL_FILE);
    let mut done = if journal.exists() { read_journal(&journal, &fp, cells.len())? } else { BTreeMap::new() };
    let mut file = OpenOptions::new().create(true).append(true).open(&journal)?;
    if file.metadata()?.len() == 0 {
        let h = JournalHeader { schema: JOURNAL_SCHEMA.into(), version: JOURNAL_VERSION, fingerprint: fp, cells: cells.len() };
        file.write_all(format!("{}\n", serde_json::to_string(&h)?).as_bytes())?;
        file.sync_data()?;
    }
    let resumed = done.len();
    let todo: Vec<&Cell> = cells.iter().filter(|c| !done.contains_key(&c.index)).collect();
    for batch in todo.chunks(BATCH) {
        let rows: Vec<Result<ResultRow>> = batch.par_iter().map(|c| run_cell(c, spec, &policy, library)).collect();
        for r in rows {
            let row = r?;
            // one write per row keeps each journal line whole
            file.write_all(format!("{}\n", serde_json::to_string(&row)?).as_bytes())?;
            done.insert(row.cell, row);
        }
        file.sync_data()?;
        progress(Progress { done: done.len(), total: cells.len(), resumed });
    }
    let rows: Vec<ResultRow> = done.into_values().collect();
    write_atomic(&out_dir.join(RESULTS_FILE), &results_csv(&rows)?)?;
    Ok(rows)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<ResultRow>, _> = r.deserialize().collect();
    Ok(rows?)
}

/// Journal rows without the header, for inspection.
pub fn read_journal_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate().skip(1) {
        let line = line?;
        out.push(serde_json::from_str(&line).map_err(|e| Error::JournalCorrupt { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cot,
    AngVel,
    JointAcc,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cot" => Ok(Metric::Cot),
            "ang_vel" => Ok(Metric::AngVel),
            "joint_acc" => Ok(Metric::JointAcc),
            _ => Err(Error::InvalidConfig(format!("unknown metric `{s}` (expected cot, ang_vel or joint_acc)"))),
        }
    }
}

/// Minimum of a metric for one gait and velocity, and the style achieving it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub gait: String,
    pub velocity: f64,
    pub h: f64,
    pub g_c: f64,
    pub x_off: f64,
    /// Mean over the non-faulted repeats of the chosen style.
    pub value: f64,
    pub repeats: usize,
    /// Faulted repeats across all styles at this gait and velocity.
    pub faulted: usize,
}

/// Mean per (gait, velocity, style) over non-faulted repeats.
fn style_means(rows: &[ResultRow], metric: Metric) -> BTreeMap<(String, u64), Vec<(StyleKey, f64, usize)>> {
    let mut acc: BTreeMap<(String, u64, StyleKey), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(v) = r.metric(metric) {
            let e = acc.entry((r.gait.clone(), r.velocity.to_bits(), StyleKey::of(r))).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut out: BTreeMap<(String, u64), Vec<(StyleKey, f64, usize)>> = BTreeMap::new();
    for ((g, v, s), (sum, n)) in acc {
        out.entry((g, v)).or_default().push((s, sum / n as f64, n));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct StyleKey {
    h: u64,
    g_c: u64,
    x_off: u64,
}

impl StyleKey {
    fn of(r: &ResultRow) -> Self {
        StyleKey { h: r.h.to_bits(), g_c: r.g_c.to_bits(), x_off: r.x_off.to_bits() }
    }

    fn values(self) -> (f64, f64, f64) {
        (f64::from_bits(self.h), f64::from_bits(self.g_c), f64::from_bits(self.x_off))
    }
}

/// `true` if style `a` wins a tie against `b`: lower g_c, then higher h,
/// then lower |x_off|, then lower x_off.
fn tie_break(a: StyleKey, b: StyleKey) -> bool {
    let (ha, ga, xa) = a.values();
    let (hb, gb, xb) = b.values();
    (ga, -ha, xa.abs(), xa) < (gb, -hb, xb.abs(), xb)
}

/// Argmin of `metric` over styles for every (gait, velocity), sorted by
/// gait then velocity.
pub fn best_per_velocity(rows: &[ResultRow], metric: Metric) -> Result<Vec<BestRow>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no result rows".into()));
    }
    let means = style_means(rows, metric);
    if means.is_empty() {
        return Err(Error::InsufficientData(format!("metric {metric:?} absent from every row")));
    }
    let mut faults: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.faulted()) {
        *faults.entry((r.gait.clone(), r.velocity.to_bits())).or_default() += 1;
    }
    let mut out = Vec::new();
    for ((gait, v), styles) in means {
        let mut best = styles[0];
        for &s in &styles[1..] {
            if s.1 < best.1 || (s.1 == best.1 && tie_break(s.0, best.0)) {
                best = s;
            }
        }
        let (h, g_c, x_off) = best.0.values();
        out.push(BestRow {
            faulted: faults.get(&(gait.clone(), v)).copied().unwrap_or(0),
            gait,
            velocity: f64::from_bits(v),
            h,
            g_c,
            x_off,
            value: best.1,
            repeats: best.2,
        });
    }
    out.sort_by(|a, b| a.gait.cmp(&b.gait).then(a.velocity.total_cmp(&b.velocity)));
    Ok(out)
}

pub fn best_csv(rows: &[BestRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Minimum COT over styles against velocity, per gait.
    Cot,
    /// The minimizing h, g_c and x_off against velocity, per gait.
    Style,
    /// Minimum base angular velocity against velocity, per gait.
    AngVel,
    /// Minimum joint acceleration minus the all-gait mean, per velocity.
    Residual,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Cot, PlotKind::Style, PlotKind::AngVel, PlotKind::Residual];

    pub fn id(self) -> &'static str {
        match self {
            PlotKind::Cot => "cot",
            PlotKind::Style => "style",
            PlotKind::AngVel => "ang_vel",
            PlotKind::Residual => "residual",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown plot kind `{s}` (expected cot, style, ang_vel or residual)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub gait: String,
    /// Column name of `y`.
    pub quantity: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub kind: PlotKind,
    pub series: Vec<Series>,
}

fn series_from_best(best: &[BestRow], quantity: &str, f: impl Fn(&BestRow) -> f64) -> Vec<Series> {
    let mut by_gait: BTreeMap<&str, Vec<[f64; 2]>> = BTreeMap::new();
    for b in best {
        by_gait.entry(&b.gait).or_default().push([b.velocity, f(b)]);
    }
    by_gait
        .into_iter()
        .map(|(g, points)| Series { gait: g.to_string(), quantity: quantity.to_string(), points })
        .collect()
}

pub fn plot_data(rows: &[ResultRow], kind: PlotKind) -> Result<PlotData> {
    let series = match kind {
        PlotKind::Cot => series_from_best(&best_per_velocity(rows, Metric::Cot)?, "cot", |b| b.value),
        PlotKind::AngVel => series_from_best(&best_per_velocity(rows, Metric::AngVel)?, "ang_vel", |b| b.value),
        PlotKind::Style => {
            let best = best_per_velocity(rows, Metric::Cot)?;
            let mut s = series_from_best(&best, "h", |b| b.h);
            s.extend(series_from_best(&best, "g_c", |b| b.g_c));
            s.extend(series_from_best(&best, "x_off", |b| b.x_off));
            s
        }
        PlotKind::Residual => {
            let best = best_per_velocity(rows, Metric::JointAcc)?;
            let mut bins: BTreeMap<u64, Vec<(String, f64)>> = BTreeMap::new();
            for b in &best {
                bins.entry(b.velocity.to_bits()).or_default().push((b.gait.clone(), b.value));
            }
            let mut input: Vec<(f64, Vec<(String, f64)>)> =
                bins.into_iter().filter(|(_, e)| e.len() >= 2).map(|(v, e)| (f64::from_bits(v), e)).collect();
            input.sort_by(|a, b| a.0.total_cmp(&b.0));
            joint_acc_residuals(&input)?
                .into_iter()
                .map(|(g, pts)| Series { gait: g, quantity: "joint_acc_residual".into(), points: pts.into_iter().map(|(v, r)| [v, r]).collect() })
                .collect()
        }
    };
    Ok(PlotData { kind, series })
}

/// Writes `<kind>.csv` (gait, quantity, velocity, value) and `<kind>.json`.
pub fn emit_plotdata(rows: &[ResultRow], kind: PlotKind, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = plot_data(rows, kind)?;
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gait", "quantity", "velocity", "value"])?;
    for s in &data.series {
        for [v, y] in &s.points {
            w.write_record([s.gait.as_str(), s.quantity.as_str(), &v.to_string(), &y.to_string()])?;
        }
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let csv_path = out_dir.join(format!("{}.csv", kind.id()));
    let json_path = out_dir.join(format!("{}.json", kind.id()));
    write_atomic(&csv_path, &csv_bytes)?;
    write_atomic(&json_path, (serde_json::to_string_pretty(&data)? + "\n").as_bytes())?;
    Ok(vec![csv_path, json_path])
}

/// Distinct gaits present in `rows`.
pub fn gaits_in(rows: &[ResultRow]) -> BTreeSet<String> {
    rows.iter().map(|r| r.gait.clone()).collect()
}
