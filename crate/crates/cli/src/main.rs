//! `quadcpg` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 numerical,
//! 6 I/O.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use quadcpg::cpg::GaitLibrary;
use quadcpg::policy::{cpg_param_trace, optimize_es, OptimizerConfig, Policy};
use quadcpg::sim::episode::{run_episode, EpisodeSpec};
use quadcpg::sim::Mode;
use quadcpg::sweep::{self, Metric, PlotKind, SweepSpec};
use quadcpg::{Error, Result};
use quadcpg_server::{replay, serve, ServeOptions, Session};

#[derive(Parser)]
#[command(name = "quadcpg", version, about = "Quadruped CPG gait toolkit")]
struct Cli {
    /// Gait library TOML replacing the built-in nine gaits.
    #[arg(long, global = true, value_name = "FILE")]
    gaits: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Inspect and check gait definitions.
    #[command(subcommand)]
    Gait(GaitCmd),
    /// Run scripted episodes.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Train a policy with evolution strategies.
    Optimize(OptimizeArgs),
    /// Run (or resume) a gait × style × velocity sweep.
    Sweep(SweepArgs),
    /// Per gait and velocity, the style minimizing a metric.
    Best(BestArgs),
    /// Write plot-ready CSV and JSON series from sweep results.
    Plotdata(PlotArgs),
    /// Serve a live simulation over a websocket.
    Serve(ServeArgs),
    /// Re-simulate a recorded live session and compare telemetry.
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum GaitCmd {
    /// List gait names and touchdown phases.
    List,
    /// Print one gait's phases and coupling offsets.
    Show { name: String },
    /// Check a gait library file.
    Validate { file: PathBuf },
    /// Print the active library as TOML.
    Dump {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run one episode from a TOML spec and print its metrics as JSON.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    script: PathBuf,
    /// Policy checkpoint; the bundled baseline when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Mean μ and ω per commanded velocity, as CSV.
    #[arg(long)]
    cpg_trace: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Starting checkpoint; built from the config's `init` section when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Convergence trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec TOML.
    #[arg(long, required_unless_present = "paper_grid")]
    spec: Option<PathBuf>,
    /// Use the full 9 × 100 × 28 grid (repeats and seed from `--spec` are ignored).
    #[arg(long)]
    paper_grid: bool,
    /// Output directory holding the journal and results.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's repeats.
    #[arg(long)]
    repeats: Option<u32>,
}

#[derive(Args)]
struct BestArgs {
    #[arg(long)]
    results: PathBuf,
    /// cot, ang_vel or joint_acc.
    #[arg(long, default_value = "cot")]
    metric: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    results: PathBuf,
    /// cot, style, ang_vel, residual or all.
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode spec TOML: initial gait, style, velocity and timed events.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// UI bundle directory served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Write the session recording here on Ctrl-C.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    recording: PathBuf,
    /// Replay under another seed (expected to diverge).
    #[arg(long)]
    seed: Option<u64>,
    /// Telemetry frames as JSON lines.
    #[arg(long)]
    frames: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        // output piped into a closed reader, e.g. `| head`
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error ({cat:?}): {e}");
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let library = match &cli.gaits {
        Some(p) => GaitLibrary::load(p)?,
        None => GaitLibrary::default(),
    };
    match cli.cmd {
        Cmd::Gait(c) => gait(c, &library),
        Cmd::Scenario(ScenarioCmd::Run(a)) => scenario_run(a, &library),
        Cmd::Optimize(a) => optimize(a, &library),
        Cmd::Sweep(a) => run_sweep(a, &library),
        Cmd::Best(a) => best(a),
        Cmd::Plotdata(a) => plotdata(a),
        Cmd::Serve(a) => serve_cmd(a, library),
        Cmd::Replay(a) => replay_cmd(a, &library),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_policy(path: Option<&Path>) -> Result<Policy> {
    path.map_or_else(|| Ok(Policy::baseline()), Policy::load)
}

fn gait(c: GaitCmd, library: &GaitLibrary) -> Result<ExitCode> {
    match c {
        GaitCmd::List => {
            let mut text = String::new();
            for name in library.names() {
                let e = library.entry(name).expect("listed gait exists");
                let phases: Vec<String> = e.phase.iter().map(|p| format!("{p:.3}")).collect();
                text += &format!("{name:<18} FR FL HR HL = {}\n", phases.join(" "));
            }
            write_or_print(None, &text)?;
        }
        GaitCmd::Show { name } => {
            let g = library.get::<f64>(&name)?;
            let out = json!({
                "name": g.name,
                "phase_rad": g.phase,
                "fractions": g.fractions(),
                "phi": g.phi,
            });
            write_or_print(None, &(serde_json::to_string_pretty(&out)? + "\n"))?;
        }
        GaitCmd::Validate { file } => {
            let lib = GaitLibrary::load(&file)?;
            println!("ok: {} gaits ({})", lib.names().count(), lib.names().collect::<Vec<_>>().join(", "));
        }
        GaitCmd::Dump { out } => write_or_print(out.as_deref(), &library.dump())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario_run(a: RunArgs, library: &GaitLibrary) -> Result<ExitCode> {
    let mut spec = EpisodeSpec::from_toml(&fs::read_to_string(&a.script)?)?;
    if let Some(m) = a.mode {
        spec.sim.mode = m;
    }
    if let Some(s) = a.seed {
        spec.sim.seed = s;
    }
    let policy = load_policy(a.policy.as_deref())?;
    let ep = run_episode(policy, &spec, library)?;
    if let Some(p) = &a.log {
        ep.log.write_csv(fs::File::create(p)?)?;
    }
    if let Some(p) = &a.cpg_trace {
        let rows = cpg_param_trace(&ep.log, spec.metrics_from)?;
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["velocity", "samples", "mean_mu", "mean_omega", "mu_fr", "mu_fl", "mu_hr", "mu_hl", "omega_fr", "omega_fl", "omega_hr", "omega_hl"])?;
        for r in rows {
            let mut rec = vec![r.velocity.to_string(), r.samples.to_string(), r.mean_mu.to_string(), r.mean_omega.to_string()];
            rec.extend(r.mu.iter().chain(&r.omega).map(|x| x.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
    }
    let summary = json!({
        "termination": ep.termination,
        "metrics": ep.metrics,
        "total_return": ep.total_return,
        "steps": ep.steps,
        "policy_queries": ep.policy_queries,
        "ik_clamps": ep.ik_clamps,
        "mass": ep.mass,
    });
    write_or_print(None, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

fn optimize(a: OptimizeArgs, library: &GaitLibrary) -> Result<ExitCode> {
    let cfg = OptimizerConfig::from_toml(&fs::read_to_string(&a.config)?)?;
    let init = match &a.init {
        Some(p) => Policy::load(p)?,
        None => cfg.initial_policy(library)?,
    };
    let out = optimize_es(&cfg, &init, library)?;
    out.policy.save(&a.out)?;
    if let Some(p) = &a.trace {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["task", "iteration", "center", "mean", "best_sample", "best_so_far", "sigma", "step_size", "faulted"])?;
        for (label, rows) in &out.traces {
            for r in rows {
                w.write_record([
                    label.clone(),
                    r.iteration.to_string(),
                    r.center.to_string(),
                    r.mean.to_string(),
                    r.best_sample.to_string(),
                    r.best_so_far.to_string(),
                    r.sigma.to_string(),
                    r.step_size.to_string(),
                    r.faulted.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    eprintln!("fitness {:.4} -> {:.4}; wrote {}", out.initial_fitness, out.best_fitness, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(a: SweepArgs, library: &GaitLibrary) -> Result<ExitCode> {
    let mut spec = match &a.spec {
        Some(p) => SweepSpec::from_toml(&fs::read_to_string(p)?)?,
        None => SweepSpec::default(),
    };
    if a.paper_grid {
        let g = SweepSpec::paper_grid();
        spec = SweepSpec { gaits: g.gaits, h: g.h, g_c: g.g_c, x_off: g.x_off, velocities: g.velocities, ..spec };
    }
    if let Some(r) = a.repeats {
        spec.repeats = r;
    }
    let rows = sweep::run_sweep(&spec, &a.out, library, |p| {
        eprintln!("{}/{} cells ({} resumed)", p.done, p.total, p.resumed);
    })?;
    let faulted = rows.iter().filter(|r| r.faulted()).count();
    eprintln!(
        "{} rows, {faulted} flagged; results in {}",
        rows.len(),
        a.out.join(sweep::RESULTS_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn best(a: BestArgs) -> Result<ExitCode> {
    let metric: Metric = a.metric.parse()?;
    let rows = sweep::read_results(&a.results)?;
    let best = sweep::best_per_velocity(&rows, metric)?;
    let bytes = sweep::best_csv(&best)?;
    write_or_print(a.out.as_deref(), &String::from_utf8_lossy(&bytes))?;
    Ok(ExitCode::SUCCESS)
}

fn plotdata(a: PlotArgs) -> Result<ExitCode> {
    let kinds: Vec<PlotKind> = if a.kind == "all" { PlotKind::ALL.to_vec() } else { vec![a.kind.parse()?] };
    let rows = sweep::read_results(&a.results)?;
    for k in kinds {
        for p in sweep::emit_plotdata(&rows, k, &a.out)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve_cmd(a: ServeArgs, library: GaitLibrary) -> Result<ExitCode> {
    let mut spec = match &a.scenario {
        Some(p) => EpisodeSpec::from_toml(&fs::read_to_string(p)?)?,
        None => EpisodeSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.sim.seed = s;
    }
    if let Some(m) = a.mode {
        spec.sim.mode = m;
    }
    let policy = load_policy(a.policy.as_deref())?;
    let session = Session::new(spec, policy, library)?;
    let opts = ServeOptions { bind: a.bind, static_dir: a.static_dir, speed_factor: a.speed, start_paused: false };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let srv = serve(session, opts).await?;
        eprintln!("listening on http://{} (websocket at /ws); Ctrl-C to stop", srv.addr);
        tokio::signal::ctrl_c().await?;
        let rec = srv.shutdown().await;
        if let (Some(path), Some(rec)) = (&a.record, rec) {
            rec.save(path)?;
            eprintln!("recording written to {}", path.display());
        }
        Ok::<_, Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(a: ReplayArgs, library: &GaitLibrary) -> Result<ExitCode> {
    let rec = quadcpg_server::Recording::load(&a.recording)?;
    let mut out = match &a.frames {
        Some(p) => Some(std::io::BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    let mut io_err = None;
    let report = replay(&rec, a.seed, library, |f| {
        if let Some(w) = out.as_mut() {
            let line = serde_json::to_string(f).expect("frames serialize");
            if let Err(e) = writeln!(w, "{line}") {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "identical": report.identical(),
            "frames": report.frames,
            "expected_frames": rec.frames,
            "ticks": report.ticks,
            "digest": report.digest,
            "expected_digest": report.expected_digest,
        }))?
    );
    if report.identical() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("replay diverged from the recording");
        Ok(ExitCode::from(quadcpg::ErrorCategory::Numerical.exit_code() as u8))
    }
}
