use quadcpg::cpg::GaitLibrary;
use quadcpg::policy::Policy;
use quadcpg::sim::episode::EpisodeSpec;
use quadcpg::sim::scenario::GaitSpec;
use quadcpg::sim::{Mode, SimConfig};
use quadcpg::Error;
use quadcpg_server::session::RECORDING_VERSION;
use quadcpg_server::{replay, Command, Recording, Session};

fn session(mode: Mode) -> Session {
    let spec = EpisodeSpec { sim: SimConfig { mode, seed: 11, ..SimConfig::default() }, ..EpisodeSpec::default() };
    Session::new(spec, Policy::baseline(), GaitLibrary::default()).unwrap()
}

fn run(s: &mut Session, ticks: u64) {
    for _ in 0..ticks {
        s.step().unwrap();
    }
}

#[test]
fn telemetry_is_exactly_50_per_simulated_second() {
    let mut s = session(Mode::Kinematic);
    run(&mut s, 300);
    let f = s.drain_frames();
    // initial frame plus one per 20 ms
    assert_eq!(f.len(), 1 + 150);
    assert!(f.windows(2).all(|w| (w[1].t - w[0].t - 0.02).abs() < 1e-9 && w[1].seq == w[0].seq + 1));
}

#[test]
fn empty_log_replays_the_scripted_run() {
    let mut s = session(Mode::Kinematic);
    run(&mut s, 200);
    let rec = s.recording();
    assert!(rec.commands.is_empty());
    let rep = replay(&rec, None, &GaitLibrary::default(), |_| {}).unwrap();
    assert!(rep.identical());
    assert_eq!((rep.ticks, rep.frames), (200, 101));
}

#[test]
fn gait_transition_demo_replays_in_dynamic_mode() {
    let mut s = session(Mode::Dynamic);
    run(&mut s, 150);
    s.apply(&Command::SetGait { gait: GaitSpec::Named("pace".into()) }).unwrap();
    run(&mut s, 150);
    s.apply(&Command::Push { magnitude: 0.2, direction: None }).unwrap();
    s.apply(&Command::SetVelocity { velocity: 0.8 }).unwrap();
    run(&mut s, 100);
    let rec = Recording::from_json(&s.recording().to_json().unwrap()).unwrap();
    assert_eq!(rec.commands.iter().map(|c| c.tick).collect::<Vec<_>>(), vec![150, 300, 300]);
    let mut frames = Vec::new();
    let rep = replay(&rec, None, &GaitLibrary::default(), |f| frames.push(f.clone())).unwrap();
    assert!(rep.identical(), "{rep:?}");
    assert_eq!(frames.last().unwrap().gait, "pace");
    assert!(!replay(&rec, Some(12), &GaitLibrary::default(), |_| {}).unwrap().identical());
}

#[test]
fn pacing_commands_are_not_recorded() {
    let mut s = session(Mode::Kinematic);
    s.apply(&Command::Pause).unwrap();
    s.apply(&Command::SetSpeedFactor { factor: 3.0 }).unwrap();
    assert!(s.recording().commands.is_empty());
}

#[test]
fn invalid_command_leaves_state_alone() {
    let mut s = session(Mode::Kinematic);
    run(&mut s, 10);
    let before = s.sim().style().h;
    let mut bad = *s.sim().style();
    bad.h = 0.5;
    assert!(s.apply(&Command::SetStyle { style: bad }).is_err());
    assert_eq!(s.sim().style().h, before);
    assert!(s.recording().commands.is_empty());
}

#[test]
fn reset_restarts_time_and_bumps_episode() {
    let mut s = session(Mode::Kinematic);
    run(&mut s, 50);
    s.drain_frames();
    s.apply(&Command::Reset).unwrap();
    let f = s.drain_frames();
    assert_eq!(f.len(), 1);
    assert_eq!((f[0].t, f[0].episode, f[0].tick), (0.0, 1, 50));
}

#[test]
fn recording_version_mismatch_refused() {
    let s = session(Mode::Kinematic);
    let mut v: serde_json::Value = serde_json::from_str(&s.recording().to_json().unwrap()).unwrap();
    v["version"] = (RECORDING_VERSION + 1).into();
    assert!(matches!(Recording::from_json(&v.to_string()), Err(Error::VersionMismatch { .. })));
}

