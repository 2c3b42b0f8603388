use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

use quadcpg::cpg::GaitLibrary;
use quadcpg::policy::Policy;
use quadcpg::sim::episode::EpisodeSpec;
use quadcpg::sim::{Mode, SimConfig};
use quadcpg_server::{replay, serve, ServeOptions, Session};

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

fn spec() -> EpisodeSpec {
    EpisodeSpec {
        sim: SimConfig { mode: Mode::Kinematic, seed: 5, ..SimConfig::default() },
        velocity: 0.5,
        ..EpisodeSpec::default()
    }
}

async fn start(speed: f64, static_dir: Option<std::path::PathBuf>) -> quadcpg_server::LiveServer {
    let session = Session::new(spec(), Policy::baseline(), GaitLibrary::default()).unwrap();
    let opts = ServeOptions { bind: ([127, 0, 0, 1], 0).into(), static_dir, speed_factor: speed, start_paused: false };
    serve(session, opts).await.unwrap()
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").as_bytes())
        .await
        .unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).await.unwrap();
    let text = String::from_utf8_lossy(&buf).to_string();
    let status = text[9..12].parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.expect("message in time").unwrap().unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Reads until a message of type `ty` arrives, collecting telemetry on the way.
async fn until(ws: &mut Ws, ty: &str, frames: &mut Vec<Value>) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == "telemetry" {
            frames.push(v.clone());
        }
        if v["type"] == ty {
            return v;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_schema_and_placeholder() {
    let srv = start(20.0, None).await;
    let (code, body) = http_get(srv.addr, "/health").await;
    assert_eq!(code, 200);
    let h: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["version"], 1);
    let (code, body) = http_get(srv.addr, "/schema").await;
    assert_eq!(code, 200);
    let s: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(s["telemetry_hz"], 50.0);
    assert_eq!(s["gaits"].as_array().unwrap().len(), 9);
    assert!(s["commands"].as_array().unwrap().iter().any(|c| c == "set_gait"));
    assert_eq!(s["ranges"]["h"], json!([0.18, 0.35]));
    let (code, body) = http_get(srv.addr, "/").await;
    assert_eq!(code, 200);
    assert!(body.contains("/ws"));
    srv.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_static_bundle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>commander</h1>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let srv = start(20.0, Some(dir.path().to_path_buf())).await;
    let (code, body) = http_get(srv.addr, "/").await;
    assert_eq!((code, body.as_str()), (200, "<h1>commander</h1>"));
    let (code, body) = http_get(srv.addr, "/app.js").await;
    assert_eq!((code, body.as_str()), (200, "console.log(1)"));
    assert_eq!(http_get(srv.addr, "/missing.css").await.0, 404);
    assert_eq!(http_get(srv.addr, "/health").await.0, 200);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn gait_switch_relocks_and_telemetry_is_50hz() {
    let srv = start(25.0, None).await;
    let mut ws = connect(srv.addr).await;
    let hello = next_json(&mut ws).await;
    assert_eq!(hello["type"], "hello");
    assert_eq!(hello["version"], 1);

    let mut frames = Vec::new();
    while frames.len() < 60 {
        until(&mut ws, "telemetry", &mut frames).await;
    }
    assert!(frames.iter().all(|f| f["gait"] == "trot" && f["version"] == 1));
    send(&mut ws, json!({"version": 1, "id": 1, "type": "set_gait", "gait": "pace"})).await;
    let ack = until(&mut ws, "ack", &mut frames).await;
    assert_eq!(ack["id"], 1);
    assert_eq!(ack["command"], "set_gait");
    let t_switch = frames.last().unwrap()["t"].as_f64().unwrap();
    let mut locked_at = None;
    while locked_at.is_none() {
        let f = until(&mut ws, "telemetry", &mut frames).await;
        let t = f["t"].as_f64().unwrap();
        if f["gait"] == "pace" && f["phase_error"].as_f64().unwrap() < 0.05 {
            locked_at = Some(t);
        }
        assert!(t - t_switch < 5.0, "no lock within 5 s");
    }

    // exact 20 ms spacing, monotone time, consecutive seq
    for w in frames.windows(2) {
        assert_eq!(w[1]["seq"].as_u64().unwrap(), w[0]["seq"].as_u64().unwrap() + 1);
        let dt = w[1]["t"].as_f64().unwrap() - w[0]["t"].as_f64().unwrap();
        assert!((dt - 0.02).abs() < 1e-9, "dt {dt}");
    }
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_commands_rejected_without_state_change() {
    let srv = start(20.0, None).await;
    let mut ws = connect(srv.addr).await;
    next_json(&mut ws).await;
    let mut frames = Vec::new();
    let cases = [
        (json!({"version": 1, "id": 1, "type": "set_style", "style": {"h": 0.5, "g_c": 0.05, "g_p": 0.01, "x_off": 0.0}}), "out_of_range"),
        (json!({"version": 1, "id": 2, "type": "set_gait", "gait": "hop"}), "unknown_gait"),
        (json!({"version": 1, "id": 3, "type": "push", "magnitude": 0.9}), "out_of_range"),
        (json!({"version": 7, "id": 4, "type": "pause"}), "unsupported_version"),
        (json!({"version": 1, "id": 5, "type": "teleport"}), "unknown_type"),
        (json!({"version": 1, "id": 6, "type": "set_velocity"}), "invalid_payload"),
    ];
    for (msg, code) in cases {
        send(&mut ws, msg.clone()).await;
        let e = until(&mut ws, "error", &mut frames).await;
        assert_eq!(e["code"], code, "{msg}");
        assert_eq!(e["id"], msg["id"]);
    }
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert_eq!(until(&mut ws, "error", &mut frames).await["code"], "invalid_json");
    for _ in 0..5 {
        until(&mut ws, "telemetry", &mut frames).await;
    }
    assert!(frames.iter().all(|f| f["style"]["h"] == 0.3 && f["gait"] == "trot"));
    let rec = srv.recording().await.unwrap();
    assert!(rec.commands.is_empty());

    send(&mut ws, json!({"version": 1, "id": 9, "type": "set_style", "style": {"h": 0.22, "g_c": 0.05, "g_p": 0.01, "x_off": 0.0}})).await;
    until(&mut ws, "ack", &mut frames).await;
    let f = until(&mut ws, "telemetry", &mut frames).await;
    assert_eq!(f["style"]["h"], 0.22);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_stops_time_and_resume_continues() {
    let srv = start(20.0, None).await;
    let mut ws = connect(srv.addr).await;
    next_json(&mut ws).await;
    let mut frames = Vec::new();
    send(&mut ws, json!({"version": 1, "type": "pause"})).await;
    until(&mut ws, "ack", &mut frames).await;
    let h1: Value = serde_json::from_str(&http_get(srv.addr, "/health").await.1).unwrap();
    assert_eq!(h1["paused"], true);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let h2: Value = serde_json::from_str(&http_get(srv.addr, "/health").await.1).unwrap();
    assert_eq!(h1["sim_time"], h2["sim_time"]);
    send(&mut ws, json!({"version": 1, "type": "resume"})).await;
    until(&mut ws, "ack", &mut frames).await;
    let f = until(&mut ws, "telemetry", &mut frames).await;
    assert!(f["t"].as_f64().unwrap() > h2["sim_time"].as_f64().unwrap());
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_leaves_session_running() {
    let srv = start(20.0, None).await;
    let mut ws = connect(srv.addr).await;
    next_json(&mut ws).await;
    ws.close(None).await.unwrap();
    drop(ws);
    let t0: Value = serde_json::from_str(&http_get(srv.addr, "/health").await.1).unwrap();
    tokio::time::sleep(Duration::from_millis(150)).await;
    let t1: Value = serde_json::from_str(&http_get(srv.addr, "/health").await.1).unwrap();
    assert!(t1["tick"].as_u64().unwrap() > t0["tick"].as_u64().unwrap());
    let mut ws = connect(srv.addr).await;
    assert_eq!(next_json(&mut ws).await["type"], "hello");
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn recorded_session_replays_bit_identically() {
    let srv = start(30.0, None).await;
    let mut ws = connect(srv.addr).await;
    next_json(&mut ws).await;
    let mut frames = Vec::new();
    let script = [
        json!({"version": 1, "type": "set_velocity", "velocity": 1.0}),
        json!({"version": 1, "type": "set_gait", "gait": "bound"}),
        json!({"version": 1, "type": "push", "magnitude": 0.3}),
        json!({"version": 1, "type": "disable_leg", "leg": "HR"}),
        json!({"version": 1, "type": "set_gait", "gait": {"phase": [0.5, 0.0, 0.0, 0.0]}}),
        json!({"version": 1, "type": "enable_leg", "leg": "HR"}),
        json!({"version": 1, "type": "reset"}),
        json!({"version": 1, "type": "set_gait", "gait": "pace"}),
    ];
    for cmd in script {
        for _ in 0..10 {
            until(&mut ws, "telemetry", &mut frames).await;
        }
        send(&mut ws, cmd).await;
        until(&mut ws, "ack", &mut frames).await;
    }
    for _ in 0..10 {
        until(&mut ws, "telemetry", &mut frames).await;
    }
    let rec = srv.shutdown().await.unwrap();
    assert_eq!(rec.commands.len(), 8);
    assert!(rec.commands.windows(2).all(|w| w[0].tick <= w[1].tick));

    let mut replayed = Vec::new();
    let rep = replay(&rec, None, &GaitLibrary::default(), |f| replayed.push(f.clone())).unwrap();
    assert!(rep.identical());
    assert_eq!(rep.frames, rec.frames);
    // frames the client saw are a prefix-aligned subset of the replay
    for f in &frames {
        let seq = f["seq"].as_u64().unwrap() as usize;
        let mine = serde_json::to_value(&replayed[seq]).unwrap();
        for key in ["t", "base_pos", "q", "gait", "cpg_theta", "contacts", "episode"] {
            assert_eq!(f[key], mine[key], "{key} at seq {seq}");
        }
    }

    let other = replay(&rec, Some(6), &GaitLibrary::default(), |_| {}).unwrap();
    assert!(!other.identical());
}
