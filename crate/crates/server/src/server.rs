//! HTTP and websocket front end. One thread owns the [`Session`]; sockets
//! talk to it through a command queue and a telemetry broadcast.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot};
use tower_http::services::ServeDir;

use quadcpg::cpg::GaitLibrary;
use quadcpg::sim::Termination;
use quadcpg::Result;

use crate::protocol::{parse_request, schema, Command, ProtocolError, ServerMessage, PROTOCOL_VERSION};
use crate::session::{Recording, Session, TELEMETRY_PERIOD};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub bind: SocketAddr,
    /// Directory holding the UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    pub speed_factor: f64,
    pub start_paused: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            bind: ([127, 0, 0, 1], 8080).into(),
            static_dir: None,
            speed_factor: 1.0,
            start_paused: false,
        }
    }
}

enum LoopMsg {
    Command { id: Option<u64>, command: Command, reply: mpsc::UnboundedSender<String> },
    Status(oneshot::Sender<Status>),
    Recording(oneshot::Sender<Recording>),
    Shutdown(oneshot::Sender<Recording>),
}

#[derive(Clone, Debug)]
struct Status {
    t: f64,
    tick: u64,
    episode: u64,
    paused: bool,
    speed_factor: f64,
    terminated: bool,
}

#[derive(Clone)]
struct AppState {
    library: Arc<GaitLibrary>,
    schema: Arc<Value>,
    tx: std_mpsc::Sender<LoopMsg>,
    telemetry: broadcast::Sender<Arc<str>>,
}

struct Loop {
    session: Session,
    paused: bool,
    speed: f64,
    anchor: (Instant, f64),
    telemetry: broadcast::Sender<Arc<str>>,
}

impl Loop {
    fn sim_time(&self) -> f64 {
        self.session.sim().time()
    }

    fn re_anchor(&mut self) {
        self.anchor = (Instant::now(), self.sim_time());
    }

    fn status(&self) -> Status {
        Status {
            t: self.sim_time(),
            tick: self.session.tick(),
            episode: self.session.episode(),
            paused: self.paused,
            speed_factor: self.speed,
            terminated: self.session.termination().is_some(),
        }
    }

    fn publish(&mut self) {
        for frame in self.session.drain_frames() {
            let msg = ServerMessage::Telemetry { version: PROTOCOL_VERSION, frame };
            // no receivers is fine
            let _ = self.telemetry.send(msg.to_json().into());
        }
    }

    /// Returns `Some` when the loop should exit.
    fn handle(&mut self, msg: LoopMsg) -> Option<oneshot::Sender<Recording>> {
        match msg {
            LoopMsg::Command { id, command, reply } => {
                let result = match &command {
                    Command::Pause => {
                        self.paused = true;
                        Ok(())
                    }
                    Command::Resume => {
                        self.paused = false;
                        self.re_anchor();
                        Ok(())
                    }
                    Command::SetSpeedFactor { factor } => {
                        self.speed = *factor;
                        self.re_anchor();
                        Ok(())
                    }
                    c => self.session.apply(c).map_err(ProtocolError::from),
                };
                if matches!(command, Command::Reset) {
                    self.re_anchor();
                }
                self.publish();
                let out = match result {
                    Ok(()) => ServerMessage::Ack {
                        version: PROTOCOL_VERSION,
                        id,
                        command: command.name().into(),
                        tick: self.session.tick(),
                    },
                    Err(e) => ServerMessage::error(id, e),
                };
                let _ = reply.send(out.to_json());
            }
            LoopMsg::Status(tx) => {
                let _ = tx.send(self.status());
            }
            LoopMsg::Recording(tx) => {
                let _ = tx.send(self.session.recording());
            }
            LoopMsg::Shutdown(tx) => return Some(tx),
        }
        None
    }

    fn run(mut self, rx: std_mpsc::Receiver<LoopMsg>) {
        let mut announced = false;
        self.publish();
        loop {
            let idle = self.paused || self.session.termination().is_some();
            if idle {
                match rx.recv() {
                    Ok(m) => {
                        if let Some(tx) = self.handle(m) {
                            let _ = tx.send(self.session.recording());
                            return;
                        }
                    }
                    Err(_) => return,
                }
                continue;
            }
            loop {
                match rx.try_recv() {
                    Ok(m) => {
                        if let Some(tx) = self.handle(m) {
                            let _ = tx.send(self.session.recording());
                            return;
                        }
                    }
                    Err(std_mpsc::TryRecvError::Empty) => break,
                    Err(std_mpsc::TryRecvError::Disconnected) => return,
                }
            }
            if self.paused {
                continue;
            }
            if self.session.termination().is_none() {
                announced = false;
            }
            let out = self.session.step();
            self.publish();
            match out {
                Ok(Some(term)) if !announced => {
                    announced = true;
                    let (t, reason) = describe(&term);
                    let msg = ServerMessage::Terminated { version: PROTOCOL_VERSION, episode: self.session.episode(), t, reason };
                    let _ = self.telemetry.send(msg.to_json().into());
                }
                Err(e) => {
                    let msg = ServerMessage::Terminated { version: PROTOCOL_VERSION, episode: self.session.episode(), t: self.sim_time(), reason: e.to_string() };
                    let _ = self.telemetry.send(msg.to_json().into());
                    self.paused = true;
                }
                _ => {}
            }
            let target = self.anchor.0 + Duration::from_secs_f64((self.sim_time() - self.anchor.1).max(0.0) / self.speed);
            let now = Instant::now();
            if target > now {
                std::thread::sleep(target - now);
            } else if now - target > Duration::from_millis(250) {
                // too far behind real time: drop the backlog instead of racing
                self.re_anchor();
            }
        }
    }
}

fn describe(t: &Termination) -> (f64, String) {
    match t {
        Termination::Completed { time } => (*time, "completed".into()),
        Termination::Fall { time, reason } => (*time, format!("fall: {reason:?}")),
        Termination::Fault { time, message } => (*time, format!("fault: {message}")),
    }
}

/// A running server. Dropping it without [`LiveServer::shutdown`] leaves the
/// tasks running until the runtime stops.
pub struct LiveServer {
    pub addr: SocketAddr,
    tx: std_mpsc::Sender<LoopMsg>,
    sim_thread: Option<JoinHandle<()>>,
    http: tokio::task::JoinHandle<()>,
    stop: Option<oneshot::Sender<()>>,
}

impl LiveServer {
    /// The recording so far.
    pub async fn recording(&self) -> Option<Recording> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(LoopMsg::Recording(tx)).ok()?;
        rx.await.ok()
    }

    /// Stops the simulation and HTTP service; returns the final recording.
    pub async fn shutdown(mut self) -> Option<Recording> {
        let (tx, rx) = oneshot::channel();
        let rec = if self.tx.send(LoopMsg::Shutdown(tx)).is_ok() { rx.await.ok() } else { None };
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        let _ = (&mut self.http).await;
        if let Some(h) = self.sim_thread.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
        rec
    }
}

/// Starts the simulation thread and binds the HTTP service.
pub async fn serve(session: Session, opts: ServeOptions) -> Result<LiveServer> {
    if !(opts.speed_factor.is_finite() && opts.speed_factor > 0.0) {
        return Err(quadcpg::Error::InvalidConfig(format!("speed factor must be > 0, got {}", opts.speed_factor)));
    }
    let library = Arc::new(session.library().clone());
    let schema = Arc::new(schema(&library, 1.0 / TELEMETRY_PERIOD, session.policy_hz()));
    let (telemetry, _) = broadcast::channel(1024);
    let (tx, rx) = std_mpsc::channel();
    let lp = Loop {
        session,
        paused: opts.start_paused,
        speed: opts.speed_factor,
        anchor: (Instant::now(), 0.0),
        telemetry: telemetry.clone(),
    };
    let sim_thread = std::thread::Builder::new().name("sim".into()).spawn(move || lp.run(rx))?;
    let state = AppState { library, schema, tx: tx.clone(), telemetry };
    let app = router(state, opts.static_dir.clone());
    let listener = tokio::net::TcpListener::bind(opts.bind).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await;
    });
    Ok(LiveServer { addr, tx, sim_thread: Some(sim_thread), http, stop: Some(stop) })
}

fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(health))
        .route("/schema", get(schema_handler))
        .route("/recording", get(recording_handler))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><title>quadcpg live</title>\
         <p>No UI bundle configured. Start the server with <code>--static-dir</code>, \
         or connect a client to <code>/ws</code>.</p>",
    )
}

async fn ask<T>(state: &AppState, make: impl FnOnce(oneshot::Sender<T>) -> LoopMsg) -> Option<T> {
    let (tx, rx) = oneshot::channel();
    state.tx.send(make(tx)).ok()?;
    rx.await.ok()
}

async fn health(State(state): State<AppState>) -> Response {
    match ask(&state, LoopMsg::Status).await {
        Some(s) => Json(json!({
            "status": "ok",
            "version": PROTOCOL_VERSION,
            "sim_time": s.t,
            "tick": s.tick,
            "episode": s.episode,
            "paused": s.paused,
            "speed_factor": s.speed_factor,
            "terminated": s.terminated,
        }))
        .into_response(),
        None => (axum::http::StatusCode::SERVICE_UNAVAILABLE, Json(json!({"status": "stopped"}))).into_response(),
    }
}

async fn schema_handler(State(state): State<AppState>) -> Json<Value> {
    Json((*state.schema).clone())
}

async fn recording_handler(State(state): State<AppState>) -> Response {
    match ask(&state, LoopMsg::Recording).await {
        Some(r) => Json(r).into_response(),
        None => axum::http::StatusCode::SERVICE_UNAVAILABLE.into_response(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut telemetry = state.telemetry.subscribe();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<String>();
    let status = ask(&state, LoopMsg::Status).await;
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        gaits: state.library.names().map(String::from).collect(),
        paused: status.as_ref().is_some_and(|s| s.paused),
        speed_factor: status.map_or(1.0, |s| s.speed_factor),
    };
    if sink.send(Message::Text(hello.to_json().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                match parse_request(&text, &state.library) {
                    Ok(req) => {
                        let msg = LoopMsg::Command { id: req.id, command: req.command, reply: reply_tx.clone() };
                        if state.tx.send(msg).is_err() {
                            break;
                        }
                    }
                    Err((id, e)) => {
                        if sink.send(Message::Text(ServerMessage::error(id, e).to_json().into())).await.is_err() {
                            break;
                        }
                    }
                }
            }
            Some(reply) = reply_rx.recv() => {
                if sink.send(Message::Text(reply.into())).await.is_err() {
                    break;
                }
            }
            frame = telemetry.recv() => {
                match frame {
                    Ok(f) => {
                        if sink.send(Message::Text(f.to_string().into())).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }
    }
}
