//! Websocket message types. Every message is a JSON object with `type` and
//! `version` fields; see `PROTOCOL.md` for the full schema.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use quadcpg::cpg::GaitLibrary;
use quadcpg::leg::Leg;
use quadcpg::pattern::{StyleParams, GC_RANGE, GP_RANGE, H_RANGE, XOFF_RANGE};
use quadcpg::sim::scenario::{Event, GaitSpec};
use quadcpg::Error;

pub const PROTOCOL_VERSION: u32 = 1;
pub const VELOCITY_RANGE: (f64, f64) = (0.0, 3.0);
pub const MAX_PUSH: f64 = 0.5;
pub const SPEED_FACTOR_RANGE: (f64, f64) = (0.01, 1000.0);

pub const COMMAND_TYPES: [&str; 10] = [
    "set_gait",
    "set_style",
    "set_velocity",
    "push",
    "disable_leg",
    "enable_leg",
    "pause",
    "resume",
    "reset",
    "set_speed_factor",
];

/// Operator commands. Simulation commands are applied at the next policy
/// tick and recorded; `pause`, `resume` and `set_speed_factor` only affect
/// pacing and are not recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetGait {
        gait: GaitSpec,
    },
    SetStyle {
        style: StyleParams<f64>,
    },
    SetVelocity {
        velocity: f64,
    },
    Push {
        magnitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<f64>,
    },
    DisableLeg {
        leg: Leg,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lock_angles: Option<[f64; 3]>,
    },
    EnableLeg {
        leg: Leg,
    },
    Pause,
    Resume,
    Reset,
    SetSpeedFactor {
        factor: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetGait { .. } => "set_gait",
            Command::SetStyle { .. } => "set_style",
            Command::SetVelocity { .. } => "set_velocity",
            Command::Push { .. } => "push",
            Command::DisableLeg { .. } => "disable_leg",
            Command::EnableLeg { .. } => "enable_leg",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset => "reset",
            Command::SetSpeedFactor { .. } => "set_speed_factor",
        }
    }

    /// `true` for commands that change the simulated trajectory.
    pub fn affects_simulation(&self) -> bool {
        !matches!(self, Command::Pause | Command::Resume | Command::SetSpeedFactor { .. })
    }

    /// The simulator event for this command, if it maps to one.
    pub fn event(&self) -> Option<Event> {
        Some(match self {
            Command::SetGait { gait } => Event::SetGait { gait: gait.clone() },
            Command::SetStyle { style } => Event::SetStyle { style: *style },
            Command::SetVelocity { velocity } => Event::SetVelocityCommand { velocity: *velocity },
            Command::Push { magnitude, direction } => Event::Push { magnitude: *magnitude, direction: *direction },
            Command::DisableLeg { leg, lock_angles } => Event::DisableLeg { leg: *leg, lock_angles: *lock_angles },
            Command::EnableLeg { leg } => Event::EnableLeg { leg: *leg },
            _ => return None,
        })
    }

    /// Checks the payload against module ranges.
    pub fn validate(&self, library: &GaitLibrary) -> Result<(), ProtocolError> {
        let range = |name: &str, x: f64, (lo, hi): (f64, f64)| {
            if x.is_finite() && x >= lo && x <= hi {
                Ok(())
            } else {
                Err(ProtocolError::new(ErrorCode::OutOfRange, format!("{name} = {x} outside [{lo}, {hi}]")))
            }
        };
        match self {
            Command::SetGait { gait } => {
                gait.resolve(library).map_err(ProtocolError::from)?;
            }
            Command::SetStyle { style } => style.validate().map_err(ProtocolError::from)?,
            Command::SetVelocity { velocity } => range("velocity", *velocity, VELOCITY_RANGE)?,
            Command::Push { magnitude, direction } => {
                range("magnitude", *magnitude, (0.0, MAX_PUSH))?;
                if direction.is_some_and(|d| !d.is_finite()) {
                    return Err(ProtocolError::new(ErrorCode::OutOfRange, "direction must be finite"));
                }
            }
            Command::DisableLeg { lock_angles: Some(a), .. } if a.iter().any(|x| !x.is_finite()) => {
                return Err(ProtocolError::new(ErrorCode::OutOfRange, "lock angles must be finite"));
            }
            Command::SetSpeedFactor { factor } => range("factor", *factor, SPEED_FACTOR_RANGE)?,
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a JSON object.
    InvalidJson,
    /// `version` missing or different from [`PROTOCOL_VERSION`].
    UnsupportedVersion,
    /// `type` missing or not a known command.
    UnknownType,
    /// Fields missing or of the wrong shape.
    InvalidPayload,
    /// A value outside its documented range.
    OutOfRange,
    UnknownGait,
    /// The simulation rejected an otherwise valid command.
    Rejected,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 7] = [
        ErrorCode::InvalidJson,
        ErrorCode::UnsupportedVersion,
        ErrorCode::UnknownType,
        ErrorCode::InvalidPayload,
        ErrorCode::OutOfRange,
        ErrorCode::UnknownGait,
        ErrorCode::Rejected,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ProtocolError { code, message: message.into() }
    }
}

impl From<Error> for ProtocolError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownGait { .. } => ErrorCode::UnknownGait,
            Error::OutOfRange(_) => ErrorCode::OutOfRange,
            _ => ErrorCode::Rejected,
        };
        ProtocolError::new(code, e.to_string())
    }
}

/// A parsed client message.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub id: Option<u64>,
    pub command: Command,
}

/// Parses and validates one client text frame. On failure the request id
/// is returned when it could be read.
pub fn parse_request(text: &str, library: &GaitLibrary) -> Result<Request, (Option<u64>, ProtocolError)> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| (None, ProtocolError::new(ErrorCode::InvalidJson, e.to_string())))?;
    let Value::Object(mut obj) = value else {
        return Err((None, ProtocolError::new(ErrorCode::InvalidJson, "message must be a JSON object")));
    };
    let id = obj.get("id").and_then(Value::as_u64);
    let fail = |code, msg: String| Err((id, ProtocolError::new(code, msg)));
    match obj.remove("version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTOCOL_VERSION as u64 => {}
        Some(v) => return fail(ErrorCode::UnsupportedVersion, format!("version {v} unsupported, expected {PROTOCOL_VERSION}")),
        None => return fail(ErrorCode::UnsupportedVersion, format!("missing `version` (expected {PROTOCOL_VERSION})")),
    }
    obj.remove("id");
    match obj.get("type").and_then(Value::as_str) {
        Some(t) if COMMAND_TYPES.contains(&t) => {}
        Some(t) => return fail(ErrorCode::UnknownType, format!("unknown type `{t}`")),
        None => return fail(ErrorCode::UnknownType, "missing `type`".into()),
    }
    let command: Command = match serde_json::from_value(Value::Object(obj)) {
        Ok(c) => c,
        Err(e) => return fail(ErrorCode::InvalidPayload, e.to_string()),
    };
    command.validate(library).map_err(|e| (id, e))?;
    Ok(Request { id, command })
}

/// One telemetry sample, emitted every 20 ms of simulated time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// Frame counter over the whole session.
    pub seq: u64,
    /// Incremented by every `reset`.
    pub episode: u64,
    /// Policy ticks since session start.
    pub tick: u64,
    /// Simulated time since the last reset (s).
    pub t: f64,
    pub base_pos: [f64; 3],
    /// (w, x, y, z).
    pub base_quat: [f64; 4],
    pub base_lin_vel: [f64; 3],
    pub base_ang_vel: [f64; 3],
    pub q: [f64; 12],
    /// World frame, FR FL HR HL.
    pub foot_pos: [[f64; 3]; 4],
    pub contacts: [bool; 4],
    pub locked: [bool; 4],
    pub cpg_r: [f64; 4],
    pub cpg_theta: [f64; 4],
    pub gait: String,
    /// Worst pairwise phase offset error against the active gait (rad).
    pub phase_error: f64,
    pub style: StyleParams<f64>,
    pub v_cmd: f64,
    /// Σ|τ·q̇| (W).
    pub power: f64,
    /// Over the last second; absent without forward progress.
    pub rolling_cot: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        gaits: Vec<String>,
        paused: bool,
        speed_factor: f64,
    },
    Telemetry {
        version: u32,
        #[serde(flatten)]
        frame: TelemetryFrame,
    },
    Ack {
        version: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        command: String,
        /// Policy tick at which the command took effect.
        tick: u64,
    },
    Error {
        version: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        code: ErrorCode,
        message: String,
    },
    /// The robot fell or the state diverged; the session waits for `reset`.
    Terminated {
        version: u32,
        episode: u64,
        t: f64,
        reason: String,
    },
}

impl ServerMessage {
    pub fn error(id: Option<u64>, e: ProtocolError) -> Self {
        ServerMessage::Error { version: PROTOCOL_VERSION, id, code: e.code, message: e.message }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Machine-readable protocol summary served at `/schema`.
pub fn schema(library: &GaitLibrary, telemetry_hz: f64, policy_hz: f64) -> Value {
    serde_json::json!({
        "schema": "quadcpg-live",
        "version": PROTOCOL_VERSION,
        "telemetry_hz": telemetry_hz,
        "policy_hz": policy_hz,
        "gaits": library.names().collect::<Vec<_>>(),
        "legs": ["FR", "FL", "HR", "HL"],
        "commands": COMMAND_TYPES,
        "server_messages": ["hello", "telemetry", "ack", "error", "terminated"],
        "error_codes": ErrorCode::ALL,
        "ranges": {
            "h": H_RANGE,
            "g_c": GC_RANGE,
            "g_p": GP_RANGE,
            "x_off": XOFF_RANGE,
            "velocity": VELOCITY_RANGE,
            "push_magnitude": [0.0, MAX_PUSH],
            "speed_factor": SPEED_FACTOR_RANGE,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib() -> GaitLibrary {
        GaitLibrary::default()
    }

    fn code(text: &str) -> ErrorCode {
        parse_request(text, &lib()).unwrap_err().1.code
    }

    #[test]
    fn parses_commands() {
        let r = parse_request(r#"{"version":1,"id":4,"type":"set_gait","gait":"pace"}"#, &lib()).unwrap();
        assert_eq!(r.id, Some(4));
        assert_eq!(r.command, Command::SetGait { gait: GaitSpec::Named("pace".into()) });
        let r = parse_request(r#"{"version":1,"type":"set_gait","gait":{"phase":[0.5,0,0,0]}}"#, &lib()).unwrap();
        assert!(matches!(r.command, Command::SetGait { gait: GaitSpec::Custom { .. } }));
        let r = parse_request(r#"{"version":1,"type":"pause"}"#, &lib()).unwrap();
        assert_eq!(r.command, Command::Pause);
        let r = parse_request(r#"{"version":1,"type":"disable_leg","leg":"HR"}"#, &lib()).unwrap();
        assert_eq!(r.command, Command::DisableLeg { leg: Leg::HR, lock_angles: None });
    }

    #[test]
    fn error_codes() {
        assert_eq!(code("nope"), ErrorCode::InvalidJson);
        assert_eq!(code("[1]"), ErrorCode::InvalidJson);
        assert_eq!(code(r#"{"type":"pause"}"#), ErrorCode::UnsupportedVersion);
        assert_eq!(code(r#"{"version":2,"type":"pause"}"#), ErrorCode::UnsupportedVersion);
        assert_eq!(code(r#"{"version":1,"type":"fly"}"#), ErrorCode::UnknownType);
        assert_eq!(code(r#"{"version":1}"#), ErrorCode::UnknownType);
        assert_eq!(code(r#"{"version":1,"type":"set_velocity"}"#), ErrorCode::InvalidPayload);
        assert_eq!(code(r#"{"version":1,"type":"set_velocity","velocity":9}"#), ErrorCode::OutOfRange);
        assert_eq!(code(r#"{"version":1,"type":"push","magnitude":0.6}"#), ErrorCode::OutOfRange);
        assert_eq!(code(r#"{"version":1,"type":"set_gait","gait":"hop"}"#), ErrorCode::UnknownGait);
        assert_eq!(
            code(r#"{"version":1,"type":"set_style","style":{"h":0.5,"g_c":0.05,"g_p":0.01,"x_off":0}}"#),
            ErrorCode::OutOfRange
        );
        assert_eq!(code(r#"{"version":1,"type":"set_speed_factor","factor":0}"#), ErrorCode::OutOfRange);
    }

    #[test]
    fn id_echoed_on_error() {
        let (id, _) = parse_request(r#"{"version":1,"id":9,"type":"set_velocity","velocity":-1}"#, &lib()).unwrap_err();
        assert_eq!(id, Some(9));
    }

    #[test]
    fn every_command_type_round_trips() {
        let cmds = [
            Command::SetGait { gait: GaitSpec::Named("bound".into()) },
            Command::SetStyle { style: StyleParams::default() },
            Command::SetVelocity { velocity: 1.0 },
            Command::Push { magnitude: 0.3, direction: Some(1.0) },
            Command::DisableLeg { leg: Leg::FL, lock_angles: None },
            Command::EnableLeg { leg: Leg::FL },
            Command::Pause,
            Command::Resume,
            Command::Reset,
            Command::SetSpeedFactor { factor: 2.0 },
        ];
        for (c, name) in cmds.iter().zip(COMMAND_TYPES) {
            assert_eq!(c.name(), name);
            let mut v = serde_json::to_value(c).unwrap();
            v["version"] = 1.into();
            assert_eq!(&parse_request(&v.to_string(), &lib()).unwrap().command, c);
        }
    }

    #[test]
    fn messages_carry_type_and_version() {
        let m = ServerMessage::Ack { version: 1, id: Some(2), command: "reset".into(), tick: 5 };
        let v: Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["type"], "ack");
        assert_eq!(v["version"], 1);
    }
}
