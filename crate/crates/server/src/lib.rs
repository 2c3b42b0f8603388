//! Live simulation service: telemetry out and operator commands in over a
//! websocket at `/ws`, plus `/health`, `/schema`, `/recording` and an
//! optional static UI bundle.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Command, ErrorCode, ServerMessage, TelemetryFrame, PROTOCOL_VERSION};
pub use server::{serve, LiveServer, ServeOptions};
pub use session::{replay, Recording, ReplayReport, Session};
