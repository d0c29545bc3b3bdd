//! Live supervisor session: a paced simulation loop exposed over a websocket
//! (`GET /ws`) and a polling endpoint (`GET /state`).

pub mod protocol;
pub mod server;

pub use protocol::{decode_command, encode_snapshot, Command, MalformedCommand, Reply, Snapshot, PROTOCOL_VERSION};
pub use server::{bind, serve, ServeConfig, ServeError, DEFAULT_PORT};
