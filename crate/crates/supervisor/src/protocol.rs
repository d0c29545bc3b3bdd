//! Wire messages. Every message is one JSON object with a `"v"` version and a
//! `"type"` tag; see `docs/protocol.md` for the full schema.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use trustr_core::model::{RobotId, TrustLevel};
use trustr_core::{SimCommand, SimView};

pub const PROTOCOL_VERSION: u64 = 1;

/// Rounds to 6 significant digits, so the JSON text carries at most that many.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSnapshot {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading_deg: f64,
    pub speed: f64,
    pub role: String,
    pub trust_level: u8,
    pub trust_gain: f64,
    /// True while a supervisor rating overrides the configured trust source.
    pub overridden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSnapshot {
    pub i: u32,
    pub j: u32,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSnapshot {
    pub x: f64,
    pub y: f64,
    pub target_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSoFar {
    pub step: usize,
    /// Team centroid to the current target, meters.
    pub target_distance_m: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub v: u64,
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    pub robots: Vec<RobotSnapshot>,
    /// In-range pairs only; a cut link stays listed with quality 0.
    pub edges: Vec<EdgeSnapshot>,
    pub leader: LeaderSnapshot,
    pub metrics_so_far: MetricsSoFar,
    pub paused: bool,
}

impl Snapshot {
    pub fn from_view(view: &SimView) -> Self {
        let robots = view
            .states
            .iter()
            .map(|s| {
                let entry = view.trust.entry(s.id);
                RobotSnapshot {
                    id: s.id.0,
                    x: sig6(s.pos.x),
                    y: sig6(s.pos.y),
                    z: sig6(s.pos.z),
                    heading_deg: sig6(s.heading.to_degrees()),
                    speed: sig6(s.vel.norm()),
                    role: s.role.as_str().to_owned(),
                    trust_level: entry.map_or(TrustLevel::MAX.get(), |e| e.level.get()),
                    trust_gain: sig6(entry.map_or(1.0, |e| e.gain)),
                    overridden: view.overridden.contains(&s.id),
                }
            })
            .collect();
        let edges = view
            .graph
            .edges
            .iter()
            .map(|(&(i, j), &q)| EdgeSnapshot { i: i.0, j: j.0, quality: sig6(q) })
            .collect();
        Snapshot {
            v: PROTOCOL_VERSION,
            kind: "snapshot".to_owned(),
            t: sig6(view.t),
            robots,
            edges,
            leader: LeaderSnapshot {
                x: sig6(view.leader.pos.x),
                y: sig6(view.leader.pos.y),
                target_index: view.target_index,
            },
            metrics_so_far: MetricsSoFar {
                step: view.step,
                target_distance_m: sig6(view.target_distance),
                finished: view.finished,
            },
            paused: view.paused,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

/// Text of a snapshot message for the current simulation state.
pub fn encode_snapshot(view: &SimView) -> String {
    Snapshot::from_view(view).to_json()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SetTrust { robot_id: u32, level: u8 },
    ClearTrustOverride { robot_id: u32 },
    Pause,
    Resume,
    SwitchTarget { index: usize },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetTrust { .. } => "set_trust",
            Command::ClearTrustOverride { .. } => "clear_trust_override",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::SwitchTarget { .. } => "switch_target",
        }
    }

    pub fn to_sim(self) -> SimCommand {
        match self {
            Command::SetTrust { robot_id, level } => SimCommand::SetTrust {
                robot: RobotId(robot_id),
                // decode_command only lets 1..=5 through
                level: TrustLevel::new(level).unwrap_or(TrustLevel::MAX),
            },
            Command::ClearTrustOverride { robot_id } => SimCommand::ClearTrustOverride { robot: RobotId(robot_id) },
            Command::Pause => SimCommand::Pause,
            Command::Resume => SimCommand::Resume,
            Command::SwitchTarget { index } => SimCommand::SwitchTarget { index },
        }
    }
}

/// A command plus the optional client correlation id echoed in the reply.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Option<Value>,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed command: {reason}")]
pub struct MalformedCommand {
    pub reason: String,
    pub id: Option<Value>,
}

fn malformed(reason: impl Into<String>, id: &Option<Value>) -> MalformedCommand {
    MalformedCommand { reason: reason.into(), id: id.clone() }
}

fn field_u64(obj: &serde_json::Map<String, Value>, key: &str, id: &Option<Value>) -> Result<u64, MalformedCommand> {
    match obj.get(key) {
        None => Err(malformed(format!("missing field {key:?}"), id)),
        Some(v) => v.as_u64().ok_or_else(|| malformed(format!("field {key:?} must be a non-negative integer"), id)),
    }
}

/// Parses and validates one inbound text frame.
pub fn decode_command(bytes: &[u8]) -> Result<Request, MalformedCommand> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| malformed(format!("invalid JSON: {e}"), &None))?;
    let Value::Object(obj) = value else {
        return Err(malformed("message must be a JSON object", &None));
    };
    let id = obj.get("id").cloned();
    match obj.get("v").map(Value::as_u64) {
        None => return Err(malformed("missing protocol version \"v\"", &id)),
        Some(Some(PROTOCOL_VERSION)) => {}
        Some(Some(v)) => return Err(malformed(format!("unsupported protocol version {v}"), &id)),
        Some(None) => return Err(malformed("protocol version must be an integer", &id)),
    }
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("missing string field \"type\"", &id))?;
    let robot = |key| -> Result<u32, MalformedCommand> {
        let raw = field_u64(&obj, key, &id)?;
        u32::try_from(raw).map_err(|_| malformed("robot_id out of range", &id))
    };
    let command = match kind {
        "set_trust" => {
            let robot_id = robot("robot_id")?;
            let level = field_u64(&obj, "level", &id)?;
            if !(1..=5).contains(&level) {
                return Err(malformed("level out of range", &id));
            }
            Command::SetTrust { robot_id, level: level as u8 }
        }
        "clear_trust_override" => Command::ClearTrustOverride { robot_id: robot("robot_id")? },
        "pause" => Command::Pause,
        "resume" => Command::Resume,
        "switch_target" => {
            let index = field_u64(&obj, "index", &id)?;
            Command::SwitchTarget { index: usize::try_from(index).map_err(|_| malformed("index out of range", &id))? }
        }
        other => return Err(malformed(format!("unknown command type {other:?}"), &id)),
    };
    Ok(Request { id, command })
}

/// Replies sent to the client that issued a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    /// The command took effect at simulation time `t`.
    Ack {
        v: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        id: Option<Value>,
        command: String,
        t: f64,
    },
    Error {
        v: u64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        id: Option<Value>,
        reason: String,
    },
}

impl Reply {
    pub fn ack(id: Option<Value>, command: &Command, t: f64) -> Self {
        Reply::Ack { v: PROTOCOL_VERSION, id, command: command.name().to_owned(), t: sig6(t) }
    }

    pub fn error(id: Option<Value>, reason: impl Into<String>) -> Self {
        Reply::Error { v: PROTOCOL_VERSION, id, reason: reason.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}

impl From<MalformedCommand> for Reply {
    fn from(e: MalformedCommand) -> Self {
        Reply::error(e.id, e.reason)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(s: &str) -> Result<Command, String> {
        decode_command(s.as_bytes()).map(|r| r.command).map_err(|e| e.reason)
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(12.3456789), 12.3457);
        assert_eq!(sig6(-0.000123456789), -0.000123457);
        assert_eq!(sig6(0.0), 0.0);
        assert_eq!(serde_json::to_string(&sig6(1.0 / 3.0)).unwrap(), "0.333333");
    }

    #[test]
    fn decodes_every_command() {
        assert_eq!(decode(r#"{"v":1,"type":"set_trust","robot_id":3,"level":1}"#), Ok(Command::SetTrust { robot_id: 3, level: 1 }));
        assert_eq!(decode(r#"{"v":1,"type":"clear_trust_override","robot_id":3}"#), Ok(Command::ClearTrustOverride { robot_id: 3 }));
        assert_eq!(decode(r#"{"v":1,"type":"pause"}"#), Ok(Command::Pause));
        assert_eq!(decode(r#"{"v":1,"type":"resume"}"#), Ok(Command::Resume));
        assert_eq!(decode(r#"{"v":1,"type":"switch_target","index":1}"#), Ok(Command::SwitchTarget { index: 1 }));
    }

    #[test]
    fn rejects_bad_input_with_reasons() {
        assert_eq!(decode(r#"{"v":1,"type":"set_trust","robot_id":3,"level":9}"#).unwrap_err(), "level out of range");
        assert_eq!(decode(r#"{"v":1,"type":"set_trust","robot_id":3,"level":0}"#).unwrap_err(), "level out of range");
        assert!(decode(r#"{"v":1,"type":"set_tr"#).unwrap_err().starts_with("invalid JSON"));
        assert_eq!(decode(r#"{"v":2,"type":"pause"}"#).unwrap_err(), "unsupported protocol version 2");
        assert_eq!(decode(r#"{"type":"pause"}"#).unwrap_err(), "missing protocol version \"v\"");
        assert_eq!(decode(r#"{"v":1,"type":"launch"}"#).unwrap_err(), "unknown command type \"launch\"");
        assert_eq!(decode(r#"{"v":1,"type":"set_trust","level":2}"#).unwrap_err(), "missing field \"robot_id\"");
        assert_eq!(decode("[1,2]").unwrap_err(), "message must be a JSON object");
        assert!(decode(r#"{"v":1,"type":"switch_target","index":-1}"#).is_err());
    }

    #[test]
    fn replies_echo_the_request_id() {
        let err = decode_command(br#"{"v":1,"id":"abc","type":"set_trust","robot_id":3,"level":7}"#).unwrap_err();
        let text = Reply::from(err).to_json();
        assert_eq!(text, r#"{"type":"error","v":1,"id":"abc","reason":"level out of range"}"#);
        let ack = Reply::ack(None, &Command::Pause, 1.25).to_json();
        assert_eq!(ack, r#"{"type":"ack","v":1,"command":"pause","t":1.25}"#);
    }
}
