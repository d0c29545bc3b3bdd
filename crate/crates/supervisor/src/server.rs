//! Paced simulation loop plus the HTTP/websocket front end.
//!
//! The loop owns the [`Simulation`]. Sessions only push commands into a queue,
//! which the loop drains between ticks, and receive copies of the snapshot text.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};

use trustr_core::model::RobotId;
use trustr_core::{RunRecord, Simulation};

use crate::protocol::{decode_command, encode_snapshot, Command, Reply, Request};

pub const DEFAULT_PORT: u16 = 8600;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Required to claim the supervisor seat. Without one, the first client to
    /// connect gets it.
    pub token: Option<String>,
    /// Loop ticks between snapshots.
    pub snapshot_every: usize,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { token: None, snapshot_every: 5, speed: 1.0 }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] trustr_core::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

struct Queued {
    request: Request,
    reply: mpsc::UnboundedSender<String>,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::UnboundedSender<Queued>,
    snapshots: broadcast::Sender<String>,
    latest: watch::Receiver<String>,
    done: watch::Receiver<bool>,
    token: Option<Arc<str>>,
    seat: Arc<AtomicBool>,
}

fn router(state: AppState) -> Router {
    Router::new().route("/state", get(get_state)).route("/ws", get(ws_upgrade)).with_state(state)
}

async fn get_state(State(st): State<AppState>) -> Response {
    let body = st.latest.borrow().clone();
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn ws_upgrade(
    ws: WebSocketUpgrade,
    Query(query): Query<HashMap<String, String>>,
    State(st): State<AppState>,
) -> Response {
    let wants_seat = match (&st.token, query.get("token")) {
        (Some(expected), Some(given)) if **expected == **given => true,
        (Some(_), Some(_)) => return (StatusCode::UNAUTHORIZED, "bad supervisor token").into_response(),
        (Some(_), None) => false,
        (None, _) => true,
    };
    let supervisor = wants_seat && st.seat.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_ok();
    ws.on_upgrade(move |socket| session(socket, st, supervisor, wants_seat))
}

async fn session(socket: WebSocket, mut st: AppState, supervisor: bool, wanted_seat: bool) {
    debug!("session opened (supervisor: {supervisor})");
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<String>();
    let mut snapshots = st.snapshots.subscribe();
    let first = st.latest.borrow().clone();
    if sink.send(Message::Text(first.into())).await.is_err() {
        release(&st, supervisor);
        return;
    }
    if wanted_seat && !supervisor {
        let _ = out_tx.send(Reply::error(None, "supervisor seat taken; this session is read-only").to_json());
    }

    loop {
        tokio::select! {
            incoming = stream.next() => {
                let bytes = match incoming {
                    Some(Ok(Message::Text(t))) => t.as_str().as_bytes().to_vec(),
                    Some(Ok(Message::Binary(b))) => b.to_vec(),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                handle_frame(&bytes, supervisor, &st, &out_tx);
            }
            snap = snapshots.recv() => match snap {
                Ok(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("session skipped {n} snapshots"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(reply) = out_rx.recv() => {
                if sink.send(Message::Text(reply.into())).await.is_err() {
                    break;
                }
            }
            _ = st.done.changed() => {
                // let the final snapshot and any replies go out first
                while let Ok(text) = snapshots.try_recv() {
                    let _ = sink.send(Message::Text(text.into())).await;
                }
                while let Ok(reply) = out_rx.try_recv() {
                    let _ = sink.send(Message::Text(reply.into())).await;
                }
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
        }
    }
    release(&st, supervisor);
    debug!("session closed");
}

fn release(st: &AppState, supervisor: bool) {
    if supervisor {
        st.seat.store(false, Ordering::Release);
    }
}

fn handle_frame(bytes: &[u8], supervisor: bool, st: &AppState, out: &mpsc::UnboundedSender<String>) {
    let reply = match decode_command(bytes) {
        Err(e) => Reply::from(e),
        Ok(request) if !supervisor => Reply::error(request.id, "read-only session: commands need the supervisor seat"),
        Ok(request) => match st.commands.send(Queued { request, reply: out.clone() }) {
            Ok(()) => return,
            Err(mpsc::error::SendError(q)) => Reply::error(q.request.id, "simulation has ended"),
        },
    };
    let _ = out.send(reply.to_json());
}

fn check(sim: &Simulation, cmd: &Command) -> Result<(), String> {
    let known = |id: u32| sim.states().iter().any(|s| s.id == RobotId(id));
    match *cmd {
        Command::SetTrust { robot_id, .. } | Command::ClearTrustOverride { robot_id } if !known(robot_id) => {
            Err(format!("unknown robot {robot_id}"))
        }
        Command::SwitchTarget { index } if index >= sim.spec().targets.len() => Err("target index out of range".into()),
        _ => Ok(()),
    }
}

/// Serves `sim` on `listener` until the run ends, then returns its record.
///
/// The loop ticks every `dt / speed` wall-clock seconds. Snapshots go out every
/// `snapshot_every` loop ticks, paused or not, plus one final snapshot.
pub async fn serve(mut sim: Simulation, listener: TcpListener, cfg: ServeConfig) -> Result<RunRecord, ServeError> {
    let (cmd_tx, mut cmd_rx) = mpsc::unbounded_channel::<Queued>();
    let (snap_tx, _) = broadcast::channel::<String>(64);
    let (latest_tx, latest_rx) = watch::channel(encode_snapshot(&sim.view()?));
    let (done_tx, done_rx) = watch::channel(false);
    let state = AppState {
        commands: cmd_tx,
        snapshots: snap_tx.clone(),
        latest: latest_rx,
        done: done_rx,
        token: cfg.token.as_deref().map(Arc::from),
        seat: Arc::new(AtomicBool::new(false)),
    };
    if let Ok(addr) = listener.local_addr() {
        info!("supervisor endpoint on ws://{addr}/ws, state at http://{addr}/state");
    }
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            warn!("http server stopped: {e}");
        }
    });

    let dt = sim.spec().params.dt;
    let period = Duration::from_secs_f64((dt / cfg.speed.max(1e-9)).clamp(0.0, 3600.0));
    let mut interval = tokio::time::interval(period.max(Duration::from_micros(50)));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let every = cfg.snapshot_every.max(1);
    let mut loop_tick = 0usize;

    loop {
        interval.tick().await;
        // drain at the tick boundary, in arrival order, so the last writer wins
        while let Ok(Queued { request, reply }) = cmd_rx.try_recv() {
            let msg = match check(&sim, &request.command) {
                Ok(()) => {
                    sim.apply_command(request.command.to_sim());
                    Reply::ack(request.id, &request.command, sim.time())
                }
                Err(reason) => Reply::error(request.id, reason),
            };
            let _ = reply.send(msg.to_json());
        }
        if let Err(e) = sim.tick() {
            warn!("simulation stopped: {e}");
        }
        loop_tick += 1;
        let finished = sim.is_finished();
        if loop_tick.is_multiple_of(every) || finished {
            let text = encode_snapshot(&sim.view()?);
            let _ = latest_tx.send(text.clone());
            let _ = snap_tx.send(text);
        }
        if finished {
            break;
        }
    }

    let _ = done_tx.send(true);
    // give sessions a moment to flush the final snapshot and close
    tokio::time::sleep(Duration::from_millis(100)).await;
    server.abort();
    Ok(sim.into_record())
}
