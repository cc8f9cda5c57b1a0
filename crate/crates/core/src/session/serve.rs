//! Live session over WebSocket text frames.
//!
//! Four threads share a session: the simulation loop owns all state and is
//! paced to the wall clock, the haptic loop samples the force mailbox at
//! 1 kHz, the broadcaster sends the latest snapshot to every client at a
//! capped rate, and one thread per client forwards its commands.
//!
//! Poses and modes reach the simulation through the pose mailbox; pause and
//! reset are queued. Both are applied between steps only.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::{Session, SessionError};
use crate::haptics::{
    run_haptic_loop, ForceMailbox, ForceSample, HapticLoopConfig, HapticLoopReport, Pose, PoseMailbox, ToolMode,
};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub kinetic_energy: f64,
    pub elastic_energy: f64,
    pub water_mass: f64,
    pub mean_saturation: f64,
    pub max_saturation: f64,
    pub contact_count: usize,
    pub max_displacement: f64,
}

/// State of the display surface after one step. Positions travel either as
/// a plain array or, above the size threshold, as base64 little-endian f32
/// triples in `positions_b64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMessage {
    pub step: u64,
    pub time_s: f64,
    pub mode: ToolMode,
    pub paused: bool,
    pub vertex_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_b64: Option<String>,
    pub wetness: Vec<f32>,
    pub highlight: Vec<f32>,
    pub highlight_radius: f64,
    pub proxy_position: Vec3,
    pub force: ForceSample,
    pub stats: SnapshotStats,
}

pub fn encode_positions(vertices: &[Vec3]) -> String {
    let mut bytes = Vec::with_capacity(vertices.len() * 12);
    for v in vertices {
        for c in v.iter() {
            bytes.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_positions(encoded: &str) -> Result<Vec<[f32; 3]>, String> {
    let bytes = STANDARD.decode(encoded).map_err(|e| e.to_string())?;
    if bytes.len() % 12 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 triples", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes"))))
        .collect())
}

impl SnapshotMessage {
    pub fn from_session(session: &Session, paused: bool, binary_threshold: usize) -> Self {
        let v = &session.surface.vertices;
        let (positions, positions_b64) = if v.len() > binary_threshold {
            (None, Some(encode_positions(v)))
        } else {
            (Some(v.iter().flat_map(|p| p.iter().map(|c| *c as f32)).collect()), None)
        };
        let s = session.saturation.stats();
        Self {
            step: session.step_index,
            time_s: session.time(),
            mode: session.proxy.mode,
            paused,
            vertex_count: v.len(),
            positions,
            positions_b64,
            wetness: session.surface.wetness.iter().map(|&w| w as f32).collect(),
            highlight: session.surface.highlight.iter().map(|&w| w as f32).collect(),
            highlight_radius: session.scene.kernel.radius,
            proxy_position: session.proxy.center(),
            force: session.last_force,
            stats: SnapshotStats {
                kinetic_energy: session.body.kinetic_energy(),
                elastic_energy: session.body.elastic_energy(),
                water_mass: s.total_mass,
                mean_saturation: s.mean,
                max_saturation: s.max,
                contact_count: session.last_contact_count,
                max_displacement: session.max_displacement(),
            },
        }
    }

    /// Positions from whichever encoding the message carries.
    pub fn vertex_positions(&self) -> Result<Vec<[f32; 3]>, String> {
        let out = match (&self.positions, &self.positions_b64) {
            (Some(p), None) if p.len() % 3 == 0 => p.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            (None, Some(b)) => decode_positions(b)?,
            _ => return Err("exactly one well-formed position field expected".into()),
        };
        if out.len() != self.vertex_count {
            return Err(format!("{} positions for {} vertices", out.len(), self.vertex_count));
        }
        Ok(out)
    }

    /// Sizes of all per-vertex arrays agree.
    pub fn is_consistent(&self) -> bool {
        self.vertex_positions().is_ok()
            && self.wetness.len() == self.vertex_count
            && self.highlight.len() == self.vertex_count
    }
}

/// Frames sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerFrame {
    /// Surface topology, sent once on connect.
    Mesh {
        vertex_count: usize,
        triangles: Vec<[usize; 3]>,
    },
    Snapshot(SnapshotMessage),
    Error {
        message: String,
    },
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn yes() -> bool {
    true
}

/// Frames accepted from clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    SetMode {
        mode: ToolMode,
    },
    ProxyPose {
        position: Vec3,
        #[serde(default = "identity_wxyz")]
        rotation: [f64; 4],
    },
    Pause {
        #[serde(default = "yes")]
        paused: bool,
    },
    Reset {},
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub snapshot_rate_hz: f64,
    /// Vertex count above which positions are base64 encoded.
    pub binary_threshold: usize,
    pub run_haptic_loop: bool,
    /// `SCHED_FIFO` priority requested for the haptic thread.
    pub haptic_priority: Option<i32>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            snapshot_rate_hz: 60.0,
            binary_threshold: 1024,
            run_haptic_loop: true,
            haptic_priority: None,
        }
    }
}

#[derive(Debug)]
pub struct ServeReport {
    pub steps: u64,
    pub snapshots_sent: u64,
    pub clients: u64,
    pub haptic: Option<HapticLoopReport>,
    /// Why the simulation loop stopped on its own, if it did.
    pub error: Option<SessionError>,
}

enum Control {
    Pause(bool),
    Reset,
}

struct Shared {
    stop: AtomicBool,
    poses: PoseMailbox,
    pose_writer: Mutex<(Pose, ToolMode)>,
    control: Mutex<Vec<Control>>,
    latest: Mutex<Option<Arc<SnapshotMessage>>>,
    forces: ForceMailbox,
    clients: Mutex<Vec<Sender<Arc<str>>>>,
    steps: AtomicU64,
    snapshots_sent: AtomicU64,
    client_count: AtomicU64,
    mesh_frame: Arc<str>,
    error: Mutex<Option<SessionError>>,
}

impl Shared {
    fn apply(&self, command: ClientCommand) -> Result<(), String> {
        match command {
            ClientCommand::SetMode { mode } => {
                let mut w = self.pose_writer.lock().expect("pose lock");
                w.1 = mode;
                self.poses.publish(&w.0, w.1);
            }
            ClientCommand::ProxyPose { position, rotation } => {
                if position.iter().any(|c| !c.is_finite()) {
                    return Err("position must be finite".into());
                }
                let pose = Pose::from_parts(position, rotation).map_err(|e| e.to_string())?;
                let mut w = self.pose_writer.lock().expect("pose lock");
                w.0 = pose;
                self.poses.publish(&w.0, w.1);
            }
            ClientCommand::Pause { paused } => self.control.lock().expect("control lock").push(Control::Pause(paused)),
            ClientCommand::Reset {} => self.control.lock().expect("control lock").push(Control::Reset),
        }
        Ok(())
    }

    fn handle_text(&self, text: &str) -> Option<String> {
        let result = serde_json::from_str::<ClientCommand>(text)
            .map_err(|e| format!("malformed command: {e}"))
            .and_then(|c| self.apply(c));
        result
            .err()
            .map(|message| serde_json::to_string(&ServerFrame::Error { message }).expect("frame serializes"))
    }
}

/// Running server; dropping it without [`ServeHandle::stop`] leaves the
/// threads running until the process exits.
pub struct ServeHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    haptic: Option<JoinHandle<HapticLoopReport>>,
    simulation: JoinHandle<Session>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn steps(&self) -> u64 {
        self.shared.steps.load(Ordering::Relaxed)
    }

    /// Whether the simulation loop has stopped on its own (after an error).
    pub fn is_finished(&self) -> bool {
        self.simulation.is_finished()
    }

    /// Stops every loop and returns the final session with the report.
    pub fn stop(self) -> (Session, ServeReport) {
        self.shared.stop.store(true, Ordering::Relaxed);
        let session = self.simulation.join().expect("simulation thread");
        for t in self.threads {
            let _ = t.join();
        }
        let haptic = self.haptic.map(|h| h.join().expect("haptic thread"));
        let report = ServeReport {
            steps: self.shared.steps.load(Ordering::Relaxed),
            snapshots_sent: self.shared.snapshots_sent.load(Ordering::Relaxed),
            clients: self.shared.client_count.load(Ordering::Relaxed),
            haptic,
            error: self.shared.error.lock().expect("error lock").take(),
        };
        (session, report)
    }
}

/// Starts serving `session` on `addr` (port 0 picks a free port).
pub fn serve(session: Session, addr: impl ToSocketAddrs, config: ServeConfig) -> Result<ServeHandle, SessionError> {
    let listener = TcpListener::bind(addr).map_err(|e| SessionError::Network(e.to_string()))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| SessionError::Network(e.to_string()))?;
    let local = listener
        .local_addr()
        .map_err(|e| SessionError::Network(e.to_string()))?;
    let mesh_frame = serde_json::to_string(&ServerFrame::Mesh {
        vertex_count: session.surface.vertices.len(),
        triangles: session.surface.triangles.clone(),
    })
    .expect("frame serializes");
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        poses: PoseMailbox::new(),
        pose_writer: Mutex::new((session.proxy.pose_end, session.proxy.mode)),
        control: Mutex::new(Vec::new()),
        latest: Mutex::new(Some(Arc::new(SnapshotMessage::from_session(
            &session,
            false,
            config.binary_threshold,
        )))),
        forces: ForceMailbox::new(),
        clients: Mutex::new(Vec::new()),
        steps: AtomicU64::new(0),
        snapshots_sent: AtomicU64::new(0),
        client_count: AtomicU64::new(0),
        mesh_frame: mesh_frame.into(),
        error: Mutex::new(None),
    });

    let simulation = {
        let shared = shared.clone();
        let config = config.clone();
        std::thread::spawn(move || simulation_loop(session, &shared, &config))
    };
    let mut threads = Vec::new();
    {
        let shared = shared.clone();
        threads.push(std::thread::spawn(move || accept_loop(listener, &shared)));
    }
    {
        let shared = shared.clone();
        let period = Duration::from_secs_f64(1.0 / config.snapshot_rate_hz);
        threads.push(std::thread::spawn(move || broadcast_loop(&shared, period)));
    }
    let haptic = config.run_haptic_loop.then(|| {
        let shared = shared.clone();
        let priority = config.haptic_priority;
        std::thread::spawn(move || {
            let cfg = HapticLoopConfig {
                duration: Duration::from_secs(365 * 24 * 3600),
                realtime_priority: priority,
                ..Default::default()
            };
            run_haptic_loop(&shared.forces, &cfg, &shared.stop, |_, _, s| {
                s.force.iter().all(|c| c.is_finite())
            })
        })
    });
    Ok(ServeHandle {
        addr: local,
        shared,
        threads,
        haptic,
        simulation,
    })
}

fn simulation_loop(mut session: Session, shared: &Shared, config: &ServeConfig) -> Session {
    let dt = Duration::from_secs_f64(session.dt());
    let snapshot_every = Duration::from_secs_f64(0.5 / config.snapshot_rate_hz);
    let mut paused = false;
    let mut next = Instant::now();
    let mut last_snapshot = Instant::now();
    // Set by anything a client would see; cleared once a snapshot carries it.
    let mut changed = false;
    while !shared.stop.load(Ordering::Relaxed) {
        for c in std::mem::take(&mut *shared.control.lock().expect("control lock")) {
            changed = true;
            match c {
                Control::Pause(p) => paused = p,
                Control::Reset => {
                    if let Err(e) = session.reset() {
                        *shared.error.lock().expect("error lock") = Some(e);
                        shared.stop.store(true, Ordering::Relaxed);
                        return session;
                    }
                }
            }
        }
        if !paused {
            let tool = shared.poses.read().map(|(_, pose, mode)| (pose, mode));
            match session.step(tool) {
                Ok(_) => {
                    shared.steps.fetch_add(1, Ordering::Relaxed);
                    shared.forces.publish(session.last_force);
                    changed = true;
                }
                Err(e) => {
                    *shared.error.lock().expect("error lock") = Some(e);
                    shared.stop.store(true, Ordering::Relaxed);
                    return session;
                }
            }
        }
        if changed && last_snapshot.elapsed() >= snapshot_every {
            let snap = SnapshotMessage::from_session(&session, paused, config.binary_threshold);
            *shared.latest.lock().expect("snapshot lock") = Some(Arc::new(snap));
            last_snapshot = Instant::now();
            changed = false;
        }
        next += if paused { Duration::from_millis(5) } else { dt };
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else if now - next > dt * 10 {
            next = now;
        }
    }
    session
}

fn broadcast_loop(shared: &Shared, period: Duration) {
    let mut sent: Option<Arc<SnapshotMessage>> = None;
    let mut last_send: Option<Instant> = None;
    while !shared.stop.load(Ordering::Relaxed) {
        if let Some(t) = last_send {
            let due = t + period;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let latest = shared.latest.lock().expect("snapshot lock").clone();
        let Some(snap) = latest else {
            std::thread::sleep(Duration::from_millis(1));
            continue;
        };
        if sent.as_ref().is_some_and(|s| Arc::ptr_eq(s, &snap)) {
            std::thread::sleep(Duration::from_millis(1));
            continue;
        }
        let text: Arc<str> = serde_json::to_string(&ServerFrame::Snapshot((*snap).clone()))
            .expect("frame serializes")
            .into();
        shared
            .clients
            .lock()
            .expect("client lock")
            .retain(|tx| tx.send(text.clone()).is_ok());
        shared.snapshots_sent.fetch_add(1, Ordering::Relaxed);
        sent = Some(snap);
        last_send = Some(Instant::now());
    }
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    let mut clients = Vec::new();
    while !shared.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = shared.clone();
                clients.push(std::thread::spawn(move || {
                    if let Some((ws, rx)) = handshake(stream, &shared) {
                        client_loop(ws, rx, &shared);
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
    for c in clients {
        let _ = c.join();
    }
}

fn handshake(stream: TcpStream, shared: &Shared) -> Option<(WebSocket<TcpStream>, Receiver<Arc<str>>)> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    stream.set_nodelay(true).ok()?;
    let mut ws = tungstenite::accept(stream).ok()?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(2))).ok()?;
    ws.send(Message::text(shared.mesh_frame.to_string())).ok()?;
    let (tx, rx) = channel();
    shared.clients.lock().expect("client lock").push(tx);
    shared.client_count.fetch_add(1, Ordering::Relaxed);
    Some((ws, rx))
}

fn client_loop(mut ws: WebSocket<TcpStream>, rx: Receiver<Arc<str>>, shared: &Shared) {
    loop {
        if shared.stop.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return;
        }
        while let Ok(frame) = rx.try_recv() {
            if ws.send(Message::text(frame.to_string())).is_err() {
                return;
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if let Some(err) = shared.handle_text(t.as_str()) {
                    if ws.send(Message::text(err)).is_err() {
                        return;
                    }
                }
            }
            Ok(Message::Binary(_)) => {
                let err = ServerFrame::Error {
                    message: "commands are JSON text frames".into(),
                };
                if ws
                    .send(Message::text(serde_json::to_string(&err).expect("frame serializes")))
                    .is_err()
                {
                    return;
                }
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
}
