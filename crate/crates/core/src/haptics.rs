//! Penalty impulses from penetration intervals, tool action on the object,
//! and the fixed-rate force loop.
//!
//! The impulse of a contact is `k ∫ (n·(p − q)) n dt` over its penetration
//! intervals, with `t` the normalized step time. Each interval is integrated
//! with 8-point Gauss–Legendre on the linearly interpolated primitives.
//!
//! The simulation publishes forces through a [`ForceMailbox`] and the haptic
//! loop reads it at 1 kHz without ever waiting on the writer.

use std::collections::BTreeSet;
use std::sync::atomic::{fence, AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{ContactEvent, ContactKind, SurfaceTopology};
use crate::Vec3;

/// Gauss–Legendre nodes on `[-1, 1]` and their weights.
pub const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HapticsError {
    #[error("{name} = {value} is outside its admissible range")]
    ParameterRange { name: &'static str, value: f64 },
    #[error("rotation quaternion has norm {0}, expected 1")]
    NotUnit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolMode {
    Push,
    Pull,
    Wet,
    Dry,
}

impl ToolMode {
    pub fn deforms(self) -> bool {
        matches!(self, ToolMode::Push | ToolMode::Pull)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToolMode::Push => "push",
            ToolMode::Pull => "pull",
            ToolMode::Wet => "wet",
            ToolMode::Dry => "dry",
        }
    }

    pub fn code(self) -> u64 {
        self as u64
    }

    pub fn from_code(code: u64) -> Option<Self> {
        [ToolMode::Push, ToolMode::Pull, ToolMode::Wet, ToolMode::Dry]
            .get(code as usize)
            .copied()
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }
}

impl Pose {
    pub fn from_translation(t: Vec3) -> Self {
        Self {
            translation: t,
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Quaternion given as `[w, x, y, z]`; must be unit within 1e-6.
    pub fn from_parts(translation: Vec3, wxyz: [f64; 4]) -> Result<Self, HapticsError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        if !((n - 1.0).abs() <= 1e-6) {
            return Err(HapticsError::NotUnit(n));
        }
        Ok(Self {
            translation,
            rotation: UnitQuaternion::new_normalize(q),
        })
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Linear translation, spherical rotation.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        Pose {
            translation: self.translation.lerp(&other.translation, s),
            rotation: self.rotation.slerp(&other.rotation, s),
        }
    }
}

/// Shape of the locality damping kernel around the tool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub k1: f64,
    pub k2: f64,
    pub radius: f64,
}

/// The user-driven tool: its rest surface, the step's start and end poses and
/// the contact stiffnesses.
#[derive(Debug, Clone)]
pub struct ToolProxy {
    pub rest_vertices: Vec<Vec3>,
    pub topology: SurfaceTopology,
    pub pose_start: Pose,
    pub pose_end: Pose,
    pub mode: ToolMode,
    pub k_vf: f64,
    pub k_ee: f64,
    pub kernel: KernelShape,
}

impl ToolProxy {
    pub fn new(
        rest_vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        k_vf: f64,
        k_ee: f64,
        kernel: KernelShape,
    ) -> Result<Self, HapticsError> {
        for (name, value) in [("k_vf", k_vf), ("k_ee", k_ee)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(HapticsError::ParameterRange { name, value });
            }
        }
        let topology = SurfaceTopology::new(triangles, rest_vertices.len());
        Ok(Self {
            rest_vertices,
            topology,
            pose_start: Pose::default(),
            pose_end: Pose::default(),
            mode: ToolMode::Push,
            k_vf,
            k_ee,
            kernel,
        })
    }

    pub fn vertices_at(&self, pose: &Pose) -> Vec<Vec3> {
        self.rest_vertices.iter().map(|p| pose.apply(p)).collect()
    }

    /// Advances the step window: the old end pose becomes the start.
    pub fn move_to(&mut self, pose: Pose) {
        self.pose_start = self.pose_end;
        self.pose_end = pose;
    }

    /// Center of the tool at the end of the step.
    pub fn center(&self) -> Vec3 {
        self.pose_end.translation
    }
}

/// `∫ depth·n dt` over one interval with 8-point Gauss–Legendre.
pub fn integrate_interval(event: &ContactEvent, t_a: f64, t_b: f64) -> Vec3 {
    let half = 0.5 * (t_b - t_a);
    let mid = 0.5 * (t_a + t_b);
    let mut acc = Vec3::zeros();
    for (x, w) in GAUSS_LEGENDRE_8 {
        if let Some(s) = event.geometry.sample(mid + half * x) {
            acc += s.normal * (s.depth * w);
        }
    }
    acc * half
}

/// `k ∑ᵢ ∫ (n·(p − q)) n dt` over all penetration intervals.
pub fn penalty_impulse(event: &ContactEvent, k: f64) -> Vec3 {
    event
        .intervals
        .iter()
        .fold(Vec3::zeros(), |acc, iv| acc + integrate_interval(event, iv.t_a, iv.t_b))
        * k
}

pub fn penalty_impulse_vf(event: &ContactEvent, k_vf: f64) -> Vec3 {
    penalty_impulse(event, k_vf)
}

pub fn penalty_impulse_ee(event: &ContactEvent, k_ee: f64) -> Vec3 {
    penalty_impulse(event, k_ee)
}

/// What one simulation step of tool contact does to the object and the tool.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolStepResult {
    /// Per object vertex; all zero for wet and dry tools.
    pub nodal_impulses: Vec<Vec3>,
    /// Every `(object vertex, impulse)` share in accumulation order.
    pub contributions: Vec<(usize, Vec3)>,
    /// `−Σ contributions`, folded in the same order.
    pub proxy_impulse: Vec3,
    /// Reaction on the tool, `proxy_impulse / Δt`.
    pub force: Vec3,
    pub contact_count: usize,
    /// Object boundary faces touched by a penetrating contact.
    pub touched_faces: BTreeSet<usize>,
}

impl ToolStepResult {
    /// Sum of the object shares in accumulation order.
    pub fn total_object_impulse(&self) -> Vec3 {
        self.contributions.iter().fold(Vec3::zeros(), |acc, (_, i)| acc + i)
    }
}

/// Splits each event's impulse over its object vertices by the barycentric
/// weights at every interval's midpoint. Push applies `+I`, pull `−I`; wet
/// and dry compute the same reaction but leave the object untouched.
pub fn apply_tool_step(
    proxy: &ToolProxy,
    events: &[ContactEvent],
    dt: f64,
    object_vertex_count: usize,
) -> ToolStepResult {
    let sign = if proxy.mode == ToolMode::Pull { -1.0 } else { 1.0 };
    let mut out = ToolStepResult {
        nodal_impulses: vec![Vec3::zeros(); object_vertex_count],
        ..Default::default()
    };
    for event in events {
        let k = match event.kind {
            ContactKind::EdgeEdge => proxy.k_ee,
            _ => proxy.k_vf,
        };
        let mut touched = false;
        for iv in &event.intervals {
            let impulse = integrate_interval(event, iv.t_a, iv.t_b) * (k * sign);
            let Some(s) = event.geometry.sample(0.5 * (iv.t_a + iv.t_b)) else {
                continue;
            };
            touched = true;
            for (slot, &v) in event.object_ids.iter().enumerate() {
                let share = impulse * s.object_weights[slot];
                out.contributions.push((v, share));
            }
        }
        if touched {
            out.contact_count += 1;
            out.touched_faces.extend(event.object_faces.iter().copied());
        }
    }
    out.proxy_impulse = Vec3::zeros() - out.total_object_impulse();
    out.force = out.proxy_impulse / dt;
    if proxy.mode.deforms() {
        for (v, share) in &out.contributions {
            out.nodal_impulses[*v] += share;
        }
    }
    out
}

/// Single-writer sequence lock over `N` f64 words.
///
/// The writer makes the sequence odd, stores the words and makes it even
/// again; a reader retries until it sees the same even sequence on both sides
/// of its loads.
#[derive(Debug)]
pub struct SeqLock<const N: usize> {
    seq: AtomicU64,
    words: [AtomicU64; N],
}

impl<const N: usize> Default for SeqLock<N> {
    fn default() -> Self {
        Self::new([0.0; N])
    }
}

impl<const N: usize> SeqLock<N> {
    pub fn new(init: [f64; N]) -> Self {
        Self {
            seq: AtomicU64::new(0),
            words: init.map(|v| AtomicU64::new(v.to_bits())),
        }
    }

    /// Must only be called from one thread at a time.
    pub fn write(&self, values: [f64; N]) -> u64 {
        let s = self.seq.load(Ordering::Relaxed);
        self.seq.store(s.wrapping_add(1), Ordering::Relaxed);
        fence(Ordering::Release);
        for (w, v) in self.words.iter().zip(values) {
            w.store(v.to_bits(), Ordering::Relaxed);
        }
        self.seq.store(s.wrapping_add(2), Ordering::Release);
        (s + 2) / 2
    }

    /// One attempt; `None` if a write overlapped.
    pub fn try_read(&self) -> Option<(u64, [f64; N])> {
        let s1 = self.seq.load(Ordering::Acquire);
        if s1 & 1 == 1 {
            return None;
        }
        let values = std::array::from_fn(|i| f64::from_bits(self.words[i].load(Ordering::Relaxed)));
        fence(Ordering::Acquire);
        let s2 = self.seq.load(Ordering::Relaxed);
        (s1 == s2).then_some((s1 / 2, values))
    }

    /// Publication count and a consistent snapshot.
    pub fn read(&self) -> (u64, [f64; N]) {
        loop {
            if let Some(r) = self.try_read() {
                return r;
            }
            std::hint::spin_loop();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceSample {
    pub timestamp: f64,
    pub force: Vec3,
    /// Reserved, always zero.
    pub torque: Vec3,
}

impl ForceSample {
    fn to_words(self) -> [f64; 7] {
        [
            self.timestamp,
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    fn from_words(w: [f64; 7]) -> Self {
        Self {
            timestamp: w[0],
            force: Vec3::new(w[1], w[2], w[3]),
            torque: Vec3::new(w[4], w[5], w[6]),
        }
    }
}

/// Latest force from the simulation, for the haptic loop.
#[derive(Debug, Default)]
pub struct ForceMailbox {
    lock: SeqLock<7>,
}

impl ForceMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, sample: ForceSample) -> u64 {
        self.lock.write(sample.to_words())
    }

    /// `(sequence, sample)`; sequence 0 is the initial zero sample.
    pub fn read(&self) -> (u64, ForceSample) {
        let (s, w) = self.lock.read();
        (s, ForceSample::from_words(w))
    }
}

/// Latest tool pose and mode from the input device, for the simulation.
#[derive(Debug, Default)]
pub struct PoseMailbox {
    lock: SeqLock<8>,
}

impl PoseMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, pose: &Pose, mode: ToolMode) -> u64 {
        let q = pose.wxyz();
        let t = pose.translation;
        self.lock
            .write([t.x, t.y, t.z, q[0], q[1], q[2], q[3], mode.code() as f64])
    }

    /// `None` until the first publish.
    pub fn read(&self) -> Option<(u64, Pose, ToolMode)> {
        let (s, w) = self.lock.read();
        if s == 0 {
            return None;
        }
        let pose = Pose {
            translation: Vec3::new(w[0], w[1], w[2]),
            rotation: UnitQuaternion::new_normalize(Quaternion::new(w[3], w[4], w[5], w[6])),
        };
        Some((s, pose, ToolMode::from_code(w[7] as u64).unwrap_or(ToolMode::Push)))
    }
}

/// The haptic loop's per-tick work: the newest sample, never blocking on
/// the writer for longer than a write takes.
pub fn haptic_loop_tick(mailbox: &ForceMailbox) -> ForceSample {
    mailbox.read().1
}

/// Inter-tick interval histogram in fixed-width microsecond bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterHistogram {
    pub bin_width_us: u64,
    /// Last bin collects everything at or beyond its lower edge.
    pub counts: Vec<u64>,
    pub samples: u64,
    pub min_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
}

impl JitterHistogram {
    pub fn new(bin_width_us: u64, bins: usize) -> Self {
        Self {
            bin_width_us,
            counts: vec![0; bins],
            samples: 0,
            min_us: f64::INFINITY,
            max_us: 0.0,
            mean_us: 0.0,
        }
    }

    pub fn record(&mut self, interval: Duration) {
        let us = interval.as_secs_f64() * 1e6;
        let bin = ((us / self.bin_width_us as f64) as usize).min(self.counts.len() - 1);
        self.counts[bin] += 1;
        self.samples += 1;
        self.min_us = self.min_us.min(us);
        self.max_us = self.max_us.max(us);
        self.mean_us += (us - self.mean_us) / self.samples as f64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapticLoopConfig {
    pub rate_hz: f64,
    pub duration: Duration,
    /// Sleep until this long before a deadline, then spin.
    pub spin_window: Duration,
    /// `SCHED_FIFO` priority for the loop thread. Falls back to normal
    /// scheduling when the OS refuses.
    pub realtime_priority: Option<i32>,
}

impl Default for HapticLoopConfig {
    fn default() -> Self {
        Self {
            rate_hz: 1000.0,
            duration: Duration::from_secs(1),
            spin_window: Duration::from_micros(300),
            realtime_priority: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HapticLoopReport {
    pub nominal_ticks: u64,
    pub ticks: u64,
    /// Ticks that ran within one period of their deadline.
    pub on_time_ticks: u64,
    /// On-time ticks in each whole second of the schedule.
    pub on_time_per_second: Vec<u64>,
    pub missed_deadlines: u64,
    /// Samples a tick callback flagged as inconsistent.
    pub torn_reads: u64,
    pub duration_s: f64,
    pub jitter: JitterHistogram,
    /// The loop ran under real-time scheduling.
    pub realtime: bool,
}

/// Puts the calling thread under `SCHED_FIFO` at `priority`.
#[cfg(target_os = "linux")]
pub fn set_realtime_priority(priority: i32) -> std::io::Result<()> {
    let param = libc::sched_param {
        sched_priority: priority,
    };
    // SAFETY: pid 0 is the calling thread and `param` outlives the call.
    let rc = unsafe { libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) };
    if rc == 0 {
        Ok(())
    } else {
        Err(std::io::Error::last_os_error())
    }
}

#[cfg(not(target_os = "linux"))]
pub fn set_realtime_priority(_priority: i32) -> std::io::Result<()> {
    Err(std::io::ErrorKind::Unsupported.into())
}

/// Runs the fixed-rate loop on the calling thread for `config.duration` or
/// until `stop` is set. `on_tick` receives the tick index and the sample and
/// returns `false` to flag a torn read.
pub fn run_haptic_loop(
    mailbox: &ForceMailbox,
    config: &HapticLoopConfig,
    stop: &AtomicBool,
    mut on_tick: impl FnMut(u64, u64, &ForceSample) -> bool,
) -> HapticLoopReport {
    let period = Duration::from_secs_f64(1.0 / config.rate_hz);
    let nominal = (config.duration.as_secs_f64() * config.rate_hz).round() as u64;
    let mut report = HapticLoopReport {
        nominal_ticks: nominal,
        ticks: 0,
        on_time_ticks: 0,
        on_time_per_second: Vec::new(),
        missed_deadlines: 0,
        torn_reads: 0,
        duration_s: 0.0,
        jitter: JitterHistogram::new(50, 80),
        realtime: config
            .realtime_priority
            .is_some_and(|p| set_realtime_priority(p).is_ok()),
    };
    let start = Instant::now();
    let mut last: Option<Instant> = None;
    for k in 0..nominal {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let deadline = start + period.mul_f64(k as f64);
        let now = Instant::now();
        if deadline > now + config.spin_window {
            std::thread::sleep(deadline - now - config.spin_window);
        }
        while Instant::now() < deadline {
            std::hint::spin_loop();
        }
        let fired = Instant::now();
        let (seq, sample) = mailbox.read();
        if !on_tick(k, seq, &sample) {
            report.torn_reads += 1;
        }
        report.ticks += 1;
        if fired.duration_since(deadline) < period {
            report.on_time_ticks += 1;
            let second = (k as f64 / config.rate_hz) as usize;
            if report.on_time_per_second.len() <= second {
                report.on_time_per_second.resize(second + 1, 0);
            }
            report.on_time_per_second[second] += 1;
        } else {
            report.missed_deadlines += 1;
        }
        if let Some(prev) = last {
            report.jitter.record(fired.duration_since(prev));
        }
        last = Some(fired);
    }
    report.duration_s = start.elapsed().as_secs_f64();
    report
}

/// Virtual-clock stand-in for the haptic loop during replay: every tick of
/// the fixed rate re-serves the latest published sample.
#[derive(Debug, Clone)]
pub struct Resampler {
    period: f64,
    next_tick: u64,
    latest: ForceSample,
}

impl Resampler {
    pub fn new(rate_hz: f64) -> Self {
        Self {
            period: 1.0 / rate_hz,
            next_tick: 0,
            latest: ForceSample::default(),
        }
    }

    pub fn publish(&mut self, sample: ForceSample) {
        self.latest = sample;
    }

    /// Emits every tick with time strictly before `time`.
    pub fn advance_to(&mut self, time: f64) -> Vec<(f64, ForceSample)> {
        let mut out = Vec::new();
        loop {
            let t = self.next_tick as f64 * self.period;
            if t >= time - 1e-9 * self.period {
                break;
            }
            out.push((
                t,
                ForceSample {
                    timestamp: t,
                    ..self.latest
                },
            ));
            self.next_tick += 1;
        }
        out
    }
}
