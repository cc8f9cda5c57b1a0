//! Deterministic headless replay of a tool-path script.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Session, SessionError, StepRecord, ToolPathScript};
use crate::collision::ContactDumpLine;
use crate::haptics::{Resampler, ToolMode};
use crate::mesh::EmbeddingReport;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    /// Defaults to the time of the last keyframe.
    pub duration: Option<f64>,
    pub debug_contacts: bool,
    pub haptic_rate_hz: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            duration: None,
            debug_contacts: false,
            haptic_rate_hz: 1000.0,
        }
    }
}

/// One haptic tick of the resampled force stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRow {
    pub time_s: f64,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mode: String,
    pub contact_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRate {
    pub steps: u64,
    pub mean_step_ms: f64,
    pub mean_frame_rate: f64,
}

/// End-of-run summary. Wall-clock figures vary run to run; everything else
/// is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub steps: u64,
    pub simulated_time_s: f64,
    pub tet_count: usize,
    pub wall_time_s: f64,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    /// Keyed by tool mode, `none` for steps without a tool.
    pub frame_rate_by_mode: BTreeMap<String, ModeRate>,
    pub haptic_ticks: usize,
    pub peak_force: f64,
    pub peak_indentation: f64,
    pub final_water_mass: f64,
    pub total_cg_iterations: usize,
    pub embedding: EmbeddingReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub force_rows: Vec<ForceRow>,
    pub step_rows: Vec<StepRecord>,
    /// Wall time of each step in milliseconds.
    pub step_ms: Vec<f64>,
    pub summary: ReplaySummary,
    /// JSON lines, one per step with contacts, when requested.
    pub contact_dump: Vec<String>,
}

fn mode_name(mode: Option<ToolMode>) -> String {
    mode.map_or("none", ToolMode::as_str).to_string()
}

/// Steps the session through `script` on a virtual clock. Between steps the
/// haptic resampler emits every tick that falls before the step's end time,
/// serving the force of the last finished step.
pub fn run_replay(
    session: &mut Session,
    script: &ToolPathScript,
    options: &ReplayOptions,
) -> Result<ReplayOutput, SessionError> {
    script.validate()?;
    let dt = session.dt();
    let duration = options.duration.unwrap_or(script.end_time());
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(SessionError::Invalid {
            field: "duration".into(),
            message: format!("{duration} is not a valid duration"),
        });
    }
    let steps = (duration / dt).round() as u64;
    let t0 = session.time();
    if let Some((pose, mode)) = script.sample(t0) {
        session.place_tool(pose, mode);
    }
    let mut resampler = Resampler::new(options.haptic_rate_hz);
    let mut force_rows = Vec::new();
    let mut step_rows = Vec::with_capacity(steps as usize);
    let mut step_ms = Vec::with_capacity(steps as usize);
    let mut contact_dump = Vec::new();
    let mut meta = (mode_name(script.sample(t0).map(|s| s.1)), 0usize);
    let started = Instant::now();
    for k in 0..steps {
        let t_end = (k + 1) as f64 * dt;
        for (time_s, s) in resampler.advance_to(t_end - dt) {
            force_rows.push(ForceRow {
                time_s,
                fx: s.force.x,
                fy: s.force.y,
                fz: s.force.z,
                mode: meta.0.clone(),
                contact_count: meta.1,
            });
        }
        let tool = script.sample(t0 + t_end);
        let clock = Instant::now();
        let record = session.step(tool)?;
        step_ms.push(clock.elapsed().as_secs_f64() * 1e3);
        resampler.publish(session.last_force);
        meta = (mode_name(record.mode), record.contact_count);
        if options.debug_contacts && !session.last_events.is_empty() {
            contact_dump.push(ContactDumpLine::new(record.step, &session.last_events).to_json_line());
        }
        step_rows.push(record);
    }
    for (time_s, s) in resampler.advance_to(steps as f64 * dt) {
        force_rows.push(ForceRow {
            time_s,
            fx: s.force.x,
            fy: s.force.y,
            fz: s.force.z,
            mode: meta.0.clone(),
            contact_count: meta.1,
        });
    }
    let wall = started.elapsed().as_secs_f64();

    let mut by_mode: BTreeMap<String, (u64, f64)> = BTreeMap::new();
    for (r, ms) in step_rows.iter().zip(&step_ms) {
        let e = by_mode.entry(mode_name(r.mode)).or_default();
        e.0 += 1;
        e.1 += ms;
    }
    let frame_rate_by_mode = by_mode
        .into_iter()
        .map(|(k, (n, total))| {
            let mean = total / n as f64;
            (
                k,
                ModeRate {
                    steps: n,
                    mean_step_ms: mean,
                    mean_frame_rate: if mean > 0.0 { 1e3 / mean } else { f64::INFINITY },
                },
            )
        })
        .collect();
    let summary = ReplaySummary {
        steps,
        simulated_time_s: steps as f64 * dt,
        tet_count: session.body.mesh.tet_count(),
        wall_time_s: wall,
        mean_step_ms: if steps > 0 {
            step_ms.iter().sum::<f64>() / steps as f64
        } else {
            0.0
        },
        max_step_ms: step_ms.iter().copied().fold(0.0, f64::max),
        frame_rate_by_mode,
        haptic_ticks: force_rows.len(),
        peak_force: step_rows
            .iter()
            .map(|r| (r.fx * r.fx + r.fy * r.fy + r.fz * r.fz).sqrt())
            .fold(0.0, f64::max),
        peak_indentation: step_rows.iter().map(|r| r.max_displacement).fold(0.0, f64::max),
        final_water_mass: session.saturation.total_water_mass(),
        total_cg_iterations: step_rows.iter().map(|r| r.cg_iterations).sum(),
        embedding: session.embedding_report,
    };
    Ok(ReplayOutput {
        force_rows,
        step_rows,
        step_ms,
        summary,
        contact_dump,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SessionError + '_ {
    move |e| SessionError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), SessionError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_path(path)
        .map_err(csv_err(path))?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_err(path))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `time_s,fx,fy,fz,mode,contact_count`, one row per haptic tick.
pub fn write_force_csv(path: &Path, rows: &[ForceRow]) -> Result<(), SessionError> {
    write_rows(path, rows, &["time_s", "fx", "fy", "fz", "mode", "contact_count"])
}

/// One row per simulation step.
pub fn write_stats_csv(path: &Path, rows: &[StepRecord]) -> Result<(), SessionError> {
    write_rows(
        path,
        rows,
        &[
            "step",
            "time_s",
            "mode",
            "contact_count",
            "fx",
            "fy",
            "fz",
            "cg_iterations",
            "residual",
            "kinetic_energy",
            "elastic_energy",
            "water_mass",
            "mean_saturation",
            "max_saturation",
            "max_displacement",
            "refreshed_tets",
        ],
    )
}

impl ReplayOutput {
    /// Force CSV, stats CSV, summary JSON and, if recorded, the contact dump.
    pub fn write(&self, dir: &Path) -> Result<(), SessionError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SessionError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        write_force_csv(&dir.join("force.csv"), &self.force_rows)?;
        write_stats_csv(&dir.join("stats.csv"), &self.step_rows)?;
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(&summary, text + "\n").map_err(io(&summary))?;
        if !self.contact_dump.is_empty() {
            let path = dir.join("contacts.jsonl");
            let mut f = std::fs::File::create(&path).map_err(io(&path))?;
            for line in &self.contact_dump {
                writeln!(f, "{line}").map_err(io(&path))?;
            }
        }
        Ok(())
    }
}
