//! Export of the display surface, the full tet state, the force log and the
//! saturation field, and the import that resumes from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::replay::{write_force_csv, ForceRow};
use super::scene::read_json;
use super::{Session, SessionError, SCHEMA_VERSION};
use crate::fem::SystemState;
use crate::haptics::{ForceSample, Pose, ToolMode};
use crate::mesh::io::write_obj;
use crate::wetting::SaturationField;

/// Everything needed to continue a session bit for bit. Floats are written
/// with round-trip precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetStateFile {
    pub schema_version: u32,
    pub step: u64,
    pub state: SystemState,
    pub saturation: Vec<f64>,
    pub proxy_start: Pose,
    pub proxy_end: Pose,
    pub mode: ToolMode,
    pub last_force: ForceSample,
    pub last_contact_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub surface_obj: PathBuf,
    pub tet_state: PathBuf,
    pub force_csv: PathBuf,
    pub saturation_csv: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<(), SessionError> {
    std::fs::write(path, text).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `tet,saturation,water_mass`.
pub fn saturation_csv(field: &SaturationField) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tet", "saturation", "water_mass"])
        .expect("in-memory write");
    for t in 0..field.len() {
        w.serialize((t, field.saturation[t], field.water_mass(t)))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Saturation column of a file written by [`saturation_csv`].
pub fn read_saturation_csv(text: &str) -> Result<Vec<f64>, csv::Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<(usize, f64, f64)>()
        .map(|row| row.map(|(_, s, _)| s))
        .collect()
}

/// Writes `surface.obj`, `tet_state.json`, `force.csv` and `saturation.csv`.
pub fn export(session: &Session, force_rows: &[ForceRow], dir: &Path) -> Result<ExportPaths, SessionError> {
    std::fs::create_dir_all(dir).map_err(|source| SessionError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths = ExportPaths {
        surface_obj: dir.join("surface.obj"),
        tet_state: dir.join("tet_state.json"),
        force_csv: dir.join("force.csv"),
        saturation_csv: dir.join("saturation.csv"),
    };
    write(
        &paths.surface_obj,
        &write_obj(&session.surface.vertices, &session.surface.triangles),
    )?;
    let state = TetStateFile {
        schema_version: SCHEMA_VERSION,
        step: session.step_index,
        state: session.body.state.clone(),
        saturation: session.saturation.saturation.clone(),
        proxy_start: session.proxy.pose_start,
        proxy_end: session.proxy.pose_end,
        mode: session.proxy.mode,
        last_force: session.last_force,
        last_contact_count: session.last_contact_count,
    };
    write(
        &paths.tet_state,
        &(serde_json::to_string(&state).expect("state serializes") + "\n"),
    )?;
    write_force_csv(&paths.force_csv, force_rows)?;
    write(&paths.saturation_csv, &saturation_csv(&session.saturation))?;
    Ok(paths)
}

/// Replaces the session's evolving state with an exported one.
pub fn import_state(session: &mut Session, path: &Path) -> Result<(), SessionError> {
    let file: TetStateFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(SessionError::Invalid {
            field: "schema_version".into(),
            message: format!("unsupported version {}", file.schema_version),
        });
    }
    if file.saturation.len() != session.saturation.len() {
        return Err(SessionError::Invalid {
            field: "saturation".into(),
            message: format!("{} values for {} tets", file.saturation.len(), session.saturation.len()),
        });
    }
    if let Some(i) = file.saturation.iter().position(|s| !(0.0..=1.0).contains(s)) {
        return Err(SessionError::Invalid {
            field: format!("saturation[{i}]"),
            message: format!("{} is outside [0, 1]", file.saturation[i]),
        });
    }
    session.body.set_state(file.state).map_err(|e| SessionError::Invalid {
        field: "state".into(),
        message: e.to_string(),
    })?;
    session.saturation.saturation = file.saturation;
    session.proxy.pose_start = file.proxy_start;
    session.proxy.pose_end = file.proxy_end;
    session.proxy.mode = file.mode;
    session.step_index = file.step;
    session.last_force = file.last_force;
    session.last_contact_count = file.last_contact_count;
    session.last_events.clear();
    session.refresh_surface();
    Ok(())
}
