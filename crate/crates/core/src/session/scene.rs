//! Scene and tool-path files: JSON with a schema version, every field
//! validated with its dotted path.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::fem::PlasticityParams;
use crate::haptics::{Pose, ToolMode};
use crate::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub size: [f64; 3],
    pub cells: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub radius: f64,
    #[serde(default = "default_subdivisions")]
    pub subdivisions: u32,
}

fn default_subdivisions() -> u32 {
    1
}

/// `"meshes/bar"` names `meshes/bar.node` and `meshes/bar.ele`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TetMeshSource {
    TetGen(String),
    Box {
        #[serde(rename = "box")]
        spec: BoxSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProxySource {
    Obj(String),
    Sphere { sphere: SphereSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxSide {
    #[serde(rename = "x-")]
    MinX,
    #[serde(rename = "x+")]
    MaxX,
    #[serde(rename = "y-")]
    MinY,
    #[serde(rename = "y+")]
    MaxY,
    #[serde(rename = "z-")]
    MinZ,
    #[serde(rename = "z+")]
    MaxZ,
}

impl BoxSide {
    pub fn axis(self) -> usize {
        match self {
            BoxSide::MinX | BoxSide::MaxX => 0,
            BoxSide::MinY | BoxSide::MaxY => 1,
            BoxSide::MinZ | BoxSide::MaxZ => 2,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, BoxSide::MaxX | BoxSide::MaxY | BoxSide::MaxZ)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBlock {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_water_bulk")]
    pub water_bulk_modulus: f64,
    #[serde(default = "default_regularizer")]
    pub water_shear_regularizer: f64,
    #[serde(default)]
    pub plasticity: Option<PlasticityParams>,
}

fn default_density() -> f64 {
    1000.0
}
fn default_water_bulk() -> f64 {
    2.2e9
}
fn default_regularizer() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WettingBlock {
    pub porosity: f64,
    pub diffusivity: f64,
    pub delta_s: f64,
    pub initial_saturation: f64,
}

impl Default for WettingBlock {
    fn default() -> Self {
        Self {
            porosity: 0.3,
            diffusivity: 1e-4,
            delta_s: 0.05,
            initial_saturation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationBlock {
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
    pub fixed: Vec<usize>,
    /// Pins every vertex on these sides of the rest bounding box.
    pub pin: Vec<BoxSide>,
    pub stiffness_warping: bool,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            alpha: 0.1,
            beta: 0.01,
            fixed: Vec::new(),
            pin: Vec::new(),
            stiffness_warping: false,
            cg_tolerance: 1e-6,
            cg_max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactBlock {
    pub k_vf: f64,
    pub k_ee: f64,
    #[serde(default = "default_depth_limit")]
    pub depth_limit: f64,
}

fn default_depth_limit() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub k1: f64,
    pub k2: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub schema_version: u32,
    pub tet_mesh: TetMeshSource,
    /// OBJ; the tet mesh boundary is shown when absent.
    #[serde(default)]
    pub surface_mesh: Option<String>,
    pub proxy: ProxySource,
    pub material: MaterialBlock,
    #[serde(default)]
    pub wetting: WettingBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    pub contact: ContactBlock,
    pub kernel: KernelBlock,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SessionError {
    SessionError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn check(field: &str, value: f64, ok: bool, range: &str) -> Result<(), SessionError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{value} is outside {range}")))
    }
}

/// Reads and parses a JSON file, reporting the failing field path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text, path)
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, SessionError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| SessionError::Parse {
        file: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

impl SceneConfig {
    pub fn from_path(path: &Path) -> Result<Self, SessionError> {
        read_json(path)
    }

    /// Range checks that need no mesh.
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if let TetMeshSource::Box { spec } = &self.tet_mesh {
            for (k, s) in spec.size.iter().enumerate() {
                check(&format!("tet_mesh.box.size[{k}]"), *s, *s > 0.0, "(0, ∞)")?;
            }
            if let Some(k) = spec.cells.iter().position(|&c| c == 0) {
                return Err(invalid(format!("tet_mesh.box.cells[{k}]"), "must be at least 1"));
            }
        }
        if let ProxySource::Sphere { sphere } = &self.proxy {
            check("proxy.sphere.radius", sphere.radius, sphere.radius > 0.0, "(0, ∞)")?;
            if sphere.subdivisions > 5 {
                return Err(invalid("proxy.sphere.subdivisions", "at most 5"));
            }
        }
        let m = &self.material;
        check(
            "material.young_modulus",
            m.young_modulus,
            m.young_modulus > 0.0,
            "(0, ∞)",
        )?;
        check(
            "material.poisson_ratio",
            m.poisson_ratio,
            m.poisson_ratio > -1.0 && m.poisson_ratio < 0.5,
            "(-1, 0.5)",
        )?;
        check("material.density", m.density, m.density > 0.0, "(0, ∞)")?;
        check(
            "material.water_bulk_modulus",
            m.water_bulk_modulus,
            m.water_bulk_modulus > 0.0,
            "(0, ∞)",
        )?;
        check(
            "material.water_shear_regularizer",
            m.water_shear_regularizer,
            m.water_shear_regularizer > 0.0,
            "(0, ∞)",
        )?;
        if let Some(p) = &m.plasticity {
            check(
                "material.plasticity.yield",
                p.yield_strain,
                p.yield_strain >= 0.0,
                "[0, ∞)",
            )?;
            check(
                "material.plasticity.creep",
                p.creep,
                (0.0..=1.0).contains(&p.creep),
                "[0, 1]",
            )?;
            check("material.plasticity.max", p.max, p.max >= p.yield_strain, "[yield, ∞)")?;
        }
        let w = &self.wetting;
        check(
            "wetting.porosity",
            w.porosity,
            (0.0..=1.0).contains(&w.porosity),
            "[0, 1]",
        )?;
        check("wetting.diffusivity", w.diffusivity, w.diffusivity >= 0.0, "[0, ∞)")?;
        check(
            "wetting.delta_s",
            w.delta_s,
            w.delta_s > 0.0 && w.delta_s <= 1.0,
            "(0, 1]",
        )?;
        check(
            "wetting.initial_saturation",
            w.initial_saturation,
            (0.0..=1.0).contains(&w.initial_saturation),
            "[0, 1]",
        )?;
        let s = &self.simulation;
        check("simulation.dt", s.dt, s.dt > 0.0, "(0, ∞)")?;
        check("simulation.alpha", s.alpha, s.alpha >= 0.0, "[0, ∞)")?;
        check("simulation.beta", s.beta, s.beta >= 0.0, "[0, ∞)")?;
        check(
            "simulation.cg_tolerance",
            s.cg_tolerance,
            s.cg_tolerance > 0.0,
            "(0, ∞)",
        )?;
        if s.cg_max_iterations == 0 {
            return Err(invalid("simulation.cg_max_iterations", "must be at least 1"));
        }
        let c = &self.contact;
        check("contact.k_vf", c.k_vf, c.k_vf > 0.0, "(0, ∞)")?;
        check("contact.k_ee", c.k_ee, c.k_ee > 0.0, "(0, ∞)")?;
        check("contact.depth_limit", c.depth_limit, c.depth_limit > 0.0, "(0, ∞)")?;
        let k = &self.kernel;
        check("kernel.k1", k.k1, k.k1 >= 0.0, "[0, ∞)")?;
        check("kernel.k2", k.k2, k.k2 >= 0.0, "[0, ∞)")?;
        check("kernel.radius", k.radius, k.radius > 0.0, "(0, ∞)")?;
        Ok(())
    }
}

/// Resolves `relative` against the directory of the scene file.
pub fn resolve(base: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time: f64,
    pub position: Vec3,
    /// `[w, x, y, z]`.
    #[serde(default = "identity_wxyz")]
    pub rotation: [f64; 4],
    pub mode: ToolMode,
}

/// Keyframed tool path: linear in position, spherical in rotation; the mode
/// of a segment is the mode of its first keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolPathScript {
    pub schema_version: u32,
    pub keyframes: Vec<Keyframe>,
}

impl ToolPathScript {
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            keyframes: Vec::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, SessionError> {
        let s: Self = read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let mut previous = None;
        for (i, k) in self.keyframes.iter().enumerate() {
            let ok = match previous {
                None => k.time == 0.0,
                Some(p) => k.time > p,
            };
            if !ok || !k.time.is_finite() {
                let rule = if i == 0 {
                    "the first keyframe must be at 0"
                } else {
                    "times must increase strictly"
                };
                return Err(invalid(format!("keyframes[{i}].time"), format!("{}: {rule}", k.time)));
            }
            previous = Some(k.time);
            if k.position.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("keyframes[{i}].position"), "must be finite"));
            }
            Pose::from_parts(k.position, k.rotation)
                .map_err(|e| invalid(format!("keyframes[{i}].rotation"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.keyframes.last().map_or(0.0, |k| k.time)
    }

    /// Pose and mode at `time`, held constant past the last keyframe.
    pub fn sample(&self, time: f64) -> Option<(Pose, ToolMode)> {
        let pose = |k: &Keyframe| Pose::from_parts(k.position, k.rotation).expect("validated keyframe");
        let first = self.keyframes.first()?;
        if time <= first.time {
            return Some((pose(first), first.mode));
        }
        let i = self.keyframes.partition_point(|k| k.time <= time);
        if i == self.keyframes.len() {
            let last = self.keyframes.last()?;
            return Some((pose(last), last.mode));
        }
        let (a, b) = (&self.keyframes[i - 1], &self.keyframes[i]);
        let s = (time - a.time) / (b.time - a.time);
        Some((pose(a).interpolate(&pose(b), s), a.mode))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(times: &[f64]) -> ToolPathScript {
        ToolPathScript {
            schema_version: 1,
            keyframes: times
                .iter()
                .enumerate()
                .map(|(i, &time)| Keyframe {
                    time,
                    position: Vec3::new(i as f64, 0.0, 0.0),
                    rotation: identity_wxyz(),
                    mode: if i == 0 { ToolMode::Push } else { ToolMode::Wet },
                })
                .collect(),
        }
    }

    #[test]
    fn keyframe_rules() {
        assert!(script(&[0.0, 1.0, 2.0]).validate().is_ok());
        assert!(script(&[]).validate().is_ok());
        let e = script(&[0.1, 1.0]).validate().unwrap_err();
        assert!(matches!(e, SessionError::Invalid { ref field, .. } if field == "keyframes[0].time"));
        let e = script(&[0.0, 1.0, 1.0]).validate().unwrap_err();
        assert!(matches!(e, SessionError::Invalid { ref field, .. } if field == "keyframes[2].time"));
        let mut s = script(&[0.0]);
        s.keyframes[0].rotation = [2.0, 0.0, 0.0, 0.0];
        let e = s.validate().unwrap_err();
        assert!(matches!(e, SessionError::Invalid { ref field, .. } if field == "keyframes[0].rotation"));
    }

    #[test]
    fn sampling_interpolates_and_holds() {
        let s = script(&[0.0, 1.0, 3.0]);
        let (p, m) = s.sample(0.5).unwrap();
        assert_eq!((p.translation.x, m), (0.5, ToolMode::Push));
        let (p, m) = s.sample(2.0).unwrap();
        assert_eq!((p.translation.x, m), (1.5, ToolMode::Wet));
        assert_eq!(s.sample(10.0).unwrap().0.translation.x, 2.0);
        assert_eq!(s.sample(-1.0).unwrap().0.translation.x, 0.0);
        assert!(script(&[]).sample(0.0).is_none());
    }

    #[test]
    fn parse_errors_name_the_field() {
        let text = r#"{"schema_version": 1, "keyframes": [{"time": 0, "position": [0, 0, "x"], "mode": "push"}]}"#;
        let e = parse_json::<ToolPathScript>(text, Path::new("t.json")).unwrap_err();
        match e {
            SessionError::Parse { field, .. } => assert_eq!(field, "keyframes[0].position[2]"),
            other => panic!("{other}"),
        }
        let text = r#"{"schema_version": 1, "keyframes": [{"time": 0, "position": [0, 0, 0], "mode": "spray"}]}"#;
        let e = parse_json::<ToolPathScript>(text, Path::new("t.json")).unwrap_err();
        assert!(matches!(e, SessionError::Parse { ref field, .. } if field == "keyframes[0].mode"));
    }
}
