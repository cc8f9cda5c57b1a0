//! Scene assembly and the per-step pipeline shared by replay and serve.
//!
//! One step runs: broadphase and CCD between the swept tool and the swept
//! object surface, penalty impulses or wetting, diffusion and material
//! refresh, the implicit FEM step, plastic flow, the locality damping
//! kernel, and finally the transfer to the display surface.

mod export;
mod replay;
pub mod scene;
mod serve;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{detect_contacts, CollisionParams, ContactEvent, MovingSurface, SurfaceTopology};
use crate::fem::{
    DampingKernelParams, FemBody, FemError, MaterialCache, PlasticityParams, SimParams, StepReport, SystemState,
};
use crate::haptics::{apply_tool_step, ForceSample, KernelShape, Pose, ToolMode, ToolProxy};
use crate::material::{IsotropicElasticParams, Mixture, MixtureParams};
use crate::mesh::generate::{box_tets, icosphere};
use crate::mesh::io::{read_obj, read_tetgen};
use crate::mesh::{
    build_embedding, project_highlight, Aabb, CageEmbedding, EmbeddingReport, MeshError, SurfaceMesh, TetMesh,
};
use crate::wetting::{
    absorb, diffuse_step, dry, transfer_wetness, DiffusionParams, SaturationField, TetAdjacency, WettingError,
};
use crate::Vec3;

pub use export::{export, import_state, read_saturation_csv, saturation_csv, ExportPaths, TetStateFile};
pub use replay::{
    run_replay, write_force_csv, write_stats_csv, ForceRow, ModeRate, ReplayOptions, ReplayOutput, ReplaySummary,
};
pub use scene::{Keyframe, SceneConfig, ToolPathScript, SCHEMA_VERSION};
pub use serve::{
    decode_positions, encode_positions, serve, ClientCommand, ServeConfig, ServeHandle, ServeReport, ServerFrame,
    SnapshotMessage, SnapshotStats,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: field `{field}`: {message}")]
    Parse {
        file: PathBuf,
        field: String,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{file}: {source}")]
    Mesh { file: String, source: MeshError },
    #[error("step {step}: {source}")]
    Solver { step: u64, source: FemError },
    #[error("step {step}: {source}")]
    Wetting { step: u64, source: WettingError },
    #[error("network: {0}")]
    Network(String),
}

impl SessionError {
    /// Errors caused by the inputs rather than by running them.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SessionError::Io { .. }
                | SessionError::Parse { .. }
                | SessionError::Invalid { .. }
                | SessionError::Mesh { .. }
        )
    }
}

/// Per-step diagnostics; the stats CSV has one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub time_s: f64,
    pub mode: Option<ToolMode>,
    pub contact_count: usize,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub cg_iterations: usize,
    pub residual: f64,
    pub kinetic_energy: f64,
    pub elastic_energy: f64,
    pub water_mass: f64,
    pub mean_saturation: f64,
    pub max_saturation: f64,
    pub max_displacement: f64,
    pub refreshed_tets: usize,
}

#[derive(Debug, Clone)]
struct InitialState {
    state: SystemState,
    saturation: Vec<f64>,
    proxy: (Pose, Pose),
}

/// Everything a running scene owns.
#[derive(Debug, Clone)]
pub struct Session {
    pub scene: SceneConfig,
    pub body: FemBody,
    pub surface: SurfaceMesh,
    /// Surface vertices as loaded.
    pub surface_rest: Vec<Vec3>,
    pub embedding: CageEmbedding,
    pub embedding_report: EmbeddingReport,
    pub saturation: SaturationField,
    pub adjacency: TetAdjacency,
    pub cache: MaterialCache,
    pub proxy: ToolProxy,
    pub object_topology: SurfaceTopology,
    pub diffusion: DiffusionParams,
    pub collision: CollisionParams,
    pub plasticity: Option<PlasticityParams>,
    pub step_index: u64,
    pub last_force: ForceSample,
    pub last_contact_count: usize,
    /// Contacts of the last step, kept for diagnostics.
    pub last_events: Vec<ContactEvent>,
    initial: InitialState,
}

fn mesh_err(file: &str) -> impl FnOnce(MeshError) -> SessionError + '_ {
    move |source| SessionError::Mesh {
        file: file.to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, SessionError> {
    std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SessionError {
    SessionError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Loads, validates and initializes a scene file.
pub fn load_scene(path: &Path) -> Result<Session, SessionError> {
    let scene = SceneConfig::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Session::from_config(scene, base)
}

impl Session {
    /// Relative mesh paths resolve against `base`.
    pub fn from_config(scene: SceneConfig, base: &Path) -> Result<Self, SessionError> {
        scene.validate()?;
        let (positions, tets) = match &scene.tet_mesh {
            scene::TetMeshSource::TetGen(stem) => {
                let node = scene::resolve(base, &format!("{stem}.node"));
                let ele = scene::resolve(base, &format!("{stem}.ele"));
                read_tetgen(&read_text(&node)?, &read_text(&ele)?).map_err(mesh_err("tet_mesh"))?
            }
            scene::TetMeshSource::Box { spec } => box_tets(Vec3::from(spec.size), spec.cells),
        };
        let mesh = TetMesh::new(positions, tets).map_err(mesh_err("tet_mesh"))?;

        let surface = match &scene.surface_mesh {
            Some(file) => {
                let (v, t) = read_obj(&read_text(&scene::resolve(base, file))?).map_err(mesh_err("surface_mesh"))?;
                SurfaceMesh::new(v, t).map_err(mesh_err("surface_mesh"))?
            }
            None => boundary_surface(&mesh),
        };
        let (proxy_vertices, proxy_triangles) = match &scene.proxy {
            scene::ProxySource::Obj(file) => {
                read_obj(&read_text(&scene::resolve(base, file))?).map_err(mesh_err("proxy"))?
            }
            scene::ProxySource::Sphere { sphere } => icosphere(sphere.radius, sphere.subdivisions),
        };

        let m = &scene.material;
        let solid = IsotropicElasticParams::new(m.young_modulus, m.poisson_ratio)
            .map_err(|e| invalid("material", e.to_string()))?;
        let mixture = Mixture::new(
            solid,
            MixtureParams {
                water_bulk_modulus: m.water_bulk_modulus,
                water_shear_regularizer: m.water_shear_regularizer,
            },
        )
        .map_err(|e| invalid("material", e.to_string()))?;
        let limit = mixture.admissible_phi_limit();
        if scene.wetting.porosity >= limit {
            return Err(invalid(
                "wetting.porosity",
                format!(
                    "{} reaches the fluid fraction {limit:.4} where the effective tensor stops being positive definite",
                    scene.wetting.porosity
                ),
            ));
        }
        let mut cache = MaterialCache::new(mixture);
        let dry_stiffness = cache.stiffness(0.0).map_err(|e| invalid("material", e.to_string()))?;

        let sim = &scene.simulation;
        let mut fixed = Vec::new();
        for (i, &v) in sim.fixed.iter().enumerate() {
            if v >= mesh.vertex_count() {
                return Err(invalid(
                    format!("simulation.fixed[{i}]"),
                    format!("vertex {v} out of range ({} vertices)", mesh.vertex_count()),
                ));
            }
            fixed.push(v);
        }
        let bounds = Aabb::from_points(&mesh.rest_positions);
        let tol = 1e-9 * bounds.diagonal();
        for side in &sim.pin {
            let a = side.axis();
            let plane = if side.is_max() { bounds.max[a] } else { bounds.min[a] };
            fixed.extend((0..mesh.vertex_count()).filter(|&i| (mesh.rest_positions[i][a] - plane).abs() <= tol));
        }
        fixed.sort_unstable();
        fixed.dedup();
        let params = SimParams {
            dt: sim.dt,
            density: m.density,
            alpha: sim.alpha,
            beta: sim.beta,
            fixed,
            stiffness_warping: sim.stiffness_warping,
            cg_tolerance: sim.cg_tolerance,
            cg_max_iterations: sim.cg_max_iterations,
        };
        let object_topology = SurfaceTopology::new(mesh.boundary_faces.clone(), mesh.vertex_count());
        let adjacency = TetAdjacency::from_mesh(&mesh);
        let mut saturation = SaturationField::for_mesh(&mesh, scene.wetting.porosity)
            .map_err(|e| invalid("wetting.porosity", e.to_string()))?;
        saturation.saturation.fill(scene.wetting.initial_saturation);
        let diffusion = DiffusionParams {
            diffusivity: scene.wetting.diffusivity,
            dt: sim.dt,
            delta_s: scene.wetting.delta_s,
        };
        if let Some((tet, ratio)) = adjacency
            .stability_ratios(&saturation.volumes, &diffusion)
            .into_iter()
            .enumerate()
            .find(|(_, r)| *r >= 0.5)
        {
            return Err(invalid(
                "wetting.diffusivity",
                format!(
                    "explicit diffusion unstable at tet {tet}: k_d·Δt·ΣA/V = {ratio:.3} ≥ 0.5 (largest stable k_d {:.3e})",
                    adjacency.max_stable_dt(&saturation.volumes, 1.0) / sim.dt
                ),
            ));
        }

        let (embedding, embedding_report) = build_embedding(&mesh, &surface.vertices);
        let mut body = FemBody::new(mesh, params, dry_stiffness).map_err(|e| invalid("tet_mesh", e.to_string()))?;
        body.refresh_element_material(&saturation.phi_field(), &mut cache)
            .map_err(|e| invalid("wetting.initial_saturation", e.to_string()))?;

        let kernel = KernelShape {
            k1: scene.kernel.k1,
            k2: scene.kernel.k2,
            radius: scene.kernel.radius,
        };
        let mut proxy = ToolProxy::new(
            proxy_vertices,
            proxy_triangles,
            scene.contact.k_vf,
            scene.contact.k_ee,
            kernel,
        )
        .map_err(|e| invalid("contact", e.to_string()))?;
        let park = parking_pose(&bounds, &proxy);
        proxy.pose_start = park;
        proxy.pose_end = park;

        let surface_rest = surface.vertices.clone();
        let mut session = Self {
            collision: CollisionParams {
                depth_limit: scene.contact.depth_limit,
            },
            plasticity: scene.material.plasticity,
            initial: InitialState {
                state: body.state.clone(),
                saturation: saturation.saturation.clone(),
                proxy: (park, park),
            },
            scene,
            body,
            surface,
            surface_rest,
            embedding,
            embedding_report,
            saturation,
            adjacency,
            cache,
            proxy,
            object_topology,
            diffusion,
            step_index: 0,
            last_force: ForceSample::default(),
            last_contact_count: 0,
            last_events: Vec::new(),
        };
        session.refresh_surface();
        Ok(session)
    }

    pub fn dt(&self) -> f64 {
        self.body.params.dt
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt()
    }

    pub fn tool_mode(&self) -> ToolMode {
        self.proxy.mode
    }

    /// Puts the tool at `pose` without sweeping it there.
    pub fn place_tool(&mut self, pose: Pose, mode: ToolMode) {
        self.proxy.pose_start = pose;
        self.proxy.pose_end = pose;
        self.proxy.mode = mode;
    }

    /// Back to the loaded state.
    pub fn reset(&mut self) -> Result<(), SessionError> {
        let init = self.initial.clone();
        self.body
            .set_state(init.state)
            .map_err(|source| SessionError::Solver { step: 0, source })?;
        self.saturation.saturation = init.saturation;
        (self.proxy.pose_start, self.proxy.pose_end) = init.proxy;
        self.step_index = 0;
        self.last_force = ForceSample::default();
        self.last_contact_count = 0;
        self.last_events.clear();
        self.refresh_surface();
        Ok(())
    }

    /// Largest nodal displacement magnitude.
    pub fn max_displacement(&self) -> f64 {
        self.body
            .state
            .displacement
            .iter()
            .map(|u| u.norm())
            .fold(0.0, f64::max)
    }

    /// Advances one step with the tool moving to `tool`'s pose, or without a
    /// tool at all.
    pub fn step(&mut self, tool: Option<(Pose, ToolMode)>) -> Result<StepRecord, SessionError> {
        let step = self.step_index;
        let dt = self.dt();
        let n = self.body.vertex_count();
        let mut external = vec![Vec3::zeros(); n];
        let mut force = Vec3::zeros();
        let mut contact_count = 0;
        self.last_events.clear();
        if let Some((pose, mode)) = tool {
            self.proxy.mode = mode;
            self.proxy.move_to(pose);
            let proxy_start = self.proxy.vertices_at(&self.proxy.pose_start);
            let proxy_end = self.proxy.vertices_at(&self.proxy.pose_end);
            let object_start = self.body.positions();
            let object_end: Vec<Vec3> = object_start
                .iter()
                .zip(&self.body.state.velocity)
                .map(|(x, v)| x + v * dt)
                .collect();
            let detection = detect_contacts(
                &MovingSurface {
                    topology: &self.proxy.topology,
                    start: &proxy_start,
                    end: &proxy_end,
                },
                &MovingSurface {
                    topology: &self.object_topology,
                    start: &object_start,
                    end: &object_end,
                },
                &self.collision,
            );
            let result = apply_tool_step(&self.proxy, &detection.events, dt, n);
            force = result.force;
            contact_count = result.contact_count;
            let tets: Vec<usize> = result
                .touched_faces
                .iter()
                .map(|&f| self.body.mesh.boundary_face_tets[f])
                .collect();
            let wetting = match mode {
                ToolMode::Wet => absorb(&mut self.saturation, &tets, &self.diffusion),
                ToolMode::Dry => dry(&mut self.saturation, &tets, &self.diffusion),
                _ => Ok(()),
            };
            wetting.map_err(|source| SessionError::Wetting { step, source })?;
            for (e, i) in external.iter_mut().zip(&result.nodal_impulses) {
                *e = i / dt;
            }
            self.last_events = detection.events;
        }
        if self.diffusion.diffusivity > 0.0 {
            diffuse_step(&mut self.saturation, &self.adjacency, &self.diffusion)
                .map_err(|source| SessionError::Wetting { step, source })?;
        }
        let refreshed = self
            .body
            .refresh_element_material(&self.saturation.phi_field(), &mut self.cache)
            .map_err(|source| SessionError::Solver { step, source })?;
        let report: StepReport = self
            .body
            .step(&external)
            .map_err(|source| SessionError::Solver { step, source })?;
        if let Some(p) = &self.plasticity {
            self.body.apply_plastic_flow(p);
        }
        if tool.is_some_and(|(_, m)| m.deforms()) && contact_count > 0 {
            let k = &self.scene.kernel;
            self.body.apply_damping_kernel(&DampingKernelParams {
                k1: k.k1,
                k2: k.k2,
                radius: k.radius,
                center: self.proxy.center(),
            });
        }
        self.step_index += 1;
        self.last_force = ForceSample {
            timestamp: self.time(),
            force,
            torque: Vec3::zeros(),
        };
        self.last_contact_count = contact_count;
        self.refresh_surface();
        let stats = self.saturation.stats();
        Ok(StepRecord {
            step,
            time_s: self.time(),
            mode: tool.map(|(_, m)| m),
            contact_count,
            fx: force.x,
            fy: force.y,
            fz: force.z,
            cg_iterations: report.cg_iterations,
            residual: report.residual,
            kinetic_energy: report.kinetic_energy,
            elastic_energy: report.elastic_energy,
            water_mass: stats.total_mass,
            mean_saturation: stats.mean,
            max_saturation: stats.max,
            max_displacement: self.max_displacement(),
            refreshed_tets: refreshed,
        })
    }

    /// Moves the display surface with the cage and recolors it.
    pub fn refresh_surface(&mut self) {
        let u = &self.body.state.displacement;
        let tets = &self.body.mesh.tets;
        for (i, e) in self.embedding.vertices.iter().enumerate() {
            let tet = &tets[e.tet];
            let d = (0..4).fold(Vec3::zeros(), |acc, k| acc + u[tet[k]] * e.weights[k]);
            self.surface.vertices[i] = self.surface_rest[i] + d;
        }
        self.surface.wetness = transfer_wetness(&self.saturation, &self.embedding);
        self.surface.highlight = if self.last_contact_count > 0 {
            project_highlight(&self.surface.vertices, &self.proxy.center(), self.scene.kernel.radius)
        } else {
            vec![0.0; self.surface.vertices.len()]
        };
    }
}

/// Boundary of the tet mesh as a compact display surface.
fn boundary_surface(mesh: &TetMesh) -> SurfaceMesh {
    let used = mesh.boundary_vertices();
    let mut remap = vec![usize::MAX; mesh.vertex_count()];
    for (k, &v) in used.iter().enumerate() {
        remap[v] = k;
    }
    let vertices = used.iter().map(|&v| mesh.rest_positions[v]).collect();
    let triangles = mesh.boundary_faces.iter().map(|f| f.map(|v| remap[v])).collect();
    SurfaceMesh::new(vertices, triangles).expect("boundary indices are remapped in range")
}

/// Tool resting above the object, clear of it by its own height.
fn parking_pose(bounds: &Aabb, proxy: &ToolProxy) -> Pose {
    let extent = Aabb::from_points(&proxy.rest_vertices);
    let height = extent.max.z - extent.min.z;
    let c = (bounds.min + bounds.max) * 0.5;
    Pose::from_translation(Vec3::new(c.x, c.y, bounds.max.z - extent.min.z + height))
}
