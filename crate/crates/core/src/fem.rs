//! Linear tetrahedral finite elements with implicit Euler time stepping.
//!
//! Each tet is a constant-strain element. The strain-displacement matrix `B`
//! maps the 12 nodal displacements to the Voigt strain
//! `(ε_xx, ε_yy, ε_zz, γ_xy, γ_yz, γ_xz)`, and the element stiffness is
//! `K_e = V·Bᵀ·C·B`. Every step solves
//!
//! ```text
//! (M + Δt·D + Δt²·K) v' = M v + Δt (f_ext − f_int(u)),   D = αM + βK
//! ```
//!
//! with a matrix-free Jacobi-preconditioned conjugate gradient, then sets
//! `u += Δt·v'`. Pinned vertices have their rows and columns removed, so
//! their velocity is exactly zero.

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::{MaterialError, Mixture};
use crate::mesh::TetMesh;
use crate::Vec3;

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;
pub type BMatrix = SMatrix<f64, 6, 12>;

/// A tet's effective tensor is recomputed once its φ moves this far from the
/// value it was last assembled with.
pub const PHI_REFRESH_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("tet {tet} is degenerate (volume {volume:e})")]
    Degenerate { tet: usize, volume: f64 },
    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    Solver { iterations: usize, residual: f64 },
    #[error("{name} = {value} is outside its admissible range")]
    ParameterRange { name: &'static str, value: f64 },
    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),
    #[error("expected {expected} nodal values, got {found}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Material(#[from] MaterialError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub density: f64,
    /// Mass-proportional Rayleigh coefficient (1/s).
    pub alpha: f64,
    /// Stiffness-proportional Rayleigh coefficient (s).
    pub beta: f64,
    pub fixed: Vec<usize>,
    /// Corotational stiffness warping; off keeps the pure linear strain.
    pub stiffness_warping: bool,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            density: 1000.0,
            alpha: 0.1,
            beta: 0.01,
            fixed: Vec::new(),
            stiffness_warping: false,
            cg_tolerance: 1e-6,
            cg_max_iterations: 200,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), FemError> {
        let checks = [
            ("dt", self.dt, self.dt > 0.0),
            ("density", self.density, self.density > 0.0),
            ("alpha", self.alpha, self.alpha >= 0.0),
            ("beta", self.beta, self.beta >= 0.0),
            ("cg_tolerance", self.cg_tolerance, self.cg_tolerance > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(FemError::ParameterRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    #[serde(rename = "yield")]
    pub yield_strain: f64,
    /// Fraction of the excess moved into plastic strain per step.
    pub creep: f64,
    pub max: f64,
}

impl PlasticityParams {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.yield_strain >= 0.0) {
            return Err(FemError::ParameterRange {
                name: "yield",
                value: self.yield_strain,
            });
        }
        if !(0.0..=1.0).contains(&self.creep) {
            return Err(FemError::ParameterRange {
                name: "creep",
                value: self.creep,
            });
        }
        if !(self.max >= self.yield_strain) {
            return Err(FemError::ParameterRange {
                name: "max_plastic",
                value: self.max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingKernelParams {
    pub k1: f64,
    pub k2: f64,
    pub radius: f64,
    pub center: Vec3,
}

impl DampingKernelParams {
    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.k1 >= 0.0) {
            return Err(FemError::ParameterRange {
                name: "k1",
                value: self.k1,
            });
        }
        if !(self.k2 >= 0.0) {
            return Err(FemError::ParameterRange {
                name: "k2",
                value: self.k2,
            });
        }
        if !(self.radius > 0.0) {
            return Err(FemError::ParameterRange {
                name: "radius",
                value: self.radius,
            });
        }
        Ok(())
    }
}

/// Velocity weight at distance `r` from the tool. The outer branch adds
/// `exp(k2·r)` with the full distance, so the weight jumps down at `r = R_D`.
pub fn damping_weight(r: f64, k1: f64, k2: f64, radius: f64) -> f64 {
    if r < radius {
        1.0 / (1.0 + k1 * r)
    } else {
        1.0 / (1.0 + k1 * r + (k2 * r).exp())
    }
}

pub fn apply_damping_kernel(positions: &[Vec3], velocities: &mut [Vec3], kernel: &DampingKernelParams) {
    for (x, v) in positions.iter().zip(velocities.iter_mut()) {
        *v *= damping_weight((x - kernel.center).norm(), kernel.k1, kernel.k2, kernel.radius);
    }
}

/// Tensor (not engineering) Frobenius norm of a Voigt strain.
pub fn strain_norm(e: &Vector6<f64>) -> f64 {
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + 0.5 * (e[3] * e[3] + e[4] * e[4] + e[5] * e[5])).sqrt()
}

/// One plastic-flow update of a single element.
pub fn plastic_update(total: &Vector6<f64>, plastic: &Vector6<f64>, p: &PlasticityParams) -> Vector6<f64> {
    let elastic = total - plastic;
    let n = strain_norm(&elastic);
    let mut out = *plastic;
    if n > p.yield_strain {
        out += elastic * (p.creep * (1.0 - p.yield_strain / n));
    }
    let m = strain_norm(&out);
    if m > p.max {
        out *= p.max / m;
    }
    out
}

/// Shape-function gradients and signed volume of a tet.
pub fn shape_gradients(x: &[Vec3; 4]) -> Option<([Vec3; 4], f64)> {
    let dm = Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
    let volume = dm.determinant() / 6.0;
    let inv = dm.try_inverse()?;
    let g1 = inv.row(0).transpose();
    let g2 = inv.row(1).transpose();
    let g3 = inv.row(2).transpose();
    Some(([-(g1 + g2 + g3), g1, g2, g3], volume))
}

pub fn b_matrix(grads: &[Vec3; 4]) -> BMatrix {
    let mut b = BMatrix::zeros();
    for (i, g) in grads.iter().enumerate() {
        let c = 3 * i;
        b[(0, c)] = g.x;
        b[(1, c + 1)] = g.y;
        b[(2, c + 2)] = g.z;
        b[(3, c)] = g.y;
        b[(3, c + 1)] = g.x;
        b[(4, c + 1)] = g.z;
        b[(4, c + 2)] = g.y;
        b[(5, c)] = g.z;
        b[(5, c + 2)] = g.x;
    }
    b
}

fn degenerate_limit(x: &[Vec3; 4]) -> f64 {
    let mut l: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            l = l.max((x[i] - x[j]).norm());
        }
    }
    1e-12 * l * l * l
}

/// `V·Bᵀ·C·B` for a positively oriented rest tet.
pub fn element_stiffness(x: &[Vec3; 4], c: &Matrix6<f64>) -> Result<Matrix12, FemError> {
    let (grads, volume) = shape_gradients(x).ok_or(FemError::Degenerate { tet: 0, volume: 0.0 })?;
    if volume <= degenerate_limit(x) {
        return Err(FemError::Degenerate { tet: 0, volume });
    }
    let b = b_matrix(&grads);
    Ok(b.transpose() * c * b * volume)
}

fn gather(values: &[Vec3], tet: &[usize; 4]) -> Vector12 {
    let mut out = Vector12::zeros();
    for (k, &i) in tet.iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * k).copy_from(&values[i]);
    }
    out
}

fn scatter(out: &mut [Vec3], tet: &[usize; 4], values: &Vector12) {
    for (k, &i) in tet.iter().enumerate() {
        out[i] += values.fixed_rows::<3>(3 * k);
    }
}

fn rotate12(r: &Matrix3<f64>, v: &Vector12) -> Vector12 {
    let mut out = Vector12::zeros();
    for k in 0..4 {
        let block = r * v.fixed_rows::<3>(3 * k);
        out.fixed_rows_mut::<3>(3 * k).copy_from(&block);
    }
    out
}

/// Convergence record of one linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Diagnostics of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub cg_iterations: usize,
    pub residual: f64,
    pub kinetic_energy: f64,
    pub elastic_energy: f64,
}

/// Everything that evolves in time, plus the per-tet material it was
/// assembled with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub displacement: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    pub mass: Vec<f64>,
    pub plastic_strain: Vec<Vector6<f64>>,
    pub stiffness: Vec<Matrix6<f64>>,
    /// φ each tet's stiffness was computed for.
    pub assembled_phi: Vec<f64>,
}

/// Caches effective stiffness by exact φ.
#[derive(Debug, Clone)]
pub struct MaterialCache {
    pub mixture: Mixture,
    entries: HashMap<u64, Matrix6<f64>>,
    pub computations: usize,
}

impl MaterialCache {
    pub fn new(mixture: Mixture) -> Self {
        Self {
            mixture,
            entries: HashMap::new(),
            computations: 0,
        }
    }

    pub fn stiffness(&mut self, phi: f64) -> Result<Matrix6<f64>, MaterialError> {
        if let Some(c) = self.entries.get(&phi.to_bits()) {
            return Ok(*c);
        }
        let c = self.mixture.effective_stiffness(phi)?.matrix;
        self.computations += 1;
        self.entries.insert(phi.to_bits(), c);
        Ok(c)
    }
}

/// Deformable body: rest geometry, element data and the evolving state.
#[derive(Debug, Clone)]
pub struct FemBody {
    pub mesh: TetMesh,
    pub params: SimParams,
    pub state: SystemState,
    grads: Vec<[Vec3; 4]>,
    element_k: Vec<Matrix12>,
    pinned: Vec<bool>,
}

impl FemBody {
    /// All tets start with the same stiffness `c`.
    pub fn new(mesh: TetMesh, params: SimParams, c: Matrix6<f64>) -> Result<Self, FemError> {
        params.validate()?;
        let n = mesh.vertex_count();
        let mut pinned = vec![false; n];
        for &i in &params.fixed {
            *pinned.get_mut(i).ok_or(FemError::VertexOutOfRange(i))? = true;
        }
        let mut grads = Vec::with_capacity(mesh.tet_count());
        let mut mass = vec![0.0; n];
        for t in 0..mesh.tet_count() {
            let x = mesh.rest_tet(t);
            let (g, volume) = shape_gradients(&x).ok_or(FemError::Degenerate { tet: t, volume: 0.0 })?;
            if volume <= degenerate_limit(&x) {
                return Err(FemError::Degenerate { tet: t, volume });
            }
            grads.push(g);
            for &i in &mesh.tets[t] {
                mass[i] += params.density * volume / 4.0;
            }
        }
        let tets = mesh.tet_count();
        let mut body = Self {
            state: SystemState {
                displacement: mesh
                    .current_positions
                    .iter()
                    .zip(&mesh.rest_positions)
                    .map(|(x, r)| x - r)
                    .collect(),
                velocity: mesh.velocities.clone(),
                mass,
                plastic_strain: vec![Vector6::zeros(); tets],
                stiffness: vec![c; tets],
                assembled_phi: vec![0.0; tets],
            },
            mesh,
            params,
            grads,
            element_k: Vec::new(),
            pinned,
        };
        body.element_k = (0..tets).map(|t| body.assemble_element(t)).collect();
        for i in 0..n {
            if body.pinned[i] {
                body.state.velocity[i] = Vec3::zeros();
            }
        }
        Ok(body)
    }

    fn assemble_element(&self, t: usize) -> Matrix12 {
        let b = b_matrix(&self.grads[t]);
        b.transpose() * self.state.stiffness[t] * b * self.mesh.rest_volumes[t]
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned[i]
    }

    pub fn element_matrix(&self, t: usize) -> &Matrix12 {
        &self.element_k[t]
    }

    pub fn b_matrix(&self, t: usize) -> BMatrix {
        b_matrix(&self.grads[t])
    }

    pub fn total_mass(&self) -> f64 {
        self.state.mass.iter().sum()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.mesh
            .rest_positions
            .iter()
            .zip(&self.state.displacement)
            .map(|(r, u)| r + u)
            .collect()
    }

    /// Copies the state into the mesh's current positions and velocities.
    pub fn sync_mesh(&mut self) {
        for i in 0..self.mesh.vertex_count() {
            self.mesh.current_positions[i] = self.mesh.rest_positions[i] + self.state.displacement[i];
            self.mesh.velocities[i] = self.state.velocity[i];
        }
    }

    /// Replaces the whole state (used when resuming from an export).
    pub fn set_state(&mut self, state: SystemState) -> Result<(), FemError> {
        let (n, t) = (self.vertex_count(), self.mesh.tet_count());
        for (expected, found) in [
            (n, state.displacement.len()),
            (n, state.velocity.len()),
            (n, state.mass.len()),
            (t, state.plastic_strain.len()),
            (t, state.stiffness.len()),
            (t, state.assembled_phi.len()),
        ] {
            if expected != found {
                return Err(FemError::Length { expected, found });
            }
        }
        self.state = state;
        self.element_k = (0..t).map(|e| self.assemble_element(e)).collect();
        self.sync_mesh();
        Ok(())
    }

    /// Total Voigt strain of tet `t`.
    pub fn total_strain(&self, t: usize) -> Vector6<f64> {
        self.b_matrix(t) * gather(&self.state.displacement, &self.mesh.tets[t])
    }

    fn rotations(&self) -> Option<Vec<Matrix3<f64>>> {
        if !self.params.stiffness_warping {
            return None;
        }
        let pos = self.positions();
        Some(
            (0..self.mesh.tet_count())
                .map(|t| {
                    let tet = &self.mesh.tets[t];
                    let g = &self.grads[t];
                    let mut f = Matrix3::zeros();
                    for k in 0..4 {
                        f += pos[tet[k]] * g[k].transpose();
                    }
                    polar_rotation(&f)
                })
                .collect(),
        )
    }

    /// `f_int(u) = Σ Rₑ Kₑ (Rₑᵀ x − X) − Rₑ V Bᵀ C ε_p`.
    pub fn internal_forces(&self) -> Vec<Vec3> {
        self.internal_forces_with(&self.rotations())
    }

    fn internal_forces_with(&self, rotations: &Option<Vec<Matrix3<f64>>>) -> Vec<Vec3> {
        let mut f = vec![Vec3::zeros(); self.vertex_count()];
        let pos = rotations.as_ref().map(|_| self.positions());
        for (t, tet) in self.mesh.tets.iter().enumerate() {
            let local = match (rotations, &pos) {
                (Some(r), Some(x)) => {
                    let rt = r[t].transpose();
                    let xe = rotate12(&rt, &gather(x, tet));
                    xe - gather(&self.mesh.rest_positions, tet)
                }
                _ => gather(&self.state.displacement, tet),
            };
            let mut fe = self.element_k[t] * local;
            let ep = &self.state.plastic_strain[t];
            if ep.iter().any(|v| *v != 0.0) {
                fe -= self.b_matrix(t).transpose() * (self.state.stiffness[t] * ep) * self.mesh.rest_volumes[t];
            }
            if let Some(r) = rotations {
                fe = rotate12(&r[t], &fe);
            }
            scatter(&mut f, tet, &fe);
        }
        f
    }

    /// `½ Σ V (Bu − ε_p)ᵀ C (Bu − ε_p)`.
    pub fn elastic_energy(&self) -> f64 {
        (0..self.mesh.tet_count())
            .map(|t| {
                let e = self.total_strain(t) - self.state.plastic_strain[t];
                0.5 * self.mesh.rest_volumes[t] * e.dot(&(self.state.stiffness[t] * e))
            })
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.state
            .velocity
            .iter()
            .zip(&self.state.mass)
            .map(|(v, m)| 0.5 * m * v.norm_squared())
            .sum()
    }

    fn stiffness_apply(&self, p: &[Vec3], rotations: &Option<Vec<Matrix3<f64>>>, out: &mut [Vec3]) {
        out.iter_mut().for_each(|o| *o = Vec3::zeros());
        for (t, tet) in self.mesh.tets.iter().enumerate() {
            let mut local = gather(p, tet);
            if let Some(r) = rotations {
                local = rotate12(&r[t].transpose(), &local);
            }
            let mut y = self.element_k[t] * local;
            if let Some(r) = rotations {
                y = rotate12(&r[t], &y);
            }
            scatter(out, tet, &y);
        }
    }

    fn stiffness_diagonal(&self, rotations: &Option<Vec<Matrix3<f64>>>) -> Vec<Vec3> {
        let mut d = vec![Vec3::zeros(); self.vertex_count()];
        for (t, tet) in self.mesh.tets.iter().enumerate() {
            let k = &self.element_k[t];
            for (a, &i) in tet.iter().enumerate() {
                let block: Matrix3<f64> = k.fixed_view::<3, 3>(3 * a, 3 * a).into();
                let block = match rotations {
                    Some(r) => r[t] * block * r[t].transpose(),
                    None => block,
                };
                d[i] += Vec3::new(block[(0, 0)], block[(1, 1)], block[(2, 2)]);
            }
        }
        d
    }

    /// Solves `(a·M + b·K) x = rhs` on the free vertices, starting from `x`.
    fn pcg(
        &self,
        a: f64,
        b: f64,
        rhs: &[Vec3],
        x: &mut [Vec3],
        rotations: &Option<Vec<Matrix3<f64>>>,
        tol: f64,
        max_iterations: usize,
    ) -> Result<SolveStats, FemError> {
        let n = self.vertex_count();
        let free = |i: usize| !self.pinned[i];
        let kd = self.stiffness_diagonal(rotations);
        let inv_diag: Vec<Vec3> = (0..n)
            .map(|i| {
                let d = Vec3::repeat(a * self.state.mass[i]) + kd[i] * b;
                d.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 })
            })
            .collect();
        let dot = |u: &[Vec3], v: &[Vec3]| -> f64 { u.iter().zip(v).map(|(p, q)| p.dot(q)).sum() };
        let mut ap = vec![Vec3::zeros(); n];
        let apply = |p: &[Vec3], out: &mut [Vec3]| {
            self.stiffness_apply(p, rotations, out);
            for i in 0..n {
                out[i] = if free(i) {
                    out[i] * b + p[i] * (a * self.state.mass[i])
                } else {
                    Vec3::zeros()
                };
            }
        };
        for i in 0..n {
            if !free(i) {
                x[i] = Vec3::zeros();
            }
        }
        let masked_rhs: Vec<Vec3> = (0..n).map(|i| if free(i) { rhs[i] } else { Vec3::zeros() }).collect();
        let bnorm = dot(&masked_rhs, &masked_rhs).sqrt();
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = Vec3::zeros());
            return Ok(SolveStats::default());
        }
        apply(x, &mut ap);
        let mut r: Vec<Vec3> = (0..n).map(|i| masked_rhs[i] - ap[i]).collect();
        let mut z: Vec<Vec3> = (0..n).map(|i| r[i].component_mul(&inv_diag[i])).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut residual = dot(&r, &r).sqrt() / bnorm;
        let mut iterations = 0;
        while residual > tol {
            if iterations == max_iterations {
                return Err(FemError::Solver { iterations, residual });
            }
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(FemError::Solver { iterations, residual });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += p[i] * alpha;
                r[i] -= ap[i] * alpha;
                z[i] = r[i].component_mul(&inv_diag[i]);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + p[i] * beta;
            }
            residual = dot(&r, &r).sqrt() / bnorm;
            iterations += 1;
        }
        Ok(SolveStats { iterations, residual })
    }

    /// One implicit Euler step under nodal external forces.
    pub fn step(&mut self, external: &[Vec3]) -> Result<StepReport, FemError> {
        let n = self.vertex_count();
        if external.len() != n {
            return Err(FemError::Length {
                expected: n,
                found: external.len(),
            });
        }
        let (dt, alpha, beta) = (self.params.dt, self.params.alpha, self.params.beta);
        let rotations = self.rotations();
        let f_int = self.internal_forces_with(&rotations);
        let rhs: Vec<Vec3> = (0..n)
            .map(|i| self.state.velocity[i] * self.state.mass[i] + (external[i] - f_int[i]) * dt)
            .collect();
        let mut v = self.state.velocity.clone();
        let stats = self.pcg(
            1.0 + dt * alpha,
            dt * beta + dt * dt,
            &rhs,
            &mut v,
            &rotations,
            self.params.cg_tolerance,
            self.params.cg_max_iterations,
        )?;
        for i in 0..n {
            if self.pinned[i] {
                v[i] = Vec3::zeros();
            } else {
                self.state.displacement[i] += v[i] * dt;
            }
        }
        self.state.velocity = v;
        self.sync_mesh();
        Ok(StepReport {
            cg_iterations: stats.iterations,
            residual: stats.residual,
            kinetic_energy: self.kinetic_energy(),
            elastic_energy: self.elastic_energy(),
        })
    }

    /// Static equilibrium `K u = f` with pinned vertices held at zero.
    pub fn static_solve(
        &self,
        external: &[Vec3],
        tol: f64,
        max_iterations: usize,
    ) -> Result<(Vec<Vec3>, SolveStats), FemError> {
        let mut u = vec![Vec3::zeros(); self.vertex_count()];
        let stats = self.pcg(0.0, 1.0, external, &mut u, &None, tol, max_iterations)?;
        Ok((u, stats))
    }

    pub fn apply_plastic_flow(&mut self, plasticity: &PlasticityParams) {
        for t in 0..self.mesh.tet_count() {
            let total = self.total_strain(t);
            self.state.plastic_strain[t] = plastic_update(&total, &self.state.plastic_strain[t], plasticity);
        }
    }

    pub fn apply_damping_kernel(&mut self, kernel: &DampingKernelParams) {
        let pos = self.positions();
        apply_damping_kernel(&pos, &mut self.state.velocity, kernel);
        self.sync_mesh();
    }

    /// Recomputes the stiffness of every tet whose φ moved past
    /// [`PHI_REFRESH_THRESHOLD`]. Returns the number of refreshed tets.
    pub fn refresh_element_material(&mut self, phi: &[f64], cache: &mut MaterialCache) -> Result<usize, FemError> {
        if phi.len() != self.mesh.tet_count() {
            return Err(FemError::Length {
                expected: self.mesh.tet_count(),
                found: phi.len(),
            });
        }
        let mut refreshed = 0;
        for (t, &p) in phi.iter().enumerate() {
            if (p - self.state.assembled_phi[t]).abs() > PHI_REFRESH_THRESHOLD {
                self.state.stiffness[t] = cache.stiffness(p)?;
                self.state.assembled_phi[t] = p;
                self.element_k[t] = self.assemble_element(t);
                refreshed += 1;
            }
        }
        Ok(refreshed)
    }
}

/// Rotation factor of the polar decomposition `F = R S`.
pub fn polar_rotation(f: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = f.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Matrix3::identity();
    };
    if (u * v_t).determinant() < 0.0 {
        let mut col = u.column_mut(2);
        col *= -1.0;
    }
    u * v_t
}
