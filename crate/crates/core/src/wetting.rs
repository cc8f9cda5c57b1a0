//! Per-tet water content: absorption, drying, neighbor diffusion and the
//! transfer of wetness onto the rendered surface.
//!
//! Saturation is `S = m / (ρ_w · porosity · V)`, so a tet whose pore volume is
//! full of water has `S = 1` and fluid volume fraction `φ = porosity`.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::CageEmbedding;
use crate::mesh::{tet_faces, TetMesh};

pub const WATER_DENSITY: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WettingError {
    #[error("{name} = {value} is outside its admissible range")]
    ParameterRange { name: &'static str, value: f64 },
    #[error("diffusion step unstable at tet {tet}: k_d·Δt·ΣA/V = {ratio} ≥ 0.5")]
    Stability { tet: usize, ratio: f64 },
    #[error("tet index {0} out of range")]
    TetOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// `k_d`, in m/s: flux per unit shared area and unit saturation difference.
    pub diffusivity: f64,
    pub dt: f64,
    /// Saturation change per contact step of the wet or dry tool.
    pub delta_s: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            diffusivity: 1e-4,
            dt: 1e-3,
            delta_s: 0.05,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<(), WettingError> {
        if !(self.diffusivity >= 0.0) || !self.diffusivity.is_finite() {
            return Err(WettingError::ParameterRange {
                name: "diffusivity",
                value: self.diffusivity,
            });
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(WettingError::ParameterRange {
                name: "dt_diffusion",
                value: self.dt,
            });
        }
        if !(self.delta_s > 0.0 && self.delta_s <= 1.0) {
            return Err(WettingError::ParameterRange {
                name: "delta_s",
                value: self.delta_s,
            });
        }
        Ok(())
    }
}

pub fn validate_porosity(porosity: f64) -> Result<(), WettingError> {
    if porosity > 0.0 && porosity <= 1.0 {
        Ok(())
    } else {
        Err(WettingError::ParameterRange {
            name: "porosity",
            value: porosity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationField {
    pub saturation: Vec<f64>,
    pub volumes: Vec<f64>,
    pub porosity: f64,
}

impl SaturationField {
    /// Dry field over the given tet volumes.
    pub fn new(volumes: Vec<f64>, porosity: f64) -> Result<Self, WettingError> {
        validate_porosity(porosity)?;
        Ok(Self {
            saturation: vec![0.0; volumes.len()],
            volumes,
            porosity,
        })
    }

    pub fn for_mesh(mesh: &TetMesh, porosity: f64) -> Result<Self, WettingError> {
        Self::new(mesh.rest_volumes.clone(), porosity)
    }

    pub fn len(&self) -> usize {
        self.saturation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saturation.is_empty()
    }

    /// Mass of water a tet holds when saturated (kg).
    pub fn capacity(&self, tet: usize) -> f64 {
        WATER_DENSITY * self.porosity * self.volumes[tet]
    }

    pub fn water_mass(&self, tet: usize) -> f64 {
        self.saturation[tet] * self.capacity(tet)
    }

    pub fn total_water_mass(&self) -> f64 {
        (0..self.len()).map(|t| self.water_mass(t)).sum()
    }

    pub fn set_water_mass(&mut self, tet: usize, mass: f64) {
        self.saturation[tet] = (mass / self.capacity(tet)).clamp(0.0, 1.0);
    }

    pub fn phi(&self, tet: usize) -> f64 {
        saturation_to_phi(self.saturation[tet], self.porosity)
    }

    pub fn phi_field(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.phi(t)).collect()
    }

    pub fn stats(&self) -> SaturationStats {
        let n = self.len().max(1) as f64;
        SaturationStats {
            min: self.saturation.iter().copied().fold(f64::INFINITY, f64::min),
            mean: self.saturation.iter().sum::<f64>() / n,
            max: self.saturation.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            total_mass: self.total_water_mass(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub total_mass: f64,
}

/// Face-neighbor graph weighted by shared rest-face area.
#[derive(Debug, Clone, PartialEq)]
pub struct TetAdjacency {
    pub neighbors: Vec<Vec<(usize, f64)>>,
    /// Each shared face once, `(i, j, area)` with `i < j`, in ascending order.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl TetAdjacency {
    pub fn from_mesh(mesh: &TetMesh) -> Self {
        let mut first: HashMap<[usize; 3], usize> = HashMap::new();
        let mut pairs = Vec::new();
        for (t, tet) in mesh.tets.iter().enumerate() {
            for face in tet_faces(tet) {
                let mut key = face;
                key.sort_unstable();
                if let Some(other) = first.remove(&key) {
                    let [a, b, c] = key.map(|i| mesh.rest_positions[i]);
                    let area = 0.5 * (b - a).cross(&(c - a)).norm();
                    pairs.push((other.min(t), other.max(t), area));
                } else {
                    first.insert(key, t);
                }
            }
        }
        pairs.sort_by_key(|p| (p.0, p.1));
        let mut neighbors = vec![Vec::new(); mesh.tet_count()];
        for &(i, j, a) in &pairs {
            neighbors[i].push((j, a));
            neighbors[j].push((i, a));
        }
        Self { neighbors, pairs }
    }

    /// `k_d·Δt·ΣA/V` per tet; must stay below 0.5.
    pub fn stability_ratios(&self, volumes: &[f64], params: &DiffusionParams) -> Vec<f64> {
        self.neighbors
            .iter()
            .zip(volumes)
            .map(|(n, v)| params.diffusivity * params.dt * n.iter().map(|x| x.1).sum::<f64>() / v)
            .collect()
    }

    /// Largest stable `Δt` for the given diffusivity.
    pub fn max_stable_dt(&self, volumes: &[f64], diffusivity: f64) -> f64 {
        self.neighbors
            .iter()
            .zip(volumes)
            .map(|(n, v)| 0.5 * v / (diffusivity * n.iter().map(|x| x.1).sum::<f64>()))
            .fold(f64::INFINITY, f64::min)
    }
}

fn unique_tets(field: &SaturationField, contact_tets: &[usize]) -> Result<BTreeSet<usize>, WettingError> {
    let set: BTreeSet<usize> = contact_tets.iter().copied().collect();
    if let Some(&t) = set.iter().find(|&&t| t >= field.len()) {
        return Err(WettingError::TetOutOfRange(t));
    }
    Ok(set)
}

/// Raises each contacted tet's saturation by `ΔS`, clamped at 1. Repeated
/// indices count once.
pub fn absorb(
    field: &mut SaturationField,
    contact_tets: &[usize],
    params: &DiffusionParams,
) -> Result<(), WettingError> {
    for t in unique_tets(field, contact_tets)? {
        field.saturation[t] = (field.saturation[t] + params.delta_s).min(1.0);
    }
    Ok(())
}

/// Lowers each contacted tet's saturation by `ΔS`, clamped at 0.
pub fn dry(field: &mut SaturationField, contact_tets: &[usize], params: &DiffusionParams) -> Result<(), WettingError> {
    for t in unique_tets(field, contact_tets)? {
        field.saturation[t] = (field.saturation[t] - params.delta_s).max(0.0);
    }
    Ok(())
}

/// One explicit step of `V_i dS_i/dt = −Σ_j k_d A_ij (S_i − S_j)`.
pub fn diffuse_step(
    field: &mut SaturationField,
    adjacency: &TetAdjacency,
    params: &DiffusionParams,
) -> Result<(), WettingError> {
    params.validate()?;
    for (tet, ratio) in adjacency
        .stability_ratios(&field.volumes, params)
        .into_iter()
        .enumerate()
    {
        if ratio >= 0.5 {
            return Err(WettingError::Stability { tet, ratio });
        }
    }
    let old = field.saturation.clone();
    for &(i, j, area) in &adjacency.pairs {
        let flux = params.diffusivity * area * (old[i] - old[j]) * params.dt;
        field.saturation[i] -= flux / field.volumes[i];
        field.saturation[j] += flux / field.volumes[j];
    }
    for s in &mut field.saturation {
        *s = s.clamp(0.0, 1.0);
    }
    Ok(())
}

pub fn saturation_to_phi(saturation: f64, porosity: f64) -> f64 {
    porosity * saturation
}

/// Per surface vertex, the saturation of the tet that embeds it.
pub fn transfer_wetness(field: &SaturationField, embedding: &CageEmbedding) -> Vec<f64> {
    embedding.vertices.iter().map(|v| field.saturation[v.tet]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_embedding;
    use crate::mesh::generate::box_tet_mesh;
    use crate::Vec3;
    use proptest::prelude::*;

    fn params(delta_s: f64) -> DiffusionParams {
        DiffusionParams {
            diffusivity: 1.0,
            dt: 1e-3,
            delta_s,
        }
    }

    /// Four tets glued face to face along a helix.
    fn chain() -> TetMesh {
        let p: Vec<Vec3> = (0..7)
            .map(|k| {
                let a = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
                Vec3::new(0.4 * k as f64, a.cos(), a.sin())
            })
            .collect();
        TetMesh::new(p, vec![[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5], [3, 4, 5, 6]]).unwrap()
    }

    #[test]
    fn absorb_increments_and_clamps() {
        let mut f = SaturationField::new(vec![1.0, 2.0], 0.3).unwrap();
        absorb(&mut f, &[0], &params(0.1)).unwrap();
        assert_eq!(f.saturation, vec![0.1, 0.0]);
        f.saturation[1] = 0.95;
        absorb(&mut f, &[1, 1], &params(0.1)).unwrap();
        assert_eq!(f.saturation[1], 1.0);
        let mut g = SaturationField::new(vec![1.0], 0.3).unwrap();
        for _ in 0..15 {
            absorb(&mut g, &[0], &params(0.1)).unwrap();
        }
        assert_eq!(g.saturation[0], 1.0);
        assert!(absorb(&mut g, &[4], &params(0.1)).is_err());
    }

    #[test]
    fn dry_decrements_and_clamps() {
        let mut f = SaturationField::new(vec![1.0, 1.0], 0.3).unwrap();
        f.saturation = vec![0.1, 0.0];
        dry(&mut f, &[0, 1], &params(0.1)).unwrap();
        assert_eq!(f.saturation, vec![0.0, 0.0]);
    }

    #[test]
    fn dry_inverts_absorb_away_from_clamps() {
        let mut f = SaturationField::new(vec![1.0, 1.0, 1.0], 0.5).unwrap();
        f.saturation = vec![0.25, 0.5, 0.75];
        let before = f.clone();
        absorb(&mut f, &[0, 2], &params(0.125)).unwrap();
        dry(&mut f, &[0, 2], &params(0.125)).unwrap();
        assert_eq!(f, before);
    }

    #[test]
    fn phi_mapping() {
        assert_eq!(saturation_to_phi(0.0, 0.3), 0.0);
        assert_eq!(saturation_to_phi(1.0, 0.3), 0.3);
        assert_eq!(saturation_to_phi(0.5, 0.4), 0.2);
        assert!(SaturationField::new(vec![1.0], 1.5).is_err());
        assert!(SaturationField::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn mass_and_saturation_agree() {
        let mut f = SaturationField::new(vec![2e-6], 0.5).unwrap();
        f.set_water_mass(0, 5e-4);
        assert!((f.saturation[0] - 0.5).abs() < 1e-12);
        assert!((f.water_mass(0) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn adjacency_is_symmetric_with_at_most_four_neighbors() {
        let m = box_tet_mesh(Vec3::new(1.0, 1.0, 1.0), [2, 2, 2]).unwrap();
        let adj = TetAdjacency::from_mesh(&m);
        for (i, n) in adj.neighbors.iter().enumerate() {
            assert!(n.len() <= 4);
            for &(j, a) in n {
                assert!(adj.neighbors[j].iter().any(|&(k, b)| k == i && b == a));
            }
        }
        // interior faces = (4·tets − boundary faces) / 2
        assert_eq!(adj.pairs.len(), (4 * m.tet_count() - m.boundary_faces.len()) / 2);
    }

    #[test]
    fn uniform_field_is_steady() {
        let m = chain();
        let adj = TetAdjacency::from_mesh(&m);
        let mut f = SaturationField::for_mesh(&m, 0.4).unwrap();
        f.saturation = vec![0.3; 4];
        let p = DiffusionParams {
            diffusivity: 1e-3,
            dt: 1e-3,
            delta_s: 0.1,
        };
        diffuse_step(&mut f, &adj, &p).unwrap();
        assert_eq!(f.saturation, vec![0.3; 4]);
    }

    #[test]
    fn two_tets_equalize() {
        let m = TetMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(0.0, 0.0, -1.0),
            ],
            vec![[0, 1, 2, 3], [0, 1, 2, 4]],
        )
        .unwrap();
        let adj = TetAdjacency::from_mesh(&m);
        let mut f = SaturationField::for_mesh(&m, 0.5).unwrap();
        f.saturation = vec![1.0, 0.0];
        let p = DiffusionParams {
            diffusivity: 0.1,
            dt: 0.1,
            delta_s: 0.1,
        };
        for _ in 0..2000 {
            diffuse_step(&mut f, &adj, &p).unwrap();
        }
        assert!((f.saturation[0] - 0.5).abs() < 1e-9);
        assert!((f.saturation[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn chain_matches_scalar_recurrence() {
        let m = chain();
        let adj = TetAdjacency::from_mesh(&m);
        assert_eq!(adj.pairs.len(), 3);
        // Independent geometry: shared faces of consecutive tets are
        // vertex triples (k+1, k+2, k+3), volumes from the determinant.
        let p = &m.rest_positions;
        let area = |a: usize, b: usize, c: usize| 0.5 * (p[b] - p[a]).cross(&(p[c] - p[a])).norm();
        let vol = |a: usize| {
            let m3 = nalgebra::Matrix3::from_columns(&[p[a + 1] - p[a], p[a + 2] - p[a], p[a + 3] - p[a]]);
            m3.determinant().abs() / 6.0
        };
        let areas: Vec<f64> = (0..3).map(|k| area(k + 1, k + 2, k + 3)).collect();
        let vols: Vec<f64> = (0..4).map(vol).collect();
        let kdt = 0.01;
        let prm = DiffusionParams {
            diffusivity: kdt,
            dt: 1.0,
            delta_s: 0.1,
        };
        let mut s = [1.0, 0.0, 0.0, 0.0];
        let mut f = SaturationField::for_mesh(&m, 0.3).unwrap();
        f.saturation = s.to_vec();
        for _ in 0..100 {
            let mut next = s;
            for k in 0..3 {
                let flow = kdt * areas[k] * (s[k] - s[k + 1]);
                next[k] -= flow / vols[k];
                next[k + 1] += flow / vols[k + 1];
            }
            s = next;
            diffuse_step(&mut f, &adj, &prm).unwrap();
        }
        for k in 0..4 {
            assert!(
                (f.saturation[k] - s[k]).abs() < 1e-10,
                "{k}: {} vs {}",
                f.saturation[k],
                s[k]
            );
        }
    }

    #[test]
    fn unstable_step_rejected() {
        let m = chain();
        let adj = TetAdjacency::from_mesh(&m);
        let mut f = SaturationField::for_mesh(&m, 0.3).unwrap();
        let dt = adj.max_stable_dt(&f.volumes, 1.0);
        let p = DiffusionParams {
            diffusivity: 1.0,
            dt: dt * 1.01,
            delta_s: 0.1,
        };
        assert!(matches!(
            diffuse_step(&mut f, &adj, &p),
            Err(WettingError::Stability { .. })
        ));
        let p = DiffusionParams { dt: dt * 0.99, ..p };
        assert!(diffuse_step(&mut f, &adj, &p).is_ok());
    }

    #[test]
    fn connected_mesh_reaches_uniform_saturation() {
        let m = box_tet_mesh(Vec3::new(1.0, 0.5, 0.5), [4, 2, 2]).unwrap();
        let adj = TetAdjacency::from_mesh(&m);
        let mut f = SaturationField::for_mesh(&m, 0.3).unwrap();
        f.saturation[0] = 1.0;
        f.saturation[7] = 0.6;
        let mass = f.total_water_mass();
        let dt = 0.9 * adj.max_stable_dt(&f.volumes, 1.0);
        let p = DiffusionParams {
            diffusivity: 1.0,
            dt,
            delta_s: 0.1,
        };
        for _ in 0..20000 {
            diffuse_step(&mut f, &adj, &p).unwrap();
        }
        let mean = mass / (WATER_DENSITY * 0.3 * m.total_rest_volume());
        for s in &f.saturation {
            assert!((s - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn wetness_lookup_follows_containing_tet() {
        let m = box_tet_mesh(Vec3::new(1.0, 1.0, 1.0), [2, 2, 2]).unwrap();
        let pts: Vec<Vec3> = (0..30)
            .map(|k| Vec3::new(0.03 * k as f64 + 0.05, 0.5 + 0.01 * k as f64, 0.9 - 0.02 * k as f64))
            .collect();
        let (emb, _) = build_embedding(&m, &pts);
        let mut f = SaturationField::for_mesh(&m, 0.3).unwrap();
        assert!(transfer_wetness(&f, &emb).iter().all(|&w| w == 0.0));
        f.saturation = vec![1.0; m.tet_count()];
        assert!(transfer_wetness(&f, &emb).iter().all(|&w| w == 1.0));
        f.saturation = (0..m.tet_count()).map(|t| (t % 7) as f64 / 6.0).collect();
        let w = transfer_wetness(&f, &emb);
        for (v, e) in w.iter().zip(&emb.vertices) {
            assert_eq!(*v, f.saturation[e.tet]);
        }
    }

    proptest! {
        #[test]
        fn diffusion_conserves_mass_and_contracts(seed in proptest::collection::vec(0.0f64..=1.0, 48), frac in 0.05f64..0.99) {
            let m = box_tet_mesh(Vec3::new(1.0, 1.0, 1.0), [2, 2, 2]).unwrap();
            let adj = TetAdjacency::from_mesh(&m);
            let mut f = SaturationField::for_mesh(&m, 0.35).unwrap();
            f.saturation = seed;
            let p = DiffusionParams { diffusivity: 1.0, dt: frac * adj.max_stable_dt(&f.volumes, 1.0), delta_s: 0.1 };
            for _ in 0..5 {
                let before = f.stats();
                diffuse_step(&mut f, &adj, &p).unwrap();
                let after = f.stats();
                prop_assert!((after.total_mass - before.total_mass).abs() <= 1e-10 * before.total_mass.max(1e-300));
                prop_assert!(after.max <= before.max + 1e-15);
                prop_assert!(after.min >= before.min - 1e-15);
                prop_assert!(f.saturation.iter().all(|s| (0.0..=1.0).contains(s)));
            }
        }

        #[test]
        fn tool_steps_keep_saturation_in_unit_interval(ops in proptest::collection::vec((any::<bool>(), 0usize..6, 0.01f64..=1.0), 1..40)) {
            let mut f = SaturationField::new(vec![1.0; 6], 0.4).unwrap();
            for (wet, t, ds) in ops {
                let p = DiffusionParams { diffusivity: 0.0, dt: 1.0, delta_s: ds };
                if wet { absorb(&mut f, &[t], &p).unwrap() } else { dry(&mut f, &[t], &p).unwrap() }
                prop_assert!(f.saturation.iter().all(|s| (0.0..=1.0).contains(s)));
            }
        }
    }
}
