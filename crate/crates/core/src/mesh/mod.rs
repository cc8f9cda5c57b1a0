//! Tetrahedral simulation meshes, triangle surface meshes and the barycentric
//! cage that carries deformation and wetness from one to the other.

mod embedding;
pub mod generate;
pub mod io;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::signed_tet_volume;
use crate::Vec3;

pub use embedding::{
    apply_embedding, build_embedding, project_highlight, CageEmbedding, EmbeddedVertex, EmbeddingReport,
    INSIDE_TOLERANCE,
};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("tet {tet} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { tet: usize, index: usize, count: usize },
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    TriangleIndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("tet {tet} is degenerate (volume {volume:e})")]
    Degenerate { tet: usize, volume: f64 },
    #[error("tet {tet} is inverted (signed volume {volume:e}); reorient before extracting the boundary")]
    Orientation { tet: usize, volume: f64 },
    #[error("face {face:?} is shared by more than two tets")]
    NonManifoldFace { face: [usize; 3] },
    #[error("{field} value {value} outside [0, 1] at vertex {vertex}")]
    AttributeRange {
        field: &'static str,
        vertex: usize,
        value: f64,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.iter().zip(max.iter()).all(|(a, b)| a <= b));
        Self { min, max }
    }

    /// An inverted box that acts as the identity for [`Aabb::include`].
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.include(p);
        }
        b
    }

    pub fn include(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn inflated(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// Volumetric simulation mesh of linear tetrahedra.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TetMesh {
    pub rest_positions: Vec<Vec3>,
    pub current_positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    /// Outward-oriented boundary triangles.
    pub boundary_faces: Vec<[usize; 3]>,
    /// Tet that owns each boundary face.
    pub boundary_face_tets: Vec<usize>,
    pub rest_volumes: Vec<f64>,
}

impl TetMesh {
    /// Builds a mesh from rest positions and connectivity. Tets with negative
    /// signed volume are reordered (swap of the last two indices), so the
    /// result is independent of input orientation.
    pub fn new(rest_positions: Vec<Vec3>, mut tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let n = rest_positions.len();
        for (t, tet) in tets.iter().enumerate() {
            if let Some(&index) = tet.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange {
                    tet: t,
                    index,
                    count: n,
                });
            }
        }
        let scale = Aabb::from_points(&rest_positions).diagonal();
        let min_volume = 1e-12 * scale.powi(3);
        let mut rest_volumes = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter_mut().enumerate() {
            let [a, b, c, d] = tet.map(|i| rest_positions[i]);
            let mut v = signed_tet_volume(&a, &b, &c, &d);
            if v.abs() <= min_volume {
                return Err(MeshError::Degenerate { tet: t, volume: v });
            }
            if v < 0.0 {
                tet.swap(2, 3);
                v = -v;
            }
            rest_volumes.push(v);
        }
        let faces = extract_boundary_with_owners(&rest_positions, &tets)?;
        let (boundary_faces, boundary_face_tets) = faces.into_iter().unzip();
        Ok(Self {
            current_positions: rest_positions.clone(),
            velocities: vec![Vec3::zeros(); n],
            rest_positions,
            tets,
            boundary_faces,
            boundary_face_tets,
            rest_volumes,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub fn total_rest_volume(&self) -> f64 {
        self.rest_volumes.iter().sum()
    }

    pub fn rest_tet(&self, t: usize) -> [Vec3; 4] {
        self.tets[t].map(|i| self.rest_positions[i])
    }

    pub fn current_tet(&self, t: usize) -> [Vec3; 4] {
        self.tets[t].map(|i| self.current_positions[i])
    }

    /// Diagonal of the rest-state bounding box.
    pub fn scale(&self) -> f64 {
        Aabb::from_points(&self.rest_positions).diagonal()
    }

    /// Sorted, de-duplicated vertices lying on the boundary.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.boundary_faces.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Unique boundary edges `(i, j)` with `i < j`, in first-seen order.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashMap::new();
        let mut edges = Vec::new();
        for f in &self.boundary_faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = [a.min(b), a.max(b)];
                if seen.insert(e, ()).is_none() {
                    edges.push(e);
                }
            }
        }
        edges
    }
}

/// The four faces of a positively oriented tet `(a, b, c, d)`, each wound so
/// its normal points away from the opposite vertex.
pub(crate) fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    let [a, b, c, d] = *t;
    [[b, c, d], [a, d, c], [a, b, d], [a, c, b]]
}

fn face_key(f: &[usize; 3]) -> [usize; 3] {
    let mut k = *f;
    k.sort_unstable();
    k
}

/// Faces incident to exactly one tet, outward oriented.
///
/// Fails with [`MeshError::Orientation`] when any tet has non-positive
/// signed volume, because outward winding is derived from orientation.
pub fn extract_boundary(positions: &[Vec3], tets: &[[usize; 4]]) -> Result<Vec<[usize; 3]>, MeshError> {
    Ok(extract_boundary_with_owners(positions, tets)?
        .into_iter()
        .map(|(f, _)| f)
        .collect())
}

pub(crate) fn extract_boundary_with_owners(
    positions: &[Vec3],
    tets: &[[usize; 4]],
) -> Result<Vec<([usize; 3], usize)>, MeshError> {
    let mut counts: HashMap<[usize; 3], u32> = HashMap::with_capacity(tets.len() * 4);
    for (t, tet) in tets.iter().enumerate() {
        let [a, b, c, d] = tet.map(|i| positions[i]);
        let v = signed_tet_volume(&a, &b, &c, &d);
        if v <= 0.0 {
            return Err(MeshError::Orientation { tet: t, volume: v });
        }
        for f in tet_faces(tet) {
            let n = counts.entry(face_key(&f)).or_insert(0);
            *n += 1;
            if *n > 2 {
                return Err(MeshError::NonManifoldFace { face: face_key(&f) });
            }
        }
    }
    let mut out = Vec::new();
    for (t, tet) in tets.iter().enumerate() {
        for f in tet_faces(tet) {
            if counts[&face_key(&f)] == 1 {
                out.push((f, t));
            }
        }
    }
    Ok(out)
}

/// High-resolution triangle mesh used for display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub wetness: Vec<f64>,
    pub highlight: Vec<f64>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= n) {
                return Err(MeshError::TriangleIndexOutOfRange {
                    triangle: t,
                    index,
                    count: n,
                });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            wetness: vec![0.0; n],
            highlight: vec![0.0; n],
        })
    }

    pub fn set_wetness(&mut self, wetness: Vec<f64>) -> Result<(), MeshError> {
        check_unit_range("wetness", &wetness)?;
        self.wetness = wetness;
        Ok(())
    }

    pub fn set_highlight(&mut self, highlight: Vec<f64>) -> Result<(), MeshError> {
        check_unit_range("highlight", &highlight)?;
        self.highlight = highlight;
        Ok(())
    }
}

fn check_unit_range(field: &'static str, values: &[f64]) -> Result<(), MeshError> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(vertex) => Err(MeshError::AttributeRange {
            field,
            vertex,
            value: values[vertex],
        }),
        None => Ok(()),
    }
}
