use serde::{Deserialize, Serialize};

use super::{Aabb, TetMesh};
use crate::geometry::{point_tet_distance, tet_barycentric};
use crate::Vec3;

/// Barycentric weights at or above this value count as inside a tet.
pub const INSIDE_TOLERANCE: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedVertex {
    pub tet: usize,
    pub weights: [f64; 4],
}

/// Per surface vertex: the tet it lives in and its barycentric weights there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CageEmbedding {
    pub vertices: Vec<EmbeddedVertex>,
}

/// Load summary for vertices that were not enclosed by any tet.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub outside_count: usize,
    /// Most negative extrapolated weight among outside vertices (0 when none).
    pub max_negative_weight: f64,
}

/// Uniform bucket grid over tet bounding boxes.
struct TetGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl TetGrid {
    fn new(mesh: &TetMesh) -> Self {
        let bounds = Aabb::from_points(&mesh.rest_positions);
        let extent = bounds.max - bounds.min;
        let n = mesh.tet_count().max(1) as f64;
        let cell = (extent.x.max(1e-300) * extent.y.max(1e-300) * extent.z.max(1e-300) / n)
            .cbrt()
            .max(extent.max() / 256.0)
            .max(1e-300);
        let dims = [0, 1, 2].map(|k| ((extent[k] / cell).floor() as usize + 1).min(512));
        let mut grid = Self {
            origin: bounds.min,
            cell,
            dims,
            buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for t in 0..mesh.tet_count() {
            let b = Aabb::from_points(&mesh.rest_tet(t)).inflated(1e-9 * cell);
            let lo = grid.coords(&b.min);
            let hi = grid.coords(&b.max);
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    for k in lo[2]..=hi[2] {
                        let idx = grid.index([i, j, k]);
                        grid.buckets[idx].push(t);
                    }
                }
            }
        }
        grid
    }

    fn coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - self.origin[k]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[k] - 1)
        })
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn candidates(&self, p: &Vec3) -> &[usize] {
        &self.buckets[self.index(self.coords(p))]
    }
}

/// Expresses every surface vertex in barycentric coordinates of the rest-state
/// tet that contains it.
///
/// A vertex on a face shared by several tets goes to the lowest tet index.
/// Vertices outside every tet are attached to the nearest tet with
/// extrapolated weights and counted in the report.
pub fn build_embedding(sim: &TetMesh, surface_vertices: &[Vec3]) -> (CageEmbedding, EmbeddingReport) {
    let grid = TetGrid::new(sim);
    let mut report = EmbeddingReport::default();
    let mut out = Vec::with_capacity(surface_vertices.len());
    for p in surface_vertices {
        let mut inside = None;
        // Bucket lists are in ascending tet order, so the first hit is the lowest index.
        for &t in grid.candidates(p) {
            if let Some(w) = tet_barycentric(&sim.rest_tet(t), p) {
                if w.iter().all(|&x| x >= INSIDE_TOLERANCE) {
                    inside = Some(EmbeddedVertex { tet: t, weights: w });
                    break;
                }
            }
        }
        let v = match inside {
            Some(v) => v,
            None => {
                let (tet, _) = (0..sim.tet_count())
                    .map(|t| (t, point_tet_distance(&sim.rest_tet(t), p)))
                    .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
                let weights = tet_barycentric(&sim.rest_tet(tet), p).unwrap_or([0.25; 4]);
                report.outside_count += 1;
                let most_negative = weights.iter().copied().fold(0.0, f64::min);
                report.max_negative_weight = report.max_negative_weight.min(most_negative);
                EmbeddedVertex { tet, weights }
            }
        };
        out.push(v);
    }
    (CageEmbedding { vertices: out }, report)
}

/// Surface positions as barycentric combinations of the current tet nodes.
pub fn apply_embedding(embedding: &CageEmbedding, sim: &TetMesh) -> Vec<Vec3> {
    embedding
        .vertices
        .iter()
        .map(|v| {
            let tet = &sim.tets[v.tet];
            (0..4).fold(Vec3::zeros(), |acc, k| {
                acc + sim.current_positions[tet[k]] * v.weights[k]
            })
        })
        .collect()
}

/// Linear falloff `1 - r/R` inside `radius` of `center`, zero outside.
pub fn project_highlight(vertices: &[Vec3], center: &Vec3, radius: f64) -> Vec<f64> {
    assert!(radius > 0.0, "highlight radius must be positive");
    vertices
        .iter()
        .map(|p| {
            let r = (p - center).norm();
            if r >= radius {
                0.0
            } else {
                1.0 - r / radius
            }
        })
        .collect()
}
