//! Procedural meshes: boxes split into tets, the five-tet cube, icospheres.

use std::collections::HashMap;

use super::{MeshError, TetMesh};
use crate::Vec3;

/// Axis-aligned box `[0, size]` split into `cells` hexahedra, each cut into six
/// tets sharing the main diagonal. Adjacent cells share faces conformingly.
pub fn box_tet_mesh(size: Vec3, cells: [usize; 3]) -> Result<TetMesh, MeshError> {
    let (p, t) = box_tets(size, cells);
    TetMesh::new(p, t)
}

pub fn box_tets(size: Vec3, cells: [usize; 3]) -> (Vec<Vec3>, Vec<[usize; 4]>) {
    let [nx, ny, nz] = cells;
    let idx = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut positions = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                positions.push(Vec3::new(
                    size.x * i as f64 / nx as f64,
                    size.y * j as f64 / ny as f64,
                    size.z * k as f64 / nz as f64,
                ));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut tet = [idx(i, j, k); 4];
                    for (slot, axis) in perm.into_iter().enumerate() {
                        c[axis] += 1;
                        tet[slot + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    (positions, tets)
}

/// Unit-ish cube `[0, side]^3` as one central tet plus four corner tets.
pub fn cube_five_tets(side: f64) -> (Vec<Vec3>, Vec<[usize; 4]>) {
    let p: Vec<Vec3> = (0..8)
        .map(|c| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64) * side)
        .collect();
    let tets = vec![[0, 1, 2, 4], [1, 2, 3, 7], [1, 4, 5, 7], [2, 4, 6, 7], [1, 2, 4, 7]];
    (p, tets)
}

/// Subdivided icosahedron projected to a sphere of `radius` around the origin,
/// outward winding.
pub fn icosphere(radius: f64, subdivisions: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v.into_iter().map(|p| p * radius).collect(), f)
}

/// Closed, outward-wound triangle surface of an axis-aligned box centred on
/// the origin.
pub fn box_surface(half_extent: Vec3) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mesh = box_tet_mesh(half_extent * 2.0, [1, 1, 1]).expect("unit box is valid");
    let v = mesh.rest_positions.iter().map(|p| p - half_extent).collect();
    (v, mesh.boundary_faces)
}
