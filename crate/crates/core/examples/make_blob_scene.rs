//! Writes the bundled demo assets: a lumpy creature-like surface and the
//! coarse box cage around it.
//!
//! cargo run -p porosim --example make_blob_scene -- scenes/blob

use std::path::PathBuf;

use porosim::mesh::generate::{box_tets, icosphere};
use porosim::mesh::io::{write_obj, write_tetgen};
use porosim::mesh::Aabb;
use porosim::Vec3;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenes/blob".into()));
    std::fs::create_dir_all(&dir)?;

    let (sphere, triangles) = icosphere(1.0, 3);
    let surface: Vec<Vec3> = sphere
        .iter()
        .map(|p| {
            let lobes = 1.0 + 0.12 * (3.0 * p.x).sin() * (2.0 * p.y).cos() + 0.08 * (4.0 * p.z).cos();
            let hump = 0.25 * (-(p - Vec3::new(0.6, 0.0, 0.6)).norm_squared() * 4.0).exp();
            let r = lobes + hump;
            Vec3::new(0.06 * r * p.x, 0.03 * r * p.y, 0.035 * r * p.z) + Vec3::new(0.0, 0.0, 0.045)
        })
        .collect();

    let bounds = Aabb::from_points(&surface);
    // The cage is a little tighter than the surface along x, so the snout and
    // tail stick out and exercise the extrapolated embedding.
    let min = Vec3::new(bounds.min.x + 0.002, bounds.min.y - 0.003, bounds.min.z - 0.003);
    let max = Vec3::new(bounds.max.x - 0.002, bounds.max.y + 0.003, bounds.max.z + 0.003);
    let (cage, tets) = box_tets(max - min, [8, 4, 5]);
    let cage: Vec<Vec3> = cage.iter().map(|p| p + min).collect();

    let (node, ele) = write_tetgen(&cage, &tets);
    std::fs::write(dir.join("cage.node"), node)?;
    std::fs::write(dir.join("cage.ele"), ele)?;
    std::fs::write(dir.join("blob.obj"), write_obj(&surface, &triangles))?;
    println!(
        "{} surface vertices, {} cage vertices, {} tets",
        surface.len(),
        cage.len(),
        tets.len()
    );
    Ok(())
}
