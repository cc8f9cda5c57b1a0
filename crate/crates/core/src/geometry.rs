//! Small geometric kernels shared by the mesh and collision code.

use crate::Vec3;

/// Scalar triple product `(x × y) · z`.
#[inline]
pub fn triple(x: &Vec3, y: &Vec3, z: &Vec3) -> f64 {
    x.cross(y).dot(z)
}

/// Signed volume of the tetrahedron `(a, b, c, d)`; positive when `d` lies on
/// the side of `(a, b, c)` that `(b - a) × (c - a)` points to.
#[inline]
pub fn signed_tet_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    triple(&(b - a), &(c - a), &(d - a)) / 6.0
}

/// Barycentric coordinates of `p` with respect to the tetrahedron `x`.
///
/// Returns `None` when the tetrahedron is degenerate. The first weight is
/// computed as `1 - (w1 + w2 + w3)` so the sum is one up to a single rounding.
pub fn tet_barycentric(x: &[Vec3; 4], p: &Vec3) -> Option<[f64; 4]> {
    let dm = nalgebra::Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]);
    let w = dm.lu().solve(&(p - x[0]))?;
    if !w.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some([1.0 - (w[0] + w[1] + w[2]), w[0], w[1], w[2]])
}

/// Barycentric coordinates of the orthogonal projection of `p` onto the plane
/// of triangle `(a, b, c)`. `None` for a zero-area triangle.
pub fn triangle_barycentric(a: &Vec3, b: &Vec3, c: &Vec3, p: &Vec3) -> Option<[f64; 3]> {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom <= f64::EPSILON * d00 * d11 || denom == 0.0 {
        return None;
    }
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    Some([1.0 - v - w, v, w])
}

/// Closest point to `p` on triangle `(a, b, c)` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Euclidean distance from `p` to the solid tetrahedron `x` (zero inside).
pub fn point_tet_distance(x: &[Vec3; 4], p: &Vec3) -> f64 {
    if let Some(w) = tet_barycentric(x, p) {
        if w.iter().all(|&v| v >= 0.0) {
            return 0.0;
        }
    }
    const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
    FACES
        .iter()
        .map(|f| (closest_point_on_triangle(p, &x[f[0]], &x[f[1]], &x[f[2]]) - p).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Closest-point parameters `(s, t)` between the infinite lines `p1 + s·d1` and
/// `p2 + t·d2`; `None` when the lines are parallel.
pub fn line_line_params(p1: &Vec3, d1: &Vec3, p2: &Vec3, d2: &Vec3) -> Option<(f64, f64)> {
    let r = p1 - p2;
    let a = d1.dot(d1);
    let e = d2.dot(d2);
    let b = d1.dot(d2);
    let c = d1.dot(&r);
    let f = d2.dot(&r);
    let denom = a * e - b * b;
    if denom <= 1e-14 * a * e || a == 0.0 || e == 0.0 {
        return None;
    }
    let s = (b * f - c * e) / denom;
    let t = (a * f - b * c) / denom;
    Some((s, t))
}
