//! Continuous collision detection between the tool proxy and the boundary of
//! the simulation mesh.
//!
//! Every point moves linearly over the normalized step `t ∈ [0, 1]`. Four
//! points become coplanar where a cubic in `t` vanishes; those roots, checked
//! for containment, are the contact times. The step is then cut at the contact
//! times and every piece is classified as penetrating or not, which yields the
//! penetration intervals the penalty integral runs over.
//!
//! Sign convention: `n` points from the object toward the proxy, `p` lies on
//! the proxy and `q` on the object, and the pair penetrates where
//! `n·(p − q) < 0`.

use serde::{Deserialize, Serialize};

use crate::geometry::{line_line_params, triangle_barycentric, triple};
use crate::mesh::Aabb;
use crate::Vec3;

/// Barycentric slack accepted when validating a contact.
pub const CONTAINMENT_TOLERANCE: f64 = 1e-9;
/// Intervals whose deepest point is shallower than this are grazing contacts.
pub const GRAZING_DEPTH: f64 = 1e-12;

/// A point moving linearly from `start` (t = 0) to `end` (t = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moving {
    pub start: Vec3,
    pub end: Vec3,
}

impl Moving {
    pub fn new(start: Vec3, end: Vec3) -> Self {
        Self { start, end }
    }

    pub fn fixed(p: Vec3) -> Self {
        Self { start: p, end: p }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.start + (self.end - self.start) * t
    }

    pub fn delta(&self) -> Vec3 {
        self.end - self.start
    }

    pub fn swept_box(&self) -> Aabb {
        Aabb::from_points([&self.start, &self.end])
    }
}

pub type MovingVertex = Moving;
pub type MovingEdge = [Moving; 2];
pub type MovingTriangle = [Moving; 3];

fn swept(points: &[Moving]) -> Aabb {
    points.iter().fold(Aabb::empty(), |b, p| b.union(&p.swept_box()))
}

/// Real roots of a cubic restricted to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CubicRoots {
    pub roots: Vec<f64>,
    /// Every coefficient is zero, so every `t` is a root.
    pub identically_zero: bool,
}

fn horner(c: &[f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

fn horner_derivative(c: &[f64; 4], t: f64) -> f64 {
    (3.0 * c[3] * t + 2.0 * c[2]) * t + c[1]
}

/// Real roots of `a t² + b t + c`, any of which may be degenerate.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

fn analytic_cubic(c: &[f64; 4]) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    if c[3].abs() <= EPS {
        let (a, b) = if c[2].abs() <= EPS { (0.0, c[1]) } else { (c[2], c[1]) };
        return quadratic_roots(a, b, c[0]);
    }
    let (b, cc, d) = (c[2] / c[3], c[1] / c[3], c[0] / c[3]);
    let shift = -b / 3.0;
    let p = cc - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * cc / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = ((3.0 * q) / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| 2.0 * r * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    }
}

fn newton_polish(c: &[f64; 4], mut t: f64) -> f64 {
    for _ in 0..2 {
        let d = horner_derivative(c, t);
        if d == 0.0 {
            break;
        }
        let next = t - horner(c, t) / d;
        if !next.is_finite() {
            break;
        }
        t = next;
    }
    t
}

fn bisect(c: &[f64; 4], mut lo: f64, mut hi: f64) -> f64 {
    let flo = horner(c, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = horner(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots of `c3 t³ + c2 t² + c1 t + c0` in `[0, 1]`, sorted, with
/// `|p(t)| < 1e-10 · max|c|`.
///
/// Closed-form roots polished by two Newton steps, followed by a bracketing
/// pass over the monotone pieces of `[0, 1]` that catches any sign change the
/// closed form lost to cancellation.
pub fn cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> CubicRoots {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return CubicRoots {
            roots: Vec::new(),
            identically_zero: true,
        };
    }
    let c = [c0 / scale, c1 / scale, c2 / scale, c3 / scale];
    let tol = 1e-10;
    let mut roots: Vec<f64> = Vec::new();
    let accept = |t: f64, roots: &mut Vec<f64>| {
        if (-1e-9..=1.0 + 1e-9).contains(&t) {
            let t = t.clamp(0.0, 1.0);
            if horner(&c, t).abs() < tol {
                roots.push(t);
            }
        }
    };
    for t in analytic_cubic(&c) {
        accept(newton_polish(&c, t), &mut roots);
    }
    let mut breaks = vec![0.0];
    let mut crit: Vec<f64> = quadratic_roots(3.0 * c[3], 2.0 * c[2], c[1])
        .into_iter()
        .filter(|t| *t > 0.0 && *t < 1.0)
        .collect();
    crit.sort_by(f64::total_cmp);
    breaks.extend(&crit);
    breaks.push(1.0);
    for &t in &breaks {
        accept(t, &mut roots);
    }
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (flo, fhi) = (horner(&c, lo), horner(&c, hi));
        if (flo < 0.0) != (fhi < 0.0) && flo != 0.0 && fhi != 0.0 && !roots.iter().any(|r| *r >= lo && *r <= hi) {
            accept(bisect(&c, lo, hi), &mut roots);
        }
    }
    roots.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(roots.len());
    for t in roots {
        match merged.last_mut() {
            Some(last) if t - *last < 1e-7 => {
                if horner(&c, t).abs() < horner(&c, *last).abs() {
                    *last = t;
                }
            }
            _ => merged.push(t),
        }
    }
    CubicRoots {
        roots: merged,
        identically_zero: false,
    }
}

/// Coefficients `[c0, c1, c2, c3]` of `t ↦ [X(t), Y(t), Z(t)]` for vectors
/// moving linearly as `X0 + t·X1`.
pub fn triple_product_cubic(x: (Vec3, Vec3), y: (Vec3, Vec3), z: (Vec3, Vec3)) -> [f64; 4] {
    let (a0, a1) = x;
    let (b0, b1) = y;
    let (c0, c1) = z;
    [
        triple(&a0, &b0, &c0),
        triple(&a1, &b0, &c0) + triple(&a0, &b1, &c0) + triple(&a0, &b0, &c1),
        triple(&a1, &b1, &c0) + triple(&a1, &b0, &c1) + triple(&a0, &b1, &c1),
        triple(&a1, &b1, &c1),
    ]
}

fn rel(a: &Moving, b: &Moving) -> (Vec3, Vec3) {
    (a.start - b.start, a.delta() - b.delta())
}

/// Coplanarity cubic of a vertex and a triangle.
pub fn vertex_face_cubic(v: &MovingVertex, f: &MovingTriangle) -> [f64; 4] {
    triple_product_cubic(rel(&f[1], &f[0]), rel(&f[2], &f[0]), rel(v, &f[0]))
}

/// Coplanarity cubic of two edges.
pub fn edge_edge_cubic(e1: &MovingEdge, e2: &MovingEdge) -> [f64; 4] {
    triple_product_cubic(rel(&e1[1], &e1[0]), rel(&e2[1], &e2[0]), rel(&e2[0], &e1[0]))
}

/// A validated vertex-face contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexFaceContact {
    pub t: f64,
    pub weights: [f64; 3],
    /// Unit normal of the triangle's winding at `t`.
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexFaceResult {
    pub contacts: Vec<VertexFaceContact>,
    /// Roots discarded because the triangle had no area at that time.
    pub degenerate: usize,
    pub identically_coplanar: bool,
}

fn clean_weights<const N: usize>(w: [f64; N]) -> [f64; N] {
    let w = w.map(|x| x.max(0.0));
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

pub fn ccd_vertex_face(v: &MovingVertex, f: &MovingTriangle) -> VertexFaceResult {
    let c = vertex_face_cubic(v, f);
    let roots = cubic_roots(c[3], c[2], c[1], c[0]);
    let mut out = VertexFaceResult {
        identically_coplanar: roots.identically_zero,
        ..Default::default()
    };
    for t in roots.roots {
        let [a, b, cc] = f.map(|m| m.at(t));
        let cross = (b - a).cross(&(cc - a));
        let Some(w) = triangle_barycentric(&a, &b, &cc, &v.at(t)) else {
            out.degenerate += 1;
            continue;
        };
        if w.iter().all(|x| *x >= -CONTAINMENT_TOLERANCE) {
            out.contacts.push(VertexFaceContact {
                t,
                weights: clean_weights(w),
                normal: cross.normalize(),
            });
        }
    }
    out
}

/// A validated edge-edge contact: `p = w_a a + w_b b`, `q = w_c c + w_d d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEdgeContact {
    pub t: f64,
    pub weights_first: [f64; 2],
    pub weights_second: [f64; 2],
    /// `(b − a) × (d − c)` normalized, or the separating direction for
    /// parallel edges.
    pub normal: Vec3,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeEdgeResult {
    pub contacts: Vec<EdgeEdgeContact>,
    pub degenerate: usize,
    pub identically_coplanar: bool,
}

fn any_perpendicular(d: &Vec3) -> Vec3 {
    let axis = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
        Vec3::x()
    } else if d.y.abs() <= d.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    d.cross(&axis).normalize()
}

/// Closest points of two segments that are validated to touch at `t`.
fn edge_edge_at(e1: &MovingEdge, e2: &MovingEdge, t: f64, scale: f64) -> Option<Result<EdgeEdgeContact, ()>> {
    let (a, b) = (e1[0].at(t), e1[1].at(t));
    let (c, d) = (e2[0].at(t), e2[1].at(t));
    let (da, dc) = (b - a, d - c);
    if da.norm_squared() == 0.0 || dc.norm_squared() == 0.0 {
        return Some(Err(()));
    }
    let lo = -CONTAINMENT_TOLERANCE;
    let hi = 1.0 + CONTAINMENT_TOLERANCE;
    match line_line_params(&a, &da, &c, &dc) {
        Some((s, u)) => {
            if (lo..=hi).contains(&s) && (lo..=hi).contains(&u) {
                let (s, u) = (s.clamp(0.0, 1.0), u.clamp(0.0, 1.0));
                Some(Ok(EdgeEdgeContact {
                    t,
                    weights_first: [1.0 - s, s],
                    weights_second: [1.0 - u, u],
                    normal: da.cross(&dc).normalize(),
                    parallel: false,
                }))
            } else {
                None
            }
        }
        None => {
            // Parallel: touch only if collinear, then use the overlap midpoint.
            let dir = da.normalize();
            let off = (c - a) - dir * (c - a).dot(&dir);
            if off.norm() > 1e-9 * scale {
                return None;
            }
            let len2 = da.norm_squared();
            let (sc, sd) = ((c - a).dot(&da) / len2, (d - a).dot(&da) / len2);
            let s0 = sc.min(sd).max(0.0);
            let s1 = sc.max(sd).min(1.0);
            if s0 > s1 {
                return None;
            }
            let s = 0.5 * (s0 + s1);
            let p = a + da * s;
            let u = ((p - c).dot(&dc) / dc.norm_squared()).clamp(0.0, 1.0);
            Some(Ok(EdgeEdgeContact {
                t,
                weights_first: [1.0 - s, s],
                weights_second: [1.0 - u, u],
                normal: any_perpendicular(&dir),
                parallel: true,
            }))
        }
    }
}

pub fn ccd_edge_edge(e1: &MovingEdge, e2: &MovingEdge) -> EdgeEdgeResult {
    let c = edge_edge_cubic(e1, e2);
    let roots = cubic_roots(c[3], c[2], c[1], c[0]);
    let scale = swept(&[e1[0], e1[1], e2[0], e2[1]]).diagonal().max(f64::MIN_POSITIVE);
    let mut out = EdgeEdgeResult {
        identically_coplanar: roots.identically_zero,
        ..Default::default()
    };
    for t in roots.roots {
        match edge_edge_at(e1, e2, t, scale) {
            Some(Ok(contact)) => out.contacts.push(contact),
            Some(Err(())) => out.degenerate += 1,
            None => {}
        }
    }
    out
}

/// Sorted `(i, j)` pairs whose boxes overlap, by sort and sweep along x.
pub fn broadphase(first: &[Aabb], second: &[Aabb]) -> Vec<(usize, usize)> {
    let mut order: Vec<(f64, bool, usize)> = first
        .iter()
        .enumerate()
        .map(|(i, b)| (b.min.x, false, i))
        .chain(second.iter().enumerate().map(|(j, b)| (b.min.x, true, j)))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut active_first: Vec<usize> = Vec::new();
    let mut active_second: Vec<usize> = Vec::new();
    let mut pairs = Vec::new();
    for (min_x, is_second, k) in order {
        active_first.retain(|&i| first[i].max.x >= min_x);
        active_second.retain(|&j| second[j].max.x >= min_x);
        if is_second {
            pairs.extend(
                active_first
                    .iter()
                    .filter(|&&i| first[i].overlaps(&second[k]))
                    .map(|&i| (i, k)),
            );
            active_second.push(k);
        } else {
            pairs.extend(
                active_second
                    .iter()
                    .filter(|&&j| first[k].overlaps(&second[j]))
                    .map(|&j| (k, j)),
            );
            active_first.push(k);
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenetrationInterval {
    pub t_a: f64,
    pub t_b: f64,
    pub index: usize,
}

/// Cuts `[0, 1]` at the contact times, keeps the pieces whose midpoint is
/// penetrating and merges neighbors that are both kept.
pub fn penetration_intervals(times: &[f64], penetrating: impl Fn(f64) -> bool) -> Vec<PenetrationInterval> {
    let mut cuts = vec![0.0];
    let mut sorted: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0 && *t < 1.0).collect();
    sorted.sort_by(f64::total_cmp);
    cuts.extend(sorted);
    cuts.push(1.0);
    let mut out: Vec<PenetrationInterval> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a || !penetrating(0.5 * (a + b)) {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.t_b == a => last.t_b = b,
            _ => out.push(PenetrationInterval {
                t_a: a,
                t_b: b,
                index: out.len(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    /// Proxy vertex against an object boundary face.
    ProxyVertexObjectFace,
    /// Object boundary vertex against a proxy face.
    ObjectVertexProxyFace,
    EdgeEdge,
}

/// The moving primitives of a contact pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactGeometry {
    VertexFace {
        vertex: MovingVertex,
        face: MovingTriangle,
        vertex_on_proxy: bool,
    },
    EdgeEdge {
        proxy: MovingEdge,
        object: MovingEdge,
        /// Outward direction of the object surface around the edge.
        object_normal: Moving,
    },
}

/// Everything the penalty integrand needs at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSample {
    /// `n·(p − q)`, negative while penetrating.
    pub depth: f64,
    pub normal: Vec3,
    pub proxy_point: Vec3,
    pub object_point: Vec3,
    /// Barycentric weights on the object primitive (unused slots zero).
    pub object_weights: [f64; 3],
    /// Barycentric weights on the proxy primitive (unused slots zero).
    pub proxy_weights: [f64; 3],
    /// Closest point lies within both primitives.
    pub inside: bool,
}

impl ContactGeometry {
    pub fn sample(&self, t: f64) -> Option<ContactSample> {
        match self {
            ContactGeometry::VertexFace {
                vertex,
                face,
                vertex_on_proxy,
            } => {
                let [a, b, c] = face.map(|m| m.at(t));
                let cross = (b - a).cross(&(c - a));
                let len = cross.norm();
                if len == 0.0 {
                    return None;
                }
                let face_normal = cross / len;
                let v = vertex.at(t);
                let h = (v - a).dot(&face_normal);
                let foot = v - face_normal * h;
                let w = triangle_barycentric(&a, &b, &c, &foot)?;
                let inside = w.iter().all(|x| *x >= -CONTAINMENT_TOLERANCE);
                let cw = clean_weights(w);
                Some(if *vertex_on_proxy {
                    ContactSample {
                        depth: h,
                        normal: face_normal,
                        proxy_point: v,
                        object_point: foot,
                        object_weights: cw,
                        proxy_weights: [1.0, 0.0, 0.0],
                        inside,
                    }
                } else {
                    // n = −(proxy outward normal), p on the proxy face, q = vertex
                    ContactSample {
                        depth: h,
                        normal: -face_normal,
                        proxy_point: foot,
                        object_point: v,
                        object_weights: [1.0, 0.0, 0.0],
                        proxy_weights: cw,
                        inside,
                    }
                })
            }
            ContactGeometry::EdgeEdge {
                proxy,
                object,
                object_normal,
            } => {
                let (a, b) = (proxy[0].at(t), proxy[1].at(t));
                let (c, d) = (object[0].at(t), object[1].at(t));
                let (s, u) = line_line_params(&a, &(b - a), &c, &(d - c))?;
                let mut n = (b - a).cross(&(d - c)).normalize();
                if n.dot(&object_normal.at(t)) < 0.0 {
                    n = -n;
                }
                let p = a + (b - a) * s;
                let q = c + (d - c) * u;
                let inside = [s, u]
                    .iter()
                    .all(|x| (-CONTAINMENT_TOLERANCE..=1.0 + CONTAINMENT_TOLERANCE).contains(x));
                let (sc, uc) = (s.clamp(0.0, 1.0), u.clamp(0.0, 1.0));
                Some(ContactSample {
                    depth: n.dot(&(p - q)),
                    normal: n,
                    proxy_point: p,
                    object_point: q,
                    object_weights: [1.0 - uc, uc, 0.0],
                    proxy_weights: [1.0 - sc, sc, 0.0],
                    inside,
                })
            }
        }
    }

    /// Penetrating, within the depth limit, and over the primitive.
    pub fn is_penetrating(&self, t: f64, depth_limit: f64) -> bool {
        self.sample(t)
            .is_some_and(|s| s.inside && s.depth < 0.0 && -s.depth < depth_limit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactEvent {
    pub kind: ContactKind,
    /// Proxy vertex ids of the proxy primitive.
    pub proxy_ids: Vec<usize>,
    /// Object vertex ids of the object primitive.
    pub object_ids: Vec<usize>,
    /// Object boundary faces the contact touches.
    pub object_faces: Vec<usize>,
    /// Validated contact times.
    pub times: Vec<f64>,
    pub intervals: Vec<PenetrationInterval>,
    pub geometry: ContactGeometry,
}

impl ContactEvent {
    /// Deepest penetration over the intervals, sampled at the ends, midpoint
    /// and Gauss nodes.
    pub fn max_depth(&self) -> f64 {
        let mut deepest: f64 = 0.0;
        for iv in &self.intervals {
            for k in 0..=16 {
                let t = iv.t_a + (iv.t_b - iv.t_a) * k as f64 / 16.0;
                if let Some(s) = self.geometry.sample(t) {
                    deepest = deepest.max(-s.depth);
                }
            }
        }
        deepest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    /// Points deeper than this behind a face are not counted against it,
    /// and swept boxes are inflated by it.
    pub depth_limit: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self { depth_limit: 0.02 }
    }
}

/// Triangles plus their unique edges and adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTopology {
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    pub edge_faces: Vec<Vec<usize>>,
    pub vertices: Vec<usize>,
    pub vertex_faces: Vec<Vec<usize>>,
}

impl SurfaceTopology {
    pub fn new(triangles: Vec<[usize; 3]>, vertex_count: usize) -> Self {
        let mut edge_map: std::collections::BTreeMap<[usize; 2], Vec<usize>> = Default::default();
        let mut vertex_faces = vec![Vec::new(); vertex_count];
        for (f, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_map.entry([a.min(b), a.max(b)]).or_default().push(f);
                vertex_faces[tri[k]].push(f);
            }
        }
        let vertices = (0..vertex_count).filter(|&v| !vertex_faces[v].is_empty()).collect();
        let (edges, edge_faces) = edge_map.into_iter().unzip();
        Self {
            triangles,
            edges,
            edge_faces,
            vertices,
            vertex_faces,
        }
    }

    fn face_normal(&self, positions: &[Vec3], f: usize) -> Vec3 {
        let [a, b, c] = self.triangles[f].map(|i| positions[i]);
        (b - a).cross(&(c - a))
    }

    fn edge_normal(&self, positions: &[Vec3], e: usize) -> Vec3 {
        let n: Vec3 = self.edge_faces[e]
            .iter()
            .map(|&f| self.face_normal(positions, f).normalize())
            .sum();
        if n.norm_squared() > 0.0 {
            n.normalize()
        } else {
            n
        }
    }
}

/// One side of the contact problem: topology plus positions at both ends of
/// the step.
#[derive(Debug, Clone, Copy)]
pub struct MovingSurface<'a> {
    pub topology: &'a SurfaceTopology,
    pub start: &'a [Vec3],
    pub end: &'a [Vec3],
}

impl MovingSurface<'_> {
    fn point(&self, i: usize) -> Moving {
        Moving::new(self.start[i], self.end[i])
    }

    fn triangle(&self, f: usize) -> MovingTriangle {
        self.topology.triangles[f].map(|i| self.point(i))
    }

    fn edge(&self, e: usize) -> MovingEdge {
        self.topology.edges[e].map(|i| self.point(i))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResult {
    pub events: Vec<ContactEvent>,
    pub candidates: usize,
    pub degenerate: usize,
}

fn finish_event(
    kind: ContactKind,
    proxy_ids: Vec<usize>,
    object_ids: Vec<usize>,
    object_faces: Vec<usize>,
    times: Vec<f64>,
    geometry: ContactGeometry,
    params: &CollisionParams,
) -> Option<ContactEvent> {
    let intervals = penetration_intervals(&times, |t| geometry.is_penetrating(t, params.depth_limit));
    if intervals.is_empty() {
        return None;
    }
    let event = ContactEvent {
        kind,
        proxy_ids,
        object_ids,
        object_faces,
        times,
        intervals,
        geometry,
    };
    (event.max_depth() >= GRAZING_DEPTH).then_some(event)
}

/// Broad and narrow phase for all three pair types, in a fixed order:
/// proxy vertices against object faces, object vertices against proxy faces,
/// then edge pairs.
pub fn detect_contacts(proxy: &MovingSurface, object: &MovingSurface, params: &CollisionParams) -> DetectionResult {
    // Each side grows by half the limit, so boxes overlap iff their gap is at most the limit.
    let m = 0.5 * params.depth_limit;
    let boxes_v = |s: &MovingSurface| -> Vec<Aabb> {
        s.topology
            .vertices
            .iter()
            .map(|&v| s.point(v).swept_box().inflated(m))
            .collect()
    };
    let boxes_f = |s: &MovingSurface| -> Vec<Aabb> {
        (0..s.topology.triangles.len())
            .map(|f| swept(&s.triangle(f)).inflated(m))
            .collect()
    };
    let boxes_e = |s: &MovingSurface| -> Vec<Aabb> {
        (0..s.topology.edges.len())
            .map(|e| swept(&s.edge(e)).inflated(m))
            .collect()
    };
    let mut out = DetectionResult::default();

    let pv = boxes_v(proxy);
    let of = boxes_f(object);
    let pf = boxes_f(proxy);
    let ov = boxes_v(object);
    let pe = boxes_e(proxy);
    let oe = boxes_e(object);

    for (i, f) in broadphase(&pv, &of) {
        out.candidates += 1;
        let v = proxy.topology.vertices[i];
        let geometry = ContactGeometry::VertexFace {
            vertex: proxy.point(v),
            face: object.triangle(f),
            vertex_on_proxy: true,
        };
        let r = ccd_vertex_face(&proxy.point(v), &object.triangle(f));
        out.degenerate += r.degenerate;
        let times = r.contacts.iter().map(|c| c.t).collect();
        out.events.extend(finish_event(
            ContactKind::ProxyVertexObjectFace,
            vec![v],
            object.topology.triangles[f].to_vec(),
            vec![f],
            times,
            geometry,
            params,
        ));
    }
    for (f, i) in broadphase(&pf, &ov) {
        out.candidates += 1;
        let v = object.topology.vertices[i];
        let geometry = ContactGeometry::VertexFace {
            vertex: object.point(v),
            face: proxy.triangle(f),
            vertex_on_proxy: false,
        };
        let r = ccd_vertex_face(&object.point(v), &proxy.triangle(f));
        out.degenerate += r.degenerate;
        let times = r.contacts.iter().map(|c| c.t).collect();
        out.events.extend(finish_event(
            ContactKind::ObjectVertexProxyFace,
            proxy.topology.triangles[f].to_vec(),
            vec![v],
            object.topology.vertex_faces[v].clone(),
            times,
            geometry,
            params,
        ));
    }
    for (a, b) in broadphase(&pe, &oe) {
        out.candidates += 1;
        let geometry = ContactGeometry::EdgeEdge {
            proxy: proxy.edge(a),
            object: object.edge(b),
            object_normal: Moving::new(
                object.topology.edge_normal(object.start, b),
                object.topology.edge_normal(object.end, b),
            ),
        };
        let r = ccd_edge_edge(&proxy.edge(a), &object.edge(b));
        out.degenerate += r.degenerate;
        let times = r.contacts.iter().map(|c| c.t).collect();
        out.events.extend(finish_event(
            ContactKind::EdgeEdge,
            proxy.topology.edges[a].to_vec(),
            object.topology.edges[b].to_vec(),
            object.topology.edge_faces[b].clone(),
            times,
            geometry,
            params,
        ));
    }
    out
}

/// One contact in the diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub kind: ContactKind,
    pub proxy_ids: Vec<usize>,
    pub object_ids: Vec<usize>,
    pub intervals: Vec<[f64; 2]>,
    pub max_depth: f64,
}

/// One JSON line of the diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactDumpLine {
    pub step: u64,
    pub contacts: Vec<ContactRecord>,
}

impl ContactDumpLine {
    pub fn new(step: u64, events: &[ContactEvent]) -> Self {
        Self {
            step,
            contacts: events
                .iter()
                .map(|e| ContactRecord {
                    kind: e.kind,
                    proxy_ids: e.proxy_ids.clone(),
                    object_ids: e.object_ids.clone(),
                    intervals: e.intervals.iter().map(|i| [i.t_a, i.t_b]).collect(),
                    max_depth: e.max_depth(),
                })
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("contact records serialize") + "\n"
    }
}
