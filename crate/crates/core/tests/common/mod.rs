//! Reference computations shared by the integration tests and the
//! acceptance run. Each one is written from the definitions, not from the
//! library's code paths.

#![allow(dead_code)]

use porosim::collision::{
    ccd_edge_edge, ccd_vertex_face, penetration_intervals, ContactEvent, ContactGeometry, ContactKind, Moving,
    MovingEdge, MovingTriangle,
};
use porosim::Vec3;
use rand::Rng;

/// Contact times of a moving vertex and triangle found by dense sampling of
/// the signed volume and bisection. Only crossings whose foot lies inside
/// the triangle by at least `margin` (barycentric) are kept.
pub fn vf_sampling_oracle(v: &Moving, f: &MovingTriangle, substeps: usize, margin: f64) -> Vec<f64> {
    let g = |t: f64| {
        let [a, b, c] = f.map(|m| m.start + (m.end - m.start) * t);
        let p = v.start + (v.end - v.start) * t;
        (b - a).cross(&(c - a)).dot(&(p - a))
    };
    let inside = |t: f64| {
        let [a, b, c] = f.map(|m| m.start + (m.end - m.start) * t);
        let p = v.start + (v.end - v.start) * t;
        let n = (b - a).cross(&(c - a));
        let nn = n.norm_squared();
        if nn == 0.0 {
            return false;
        }
        let wa = (b - p).cross(&(c - p)).dot(&n) / nn;
        let wb = (c - p).cross(&(a - p)).dot(&n) / nn;
        let wc = 1.0 - wa - wb;
        wa >= margin && wb >= margin && wc >= margin
    };
    sign_change_times(g, substeps)
        .into_iter()
        .filter(|&t| inside(t))
        .collect()
}

/// Same for two moving edges: the lines' closest points must both be inside
/// their segments by `margin` in parameter.
pub fn ee_sampling_oracle(e1: &MovingEdge, e2: &MovingEdge, substeps: usize, margin: f64) -> Vec<f64> {
    let at = |m: &Moving, t: f64| m.start + (m.end - m.start) * t;
    let g = |t: f64| {
        let (a, b, c, d) = (at(&e1[0], t), at(&e1[1], t), at(&e2[0], t), at(&e2[1], t));
        (b - a).cross(&(d - c)).dot(&(c - a))
    };
    let inside = |t: f64| {
        let (a, b, c, d) = (at(&e1[0], t), at(&e1[1], t), at(&e2[0], t), at(&e2[1], t));
        let (u, v, w) = (b - a, d - c, a - c);
        let (aa, bb, cc, dd, ee) = (u.dot(&u), u.dot(&v), v.dot(&v), u.dot(&w), v.dot(&w));
        let den = aa * cc - bb * bb;
        if den <= 1e-14 * aa * cc {
            return false;
        }
        let s = (bb * ee - cc * dd) / den;
        let r = (aa * ee - bb * dd) / den;
        (margin..=1.0 - margin).contains(&s) && (margin..=1.0 - margin).contains(&r)
    };
    sign_change_times(g, substeps)
        .into_iter()
        .filter(|&t| inside(t))
        .collect()
}

fn sign_change_times(g: impl Fn(f64) -> f64, substeps: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t0 = 0.0;
    let mut g0 = g(0.0);
    for k in 1..=substeps {
        let t1 = k as f64 / substeps as f64;
        let g1 = g(t1);
        if g0 == 0.0 {
            out.push(t0);
        } else if g0 * g1 < 0.0 {
            let (mut lo, mut hi, mut glo) = (t0, t1, g0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (gm < 0.0) == (glo < 0.0) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        t0 = t1;
        g0 = g1;
    }
    if g0 == 0.0 {
        out.push(1.0);
    }
    out
}

fn rand_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// A moving triangle and vertex; about half the cases are built to pass
/// through the face.
pub fn random_vf(rng: &mut impl Rng) -> (Moving, MovingTriangle) {
    let tri: MovingTriangle = std::array::from_fn(|_| {
        let p = rand_vec(rng, 1.0);
        Moving::new(p, p + rand_vec(rng, 0.3))
    });
    let v = if rng.random_bool(0.5) {
        let w: [f64; 3] = {
            let a: f64 = rng.random_range(0.05..0.9);
            let b: f64 = rng.random_range(0.05..(0.95 - a));
            [a, b, 1.0 - a - b]
        };
        let t: f64 = rng.random_range(0.1..0.9);
        let [a, b, c] = tri.map(|m| m.start + (m.end - m.start) * t);
        let hit = a * w[0] + b * w[1] + c * w[2];
        let dir = rand_vec(rng, 1.0);
        Moving::new(hit - dir * t, hit + dir * (1.0 - t))
    } else {
        let p = rand_vec(rng, 1.0);
        Moving::new(p, p + rand_vec(rng, 1.0))
    };
    (v, tri)
}

/// Two moving edges; about half are built to cross mid-step.
pub fn random_ee(rng: &mut impl Rng) -> (MovingEdge, MovingEdge) {
    let e1: MovingEdge = std::array::from_fn(|_| {
        let p = rand_vec(rng, 1.0);
        Moving::new(p, p + rand_vec(rng, 0.3))
    });
    let e2 = if rng.random_bool(0.5) {
        let s: f64 = rng.random_range(0.05..0.95);
        let u: f64 = rng.random_range(0.05..0.95);
        let t: f64 = rng.random_range(0.1..0.9);
        let a = e1[0].start + (e1[0].end - e1[0].start) * t;
        let b = e1[1].start + (e1[1].end - e1[1].start) * t;
        let hit = a + (b - a) * s;
        let dir = rand_vec(rng, 1.0).normalize() * rng.random_range(0.5..1.5);
        let c = hit - dir * u;
        let d = hit + dir * (1.0 - u);
        let vel_c = rand_vec(rng, 0.3);
        let vel_d = rand_vec(rng, 0.3);
        [
            Moving::new(c - vel_c * t, c + vel_c * (1.0 - t)),
            Moving::new(d - vel_d * t, d + vel_d * (1.0 - t)),
        ]
    } else {
        std::array::from_fn(|_| {
            let p = rand_vec(rng, 1.0);
            Moving::new(p, p + rand_vec(rng, 0.5))
        })
    };
    (e1, e2)
}

/// Adaptive Simpson on a vector integrand.
pub fn adaptive_simpson(f: &impl Fn(f64) -> Vec3, a: f64, b: f64, tol: f64) -> Vec3 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &impl Fn(f64) -> Vec3,
        a: f64,
        b: f64,
        fa: Vec3,
        fm: Vec3,
        fb: Vec3,
        whole: Vec3,
        tol: f64,
        depth: u32,
    ) -> Vec3 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (fa + flm * 4.0 + fm) * ((m - a) / 6.0);
        let right = (fm + frm * 4.0 + fb) * ((b - m) / 6.0);
        let delta = left + right - whole;
        if depth == 0 || delta.amax() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (fa + fm * 4.0 + fb) * ((b - a) / 6.0);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `k ∫ depth·n dt` over the event's intervals by adaptive Simpson, with
/// depth and normal recomputed from the raw primitives.
pub fn impulse_oracle(event: &ContactEvent, k: f64) -> Vec3 {
    let integrand = |t: f64| -> Vec3 {
        match &event.geometry {
            ContactGeometry::VertexFace {
                vertex,
                face,
                vertex_on_proxy,
            } => {
                let [a, b, c] = face.map(|m| m.start + (m.end - m.start) * t);
                let p = vertex.start + (vertex.end - vertex.start) * t;
                let n = (b - a).cross(&(c - a)).normalize();
                let h = n.dot(&(p - a));
                if *vertex_on_proxy {
                    n * h
                } else {
                    // normal flips to point at the proxy, and p − q flips with it
                    (-n) * h
                }
            }
            ContactGeometry::EdgeEdge {
                proxy,
                object,
                object_normal,
            } => {
                let at = |m: &Moving| m.start + (m.end - m.start) * t;
                let (a, b, c, d) = (at(&proxy[0]), at(&proxy[1]), at(&object[0]), at(&object[1]));
                let mut n = (b - a).cross(&(d - c)).normalize();
                if n.dot(&at(object_normal)) < 0.0 {
                    n = -n;
                }
                n * n.dot(&(c - a)) * -1.0
            }
        }
    };
    event.intervals.iter().fold(Vec3::zeros(), |acc, iv| {
        acc + adaptive_simpson(&integrand, iv.t_a, iv.t_b, 1e-15)
    }) * k
}

/// A penetrating proxy-vertex / object-face event with a random trajectory,
/// assembled from the public CCD and interval functions.
pub fn random_vf_event(rng: &mut impl Rng, depth_limit: f64) -> Option<ContactEvent> {
    let tri: MovingTriangle = {
        let base = [
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let tilt = rand_vec(rng, 0.05);
        base.map(|p| {
            let q = p + rand_vec(rng, 0.1);
            Moving::new(q, q + tilt + rand_vec(rng, 0.01))
        })
    };
    let start = Vec3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.02..0.02),
    );
    let end = start
        + Vec3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.05..0.0),
        );
    let vertex = Moving::new(start, end);
    let r = ccd_vertex_face(&vertex, &tri);
    let times: Vec<f64> = r.contacts.iter().map(|c| c.t).collect();
    let geometry = ContactGeometry::VertexFace {
        vertex,
        face: tri,
        vertex_on_proxy: true,
    };
    let intervals = penetration_intervals(&times, |t| geometry.is_penetrating(t, depth_limit));
    (!intervals.is_empty()).then_some(ContactEvent {
        kind: ContactKind::ProxyVertexObjectFace,
        proxy_ids: vec![0],
        object_ids: vec![0, 1, 2],
        object_faces: vec![0],
        times,
        intervals,
        geometry,
    })
}

/// A penetrating edge pair: a proxy edge sinking below an object edge on the
/// top of a slab whose outward normal is +z.
pub fn random_ee_event(rng: &mut impl Rng, depth_limit: f64) -> Option<ContactEvent> {
    let object: MovingEdge = {
        let c = Vec3::new(-1.0, rng.random_range(-0.1..0.1), 0.0);
        let d = Vec3::new(1.0, rng.random_range(-0.1..0.1), 0.0);
        let drift = rand_vec(rng, 0.01);
        [Moving::new(c, c + drift), Moving::new(d, d + drift)]
    };
    let z0: f64 = rng.random_range(-0.01..0.02);
    let z1: f64 = z0 - rng.random_range(0.0..0.04);
    let a = Vec3::new(rng.random_range(-0.3..0.3), -1.0, z0);
    let b = Vec3::new(rng.random_range(-0.3..0.3), 1.0, z0);
    let dz = Vec3::new(0.0, 0.0, z1 - z0);
    let proxy = [
        Moving::new(a, a + dz + rand_vec(rng, 0.01)),
        Moving::new(b, b + dz + rand_vec(rng, 0.01)),
    ];
    let r = ccd_edge_edge(&proxy, &object);
    let times: Vec<f64> = r.contacts.iter().map(|c| c.t).collect();
    let geometry = ContactGeometry::EdgeEdge {
        proxy,
        object,
        object_normal: Moving::fixed(Vec3::z()),
    };
    let intervals = penetration_intervals(&times, |t| geometry.is_penetrating(t, depth_limit));
    (!intervals.is_empty()).then_some(ContactEvent {
        kind: ContactKind::EdgeEdge,
        proxy_ids: vec![0, 1],
        object_ids: vec![0, 1],
        object_faces: vec![0],
        times,
        intervals,
        geometry,
    })
}

/// The kernel weight written out directly.
pub fn damping_formula(r: f64, k1: f64, k2: f64, radius: f64) -> f64 {
    if r < radius {
        1.0 / (1.0 + k1 * r)
    } else {
        1.0 / (1.0 + k1 * r + f64::exp(k2 * r))
    }
}

/// Central-difference gradient of `energy` at `x` with step `h`.
pub fn fd_gradient(mut energy: impl FnMut(&[Vec3]) -> f64, x: &[Vec3], h: f64) -> Vec<Vec3> {
    let mut probe = x.to_vec();
    let mut out = vec![Vec3::zeros(); x.len()];
    for i in 0..x.len() {
        for k in 0..3 {
            let orig = probe[i][k];
            probe[i][k] = orig + h;
            let ep = energy(&probe);
            probe[i][k] = orig - h;
            let em = energy(&probe);
            probe[i][k] = orig;
            out[i][k] = (ep - em) / (2.0 * h);
        }
    }
    out
}

/// Writes a minimal scene on disk: two tets sharing one face.
pub fn write_two_tet_scene(dir: &std::path::Path) -> std::path::PathBuf {
    std::fs::write(
        dir.join("two.node"),
        "5 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n4 0 0 -1\n",
    )
    .unwrap();
    std::fs::write(dir.join("two.ele"), "2 4 0\n0 0 1 2 3\n1 0 2 1 4\n").unwrap();
    let scene = dir.join("two.json");
    std::fs::write(
        &scene,
        r#"{
            "schema_version": 1,
            "tet_mesh": "two",
            "proxy": {"sphere": {"radius": 0.1, "subdivisions": 0}},
            "material": {"young_modulus": 1e4, "poisson_ratio": 0.3},
            "contact": {"k_vf": 1.0, "k_ee": 1.0},
            "kernel": {"k1": 1.0, "k2": 5.0, "radius": 0.3}
        }"#,
    )
    .unwrap();
    scene
}
