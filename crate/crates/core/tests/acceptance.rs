//! One line per acceptance criterion. Exits nonzero when any fails.
//!
//! cargo test -p porosim --test acceptance

mod common;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{
    damping_formula, ee_sampling_oracle, fd_gradient, impulse_oracle, random_ee, random_ee_event, random_vf,
    random_vf_event, vf_sampling_oracle,
};
use porosim::collision::{ccd_edge_edge, ccd_vertex_face};
use porosim::fem::{damping_weight, FemBody, SimParams};
use porosim::haptics::{
    apply_tool_step, penalty_impulse, run_haptic_loop, ForceMailbox, ForceSample, HapticLoopConfig, KernelShape, Pose,
    ToolMode, ToolProxy,
};
use porosim::material::{bounds_check, iso_to_stiffness, IsotropicElasticParams, Mixture, MixtureParams};
use porosim::mesh::generate::{box_tet_mesh, icosphere};
use porosim::session::{load_scene, run_replay, write_force_csv, ReplayOptions, SceneConfig, Session, ToolPathScript};
use porosim::wetting::{diffuse_step, DiffusionParams, SaturationField, TetAdjacency};
use porosim::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn solid() -> IsotropicElasticParams {
    IsotropicElasticParams::new(1e4, 0.4).unwrap()
}

fn mixture() -> Mixture {
    Mixture::new(
        solid(),
        MixtureParams {
            water_bulk_modulus: 2.2e9,
            ..MixtureParams::default()
        },
    )
    .unwrap()
}

fn elasticity_bounds() -> Outcome {
    let start = Instant::now();
    let m = mixture();
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..=9 {
        let phi = i as f64 / 10.0;
        let checked = m
            .effective_stiffness(phi)
            .and_then(|c| bounds_check(&c, &m.voigt(phi)?, &m.reuss(phi)?, 1e-8));
        match checked {
            Ok(r) if r.within => {}
            Ok(r) => {
                worst = worst.min(r.upper_margin.min(r.lower_margin) / m.voigt(phi).unwrap().norm());
                failed.push(format!(
                    "{phi:.1} (upper {:.3e}, lower {:.3e})",
                    r.upper_margin, r.lower_margin
                ));
            }
            Err(e) => failed.push(format!("{phi:.1} ({e})")),
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && elapsed < 1.0;
    let detail = if failed.is_empty() {
        format!("all 10 fractions inside, {elapsed:.3} s")
    } else {
        format!(
            "outside at φ = {}; worst relative margin {worst:.3e}; admissible limit {:.4}; {elapsed:.3} s",
            failed.join(", "),
            m.admissible_phi_limit()
        )
    };
    outcome(pass, detail)
}

fn compliance_identity() -> Outcome {
    let m = mixture();
    let s = m.effective_compliance(0.0).unwrap();
    let rel = (s.matrix - m.solid_compliance.matrix).norm() / m.solid_compliance.matrix.norm();
    outcome(rel < 1e-12, format!("relative difference {rel:.3e} (limit 1e-12)"))
}

fn diffusion_conservation() -> Outcome {
    let start = Instant::now();
    let mesh = box_tet_mesh(Vec3::new(0.07, 0.04, 0.03), [7, 4, 3]).unwrap();
    let adjacency = TetAdjacency::from_mesh(&mesh);
    let mut field = SaturationField::for_mesh(&mesh, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in &mut field.saturation {
        *s = rng.random_range(0.0..=1.0);
    }
    let diffusivity = 1e-4;
    let params = DiffusionParams {
        diffusivity,
        dt: 0.9 * adjacency.max_stable_dt(&field.volumes, diffusivity),
        delta_s: 0.05,
    };
    let m0 = field.total_water_mass();
    let mut in_range = true;
    for _ in 0..1000 {
        diffuse_step(&mut field, &adjacency, &params).unwrap();
        in_range &= field.saturation.iter().all(|s| (0.0..=1.0).contains(s));
    }
    let rel = (field.total_water_mass() - m0).abs() / m0;
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        rel < 1e-10 && in_range && elapsed < 5.0,
        format!(
            "{} tets, relative mass change {rel:.3e} (limit 1e-10), saturations in [0,1]: {in_range}, {elapsed:.3} s",
            mesh.tet_count()
        ),
    )
}

fn ccd_against_sampling() -> Outcome {
    const CASES: usize = 2000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut missed, mut spurious, mut worst_dt, mut vf_hits, mut ee_hits) = (0, 0, 0.0f64, 0, 0);
    let mut compare = |oracle: &[f64], times: &[f64], interior: &[bool]| {
        for t in oracle {
            match times.iter().map(|s| (s - t).abs()).min_by(f64::total_cmp) {
                Some(d) if d <= 1e-4 => worst_dt = worst_dt.max(d),
                _ => missed += 1,
            }
        }
        for (t, inner) in times.iter().zip(interior) {
            if *inner && !oracle.iter().any(|s| (s - t).abs() <= 1e-4) {
                spurious += 1;
            }
        }
    };
    for _ in 0..CASES {
        let (v, f) = random_vf(&mut rng);
        let oracle = vf_sampling_oracle(&v, &f, 10_000, 1e-6);
        let got = ccd_vertex_face(&v, &f);
        let times: Vec<f64> = got.contacts.iter().map(|c| c.t).collect();
        let interior: Vec<bool> = got
            .contacts
            .iter()
            .map(|c| c.weights.iter().all(|w| *w > 1e-3))
            .collect();
        compare(&oracle, &times, &interior);
        vf_hits += usize::from(!oracle.is_empty());

        let (a, b) = random_ee(&mut rng);
        let oracle = ee_sampling_oracle(&a, &b, 10_000, 1e-6);
        let got = ccd_edge_edge(&a, &b);
        let times: Vec<f64> = got.contacts.iter().map(|c| c.t).collect();
        let interior: Vec<bool> = got
            .contacts
            .iter()
            .map(|c| !c.parallel && c.weights_first.iter().chain(&c.weights_second).all(|w| *w > 1e-3))
            .collect();
        compare(&oracle, &times, &interior);
        ee_hits += usize::from(!oracle.is_empty());
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        missed == 0 && spurious == 0 && elapsed < 60.0,
        format!(
            "{CASES} VF ({vf_hits} colliding) + {CASES} EE ({ee_hits} colliding): {missed} missed, {spurious} spurious, worst time error {worst_dt:.2e} (limit 1e-4), {elapsed:.2} s"
        ),
    )
}

fn penalty_against_quadrature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut events = Vec::new();
    while events.len() < 600 {
        let e = if events.len() % 2 == 0 {
            random_vf_event(&mut rng, 0.05)
        } else {
            random_ee_event(&mut rng, 0.05)
        };
        events.extend(e);
    }
    let worst = events
        .iter()
        .map(|e| {
            let want = impulse_oracle(e, 1.0);
            (penalty_impulse(e, 1.0) - want).norm() / want.norm().max(1e-300)
        })
        .fold(0.0, f64::max);
    let (v, t) = icosphere(0.1, 0);
    let mut proxy = ToolProxy::new(
        v,
        t,
        2.0,
        3.0,
        KernelShape {
            k1: 1.0,
            k2: 5.0,
            radius: 0.1,
        },
    )
    .unwrap();
    let mut exact = true;
    for mode in [ToolMode::Push, ToolMode::Pull, ToolMode::Wet, ToolMode::Dry] {
        proxy.mode = mode;
        for chunk in events.chunks(37) {
            let r = apply_tool_step(&proxy, chunk, 1e-3, 3);
            exact &= r.proxy_impulse + r.total_object_impulse() == Vec3::zeros();
        }
    }
    outcome(
        worst <= 1e-6 && exact,
        format!(
            "{} trajectories, worst relative error {worst:.3e} (limit 1e-6), action + reaction exactly zero: {exact}",
            events.len()
        ),
    )
}

fn cantilever_tip(cells: [usize; 3]) -> f64 {
    let mesh = box_tet_mesh(Vec3::new(5.0, 1.0, 1.0), cells).unwrap();
    let n = mesh.vertex_count();
    let fixed: Vec<usize> = (0..n).filter(|&i| mesh.rest_positions[i].x == 0.0).collect();
    let tip: Vec<usize> = (0..n).filter(|&i| mesh.rest_positions[i].x == 5.0).collect();
    // Consistent load of a uniform end traction: a third of each end
    // triangle's area goes to each of its corners.
    let mut load = vec![Vec3::zeros(); n];
    let mut area = 0.0;
    for f in &mesh.boundary_faces {
        if f.iter().all(|i| mesh.rest_positions[*i].x == 5.0) {
            let [a, b, c] = f.map(|i| mesh.rest_positions[i]);
            let share = 0.5 * (b - a).cross(&(c - a)).norm() / 3.0;
            area += 3.0 * share;
            for i in f {
                load[*i].z -= share;
            }
        }
    }
    let c = iso_to_stiffness(&solid()).unwrap().matrix;
    let body = FemBody::new(
        mesh,
        SimParams {
            fixed,
            ..SimParams::default()
        },
        c,
    )
    .unwrap();
    let (u, _) = body.static_solve(&load, 1e-10, 20_000).unwrap();
    debug_assert!((area - 1.0).abs() < 1e-12);
    tip.iter().map(|&i| u[i].z).sum::<f64>() / tip.len() as f64
}

fn fem_sanity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let cells = [
            rng.random_range(1..=3),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
        ];
        let size = Vec3::new(
            rng.random_range(0.5..2.0),
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
        );
        let mesh = box_tet_mesh(size, cells).unwrap();
        let e = rng.random_range(1e3..1e6);
        let nu = rng.random_range(0.0..0.45);
        let c = iso_to_stiffness(&IsotropicElasticParams::new(e, nu).unwrap())
            .unwrap()
            .matrix;
        let mut body = FemBody::new(mesh, SimParams::default(), c).unwrap();
        let u: Vec<Vec3> = (0..body.vertex_count())
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                )
            })
            .collect();
        body.state.displacement = u.clone();
        let f = body.internal_forces();
        let mut probe = body.clone();
        let fd = fd_gradient(
            |x| {
                probe.state.displacement.copy_from_slice(x);
                probe.elastic_energy()
            },
            &u,
            1e-7,
        );
        let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = f.iter().zip(&fd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    let coarse = cantilever_tip([10, 2, 2]);
    let fine = cantilever_tip([40, 8, 8]);
    let gap = (coarse - fine).abs() / fine.abs();
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && gap <= 0.05,
        format!(
            "worst gradient error {worst:.3e} (limit 1e-5); tip deflection coarse {coarse:.5e} vs fine {fine:.5e}, gap {:.2}% (limit 5%), {elapsed:.1} s",
            gap * 100.0
        ),
    )
}

fn bar_run(initial_saturation: f64) -> (f64, f64) {
    let mut scene = SceneConfig::from_path(&scenes().join("bar.json")).unwrap();
    scene.wetting.initial_saturation = initial_saturation;
    let mut session = Session::from_config(scene, &scenes()).unwrap();
    let script = ToolPathScript::from_path(&scenes().join("push_bar.json")).unwrap();
    let out = run_replay(&mut session, &script, &ReplayOptions::default()).unwrap();
    (out.summary.peak_force, out.summary.peak_indentation)
}

fn wet_versus_dry() -> Outcome {
    let start = Instant::now();
    let (dry_force, dry_depth) = bar_run(0.0);
    let (wet_force, wet_depth) = bar_run(1.0);
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        wet_force < dry_force && wet_depth > dry_depth && elapsed < 60.0,
        format!(
            "peak force dry {dry_force:.4e} N, wet {wet_force:.4e} N; peak indentation dry {dry_depth:.4e} m, wet {wet_depth:.4e} m; {elapsed:.1} s"
        ),
    )
}

fn damping_kernel() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for (k1, k2, radius) in [(1.0, 5.0, 0.03), (10.0, 2.0, 0.5), (0.5, 20.0, 0.1), (0.0, 1.0, 1.0)] {
        for r in [0.0, 0.5 * radius, 2.0 * radius] {
            worst = worst.max((damping_weight(r, k1, k2, radius) - damping_formula(r, k1, k2, radius)).abs());
        }
        let grid: Vec<f64> = (0..=400).map(|i| 3.0 * radius * i as f64 / 400.0).collect();
        for w in grid.windows(2) {
            if (w[0] < radius) == (w[1] < radius) {
                monotone &= damping_weight(w[1], k1, k2, radius) <= damping_weight(w[0], k1, k2, radius);
            }
        }
    }
    outcome(
        worst <= 1e-12 && monotone,
        format!("worst deviation {worst:.3e} (limit 1e-12), non-increasing within each branch: {monotone}"),
    )
}

/// Hypervisor steal time in seconds, when the kernel reports it.
fn steal_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/stat").ok()?;
    let ticks: f64 = stat.lines().next()?.split_whitespace().nth(8)?.parse().ok()?;
    Some(ticks / 100.0)
}

fn multi_rate() -> Outcome {
    let mut session = load_scene(&scenes().join("bar.json")).unwrap();
    let script = ToolPathScript::from_path(&scenes().join("push_bar.json")).unwrap();
    let out = run_replay(&mut session, &script, &ReplayOptions::default()).unwrap();
    let mean_ms = out.summary.mean_step_ms;
    let tets = out.summary.tet_count;

    // The simulation thread steps the same scene at 100 Hz and publishes each
    // force with a checksum the haptic thread verifies.
    let mailbox = Arc::new(ForceMailbox::new());
    let stop = Arc::new(AtomicBool::new(false));
    let publisher = {
        let mailbox = Arc::clone(&mailbox);
        let stop = Arc::clone(&stop);
        let mut session = load_scene(&scenes().join("bar.json")).unwrap();
        std::thread::spawn(move || {
            let start = Instant::now();
            let mut k = 0u32;
            while !stop.load(Ordering::Relaxed) {
                let t = (k % 450) as f64 * 1e-3;
                let pose = script.sample(t).unwrap_or((Pose::default(), ToolMode::Push));
                let rec = session.step(Some(pose)).unwrap();
                let force = Vec3::new(rec.fx, rec.fy, rec.fz + k as f64);
                mailbox.publish(ForceSample {
                    timestamp: rec.time_s,
                    force,
                    torque: Vec3::new(force.x + force.y + force.z, 2.0 * rec.time_s, k as f64),
                });
                k += 1;
                let next = start + Duration::from_millis(10) * k;
                if let Some(wait) = next.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
            k
        })
    };
    let steal_before = steal_seconds();
    let haptic = {
        let mailbox = Arc::clone(&mailbox);
        std::thread::spawn(move || {
            let config = HapticLoopConfig {
                duration: Duration::from_secs(10),
                spin_window: Duration::from_micros(50),
                realtime_priority: Some(80),
                ..HapticLoopConfig::default()
            };
            run_haptic_loop(&mailbox, &config, &AtomicBool::new(false), |_, _, s| {
                s.torque.x == s.force.x + s.force.y + s.force.z && s.torque.y == 2.0 * s.timestamp
            })
        })
    };
    let report = haptic.join().unwrap();
    let steal = match (steal_before, steal_seconds()) {
        (Some(a), Some(b)) => format!("{:.2} s", b - a),
        _ => "unknown".into(),
    };
    stop.store(true, Ordering::Relaxed);
    let published = publisher.join().unwrap();
    let per_second = &report.on_time_per_second;
    let least = per_second.iter().copied().min().unwrap_or(0);
    let pass = mean_ms < 14.0 && per_second.len() == 10 && least >= 995 && report.torn_reads == 0;
    outcome(
        pass,
        format!(
            "{tets} tets, mean step {mean_ms:.2} ms (limit 14 ms); haptic on-time ticks per second {per_second:?} (each ≥ 995), {} torn reads, {published} samples published, real-time scheduling {}, hypervisor steal {steal}",
            report.torn_reads, report.realtime
        ),
    )
}

fn replay_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let script = ToolPathScript::from_path(&scenes().join("push_blob.json")).unwrap();
    let mut runs = Vec::new();
    for i in 0..2 {
        let mut session = load_scene(&scenes().join("blob.json")).unwrap();
        let out = run_replay(&mut session, &script, &ReplayOptions::default()).unwrap();
        let path = dir.path().join(format!("force{i}.csv"));
        write_force_csv(&path, &out.force_rows).unwrap();
        let bits: Vec<[u64; 3]> = session
            .surface
            .vertices
            .iter()
            .map(|v| [v.x, v.y, v.z].map(f64::to_bits))
            .collect();
        runs.push((std::fs::read(&path).unwrap(), bits, out.force_rows.len()));
    }
    let same_csv = runs[0].0 == runs[1].0;
    let same_positions = runs[0].1 == runs[1].1;
    outcome(
        same_csv && same_positions,
        format!(
            "blob scene, {} force rows: CSV identical {same_csv}, {} final vertices identical {same_positions}",
            runs[0].2,
            runs[0].1.len()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("elasticity bounds", elasticity_bounds),
        ("compliance identity at zero fluid fraction", compliance_identity),
        ("diffusion conservation", diffusion_conservation),
        ("continuous collision vs sampling oracle", ccd_against_sampling),
        ("penalty impulse vs adaptive quadrature", penalty_against_quadrature),
        ("finite element sanity", fem_sanity),
        ("wet versus dry push", wet_versus_dry),
        ("damping kernel", damping_kernel),
        ("multi-rate contract", multi_rate),
        ("replay determinism", replay_determinism),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let o = run();
        failures += usize::from(!o.pass);
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
