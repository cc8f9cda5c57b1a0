mod common;

use common::{impulse_oracle, random_ee_event, random_vf_event};
use porosim::collision::ContactEvent;
use porosim::haptics::{apply_tool_step, penalty_impulse, KernelShape, ToolMode, ToolProxy};
use porosim::mesh::generate::icosphere;
use porosim::Vec3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DEPTH_LIMIT: f64 = 0.05;

fn events(seed: u64, n: usize) -> Vec<ContactEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let e = if out.len() % 2 == 0 {
            random_vf_event(&mut rng, DEPTH_LIMIT)
        } else {
            random_ee_event(&mut rng, DEPTH_LIMIT)
        };
        out.extend(e);
    }
    out
}

fn proxy(mode: ToolMode) -> ToolProxy {
    let (v, t) = icosphere(0.1, 0);
    let mut p = ToolProxy::new(
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
    p.mode = mode;
    p
}

#[test]
fn gauss_legendre_matches_adaptive_simpson() {
    for (i, e) in events(21, 200).iter().enumerate() {
        let got = penalty_impulse(e, 1.0);
        let want = impulse_oracle(e, 1.0);
        let err = (got - want).norm();
        assert!(err <= 1e-6 * want.norm().max(1e-12), "event {i}: {got:?} vs {want:?}");
    }
}

#[test]
fn reaction_cancels_object_impulse_exactly() {
    let ev = events(22, 60);
    for mode in [ToolMode::Push, ToolMode::Pull, ToolMode::Wet, ToolMode::Dry] {
        let r = apply_tool_step(&proxy(mode), &ev, 1e-3, 3);
        assert_eq!(r.proxy_impulse + r.total_object_impulse(), Vec3::zeros());
        assert!(r.contact_count > 0);
    }
}

#[test]
fn wet_and_dry_leave_nodes_alone() {
    let ev = events(23, 10);
    for mode in [ToolMode::Wet, ToolMode::Dry] {
        let r = apply_tool_step(&proxy(mode), &ev, 1e-3, 3);
        assert!(r.nodal_impulses.iter().all(|i| *i == Vec3::zeros()));
        assert!(r.force != Vec3::zeros());
    }
}

#[test]
fn edge_pairs_use_their_own_stiffness() {
    let ev = events(24, 2);
    let ee = ev
        .iter()
        .find(|e| matches!(e.kind, porosim::collision::ContactKind::EdgeEdge))
        .unwrap();
    let r = apply_tool_step(&proxy(ToolMode::Push), std::slice::from_ref(ee), 1.0, 3);
    let want = penalty_impulse(ee, 3.0);
    assert!((r.total_object_impulse() - want).norm() <= 1e-14 * want.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn impulse_is_linear_in_stiffness(seed in 0u64..10_000, k in 1e-3f64..1e3) {
        let e = &events(seed, 1)[0];
        let unit = penalty_impulse(e, 1.0);
        let scaled = penalty_impulse(e, k);
        prop_assert!((scaled - unit * k).norm() <= 1e-12 * scaled.norm().max(1e-300));
    }

    #[test]
    fn penetrating_impulse_pushes_proxy_out(seed in 0u64..10_000) {
        // n points from object toward the proxy and depth is negative, so the
        // object is pushed along −n and the proxy along +n.
        let e = &events(seed, 1)[0];
        let i = penalty_impulse(e, 1.0);
        let mid = 0.5 * (e.intervals[0].t_a + e.intervals[0].t_b);
        let n = e.geometry.sample(mid).unwrap().normal;
        prop_assert!(i.dot(&n) <= 0.0);
    }
}
