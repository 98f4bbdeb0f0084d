use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use setrend_core::control::{control_fixed, spread_diagnostic, LawRegistry};
use setrend_core::convex::Region;
use setrend_core::dynamics::{coriolis_matrix, mass_matrix, AgentState, ManipulatorParams, Vec2};
use setrend_core::graph::{is_uniformly_jointly_connected, laplacian, GraphSchedule, WeightedGraph};
use setrend_core::metrics::{lyapunov_fixed, lyapunov_switching};
use setrend_core::ControllerConfig;

fn point() -> impl Strategy<Value = [f64; 2]> {
    [-10.0..10.0f64, -10.0..10.0f64]
}

fn region() -> impl Strategy<Value = Region> {
    prop_oneof![
        (point(), 0.1..5.0f64).prop_map(|(c, r)| Region::ball(c.to_vec(), r)),
        (point(), 0.0..6.0f64, 0.0..6.0f64)
            .prop_map(|(lo, w, h)| Region::aabb(lo.to_vec(), vec![lo[0] + w, lo[1] + h])),
    ]
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Undirected graph on `n` nodes from an edge mask over pairs `i < j`.
fn graph(n: usize, mask: &[bool], weights: &[f64]) -> WeightedGraph {
    let mut edges = Vec::new();
    let mut e = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if mask[e] {
                edges.push((i + 1, j + 1, weights[e]));
            }
            e += 1;
        }
    }
    WeightedGraph::from_edges(n, &edges).unwrap()
}

fn random_graph(max_n: usize) -> impl Strategy<Value = WeightedGraph> {
    (1..=max_n).prop_flat_map(|n| {
        let m = n * (n - 1) / 2;
        (Just(n), prop::collection::vec(prop::bool::weighted(0.3), m), prop::collection::vec(0.1..3.0f64, m))
            .prop_map(|(n, mask, w)| graph(n, &mask, &w))
    })
}

fn states(n: usize) -> impl Strategy<Value = Vec<AgentState>> {
    prop::collection::vec((point(), point()).prop_map(|(q, v)| AgentState::new(q, v)), n)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_lands_in_set_and_is_idempotent(r in region(), x in point()) {
        let p = r.project(&x).unwrap().point;
        prop_assert!(r.distance(&p).unwrap() <= 1e-9);
        let pp = r.project(&p).unwrap().point;
        prop_assert!(norm(&sub(&p, &pp)) <= 1e-12);
        if r.contains(&x, 0.0).unwrap() {
            prop_assert!(norm(&sub(&p, &x)) <= 1e-12);
        }
    }

    #[test]
    fn projection_is_nonexpansive(r in region(), x in point(), y in point()) {
        let px = r.project(&x).unwrap().point;
        let py = r.project(&y).unwrap().point;
        prop_assert!(norm(&sub(&px, &py)) <= norm(&sub(&x, &y)) + 1e-12);
    }

    #[test]
    fn projection_inequality(r in region(), x in point(), z in point()) {
        let y = r.project(&z).unwrap().point;
        let p = r.project(&x).unwrap().point;
        let v: f64 = p.iter().zip(&x).zip(&y).map(|((pi, xi), yi)| (pi - xi) * (pi - yi)).sum();
        prop_assert!(v <= 1e-9);
    }

    #[test]
    fn squared_distance_gradient_is_projection_error(r in region(), x in point()) {
        let f = |y: &[f64]| 0.5 * r.distance(y).unwrap().powi(2);
        let p = r.project(&x).unwrap().point;
        let h = 1e-6;
        for c in 0..2 {
            let mut a = x;
            let mut b = x;
            a[c] += h;
            b[c] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            prop_assert!((fd - (x[c] - p[c])).abs() <= 1e-5 * (1.0 + x[c].abs()));
        }
    }

    #[test]
    fn inertia_bounds_and_coriolis_norm(q in point(), qd in point()) {
        let p = ManipulatorParams::DEFAULT;
        let (q, qd) = (Vec2::from(q), Vec2::from(qd));
        let m = mass_matrix(&p, &q);
        prop_assert_eq!(m, m.transpose());
        // closed-form eigenvalues of a symmetric 2×2 matrix
        let (tr, det) = (m.trace(), m.determinant());
        let lo = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        let hi = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let upper = p.theta1 + 2.0 * p.theta2 + p.theta3;
        prop_assert!(lo > 0.0);
        prop_assert!(hi <= upper);
        let c = coriolis_matrix(&p, &q, &qd);
        prop_assert!(c.norm() <= 2.0 * p.theta2 * qd.norm() + 1e-12);
        // C(q, ·) is linear in the velocity
        let c2 = coriolis_matrix(&p, &q, &(2.0 * qd));
        prop_assert!((c2 - 2.0 * c).amax() <= 1e-12);
    }

    #[test]
    fn laplacian_psd_and_kernel_matches_components(g in random_graph(8)) {
        let l = laplacian(&g);
        let n = g.node_count();
        prop_assert!((&l - l.transpose()).amax() == 0.0);
        for i in 0..n {
            prop_assert!(l.row(i).sum().abs() <= 1e-12);
        }
        let eig = SymmetricEigen::new(l.clone()).eigenvalues;
        let scale = 1e-9 * (1.0 + l.amax());
        prop_assert!(eig.iter().all(|&x| x >= -scale));
        let zeros = eig.iter().filter(|x| x.abs() <= scale).count();
        prop_assert_eq!(zeros, g.component_count());
        // quadratic form identity xᵀLx = ½ΣΣ a_ij (x_i − x_j)²
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.7).sin());
        let quad = (x.transpose() * &l * &x)[(0, 0)];
        let mut direct = 0.0;
        for i in 0..n {
            for j in 0..n {
                direct += 0.5 * g.weight(i, j) * (x[i] - x[j]).powi(2);
            }
        }
        prop_assert!((quad - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn joint_connectivity_is_monotone_in_window(
        gs in prop::collection::vec(random_graph(5).prop_filter("five nodes", |g| g.node_count() == 5), 2..5),
        dwell in 1usize..3,
        t in 1usize..8,
    ) {
        let count = 12;
        let times: Vec<f64> = (0..count).map(|l| (l * dwell) as f64).collect();
        let indices: Vec<usize> = (0..count).map(|l| l % gs.len()).collect();
        let s = GraphSchedule::new(gs, times, indices, dwell as f64).unwrap();
        let horizon = (count * dwell) as f64;
        let small = t as f64;
        if small + 1.0 <= horizon && is_uniformly_jointly_connected(&s, horizon, small).unwrap() {
            for larger in [small + 1.0, 2.0 * small] {
                if larger <= horizon {
                    prop_assert!(is_uniformly_jointly_connected(&s, horizon, larger).unwrap());
                }
            }
        }
    }

    #[test]
    fn consensus_torques_cancel_on_shared_set(xs in states(6), mask in prop::collection::vec(any::<bool>(), 15)) {
        // every agent sits inside its set, so only damping and the coupling remain
        let g = graph(6, &mask, &[1.0; 15]);
        let regions = vec![Region::ball(vec![0.0, 0.0], 100.0); 6];
        let mut sum = Vec2::zeros();
        for i in 0..6 {
            sum += control_fixed(i, &xs, &regions[i], &g, 1.0).unwrap() + xs[i].qdot;
        }
        prop_assert!(sum.amax() <= 1e-9);
    }

    #[test]
    fn lyapunov_functions_are_nonnegative(xs in states(4), mask in prop::collection::vec(any::<bool>(), 6)) {
        let g = graph(4, &mask, &[1.0; 6]);
        let regions = vec![Region::aabb(vec![-1.0, -1.0], vec![2.0, 1.0]); 4];
        let params = vec![ManipulatorParams::DEFAULT; 4];
        prop_assert!(lyapunov_fixed(&xs, &regions, &g, &params).unwrap() >= 0.0);
        let q0 = Vec2::new(0.5, 0.0);
        prop_assert!(lyapunov_switching(&xs, &regions, 5.0, &q0).unwrap() >= 0.0);
    }

    #[test]
    fn spread_bounds_every_transformed_value(xs in states(5), mask in prop::collection::vec(any::<bool>(), 10), k in 0.5..8.0f64) {
        let g = graph(5, &mask, &[1.0; 10]);
        let regions = vec![Region::ball(vec![0.0, 0.0], 1.0); 5];
        let d = spread_diagnostic(&xs, &regions, &g, k).unwrap();
        for s in &xs {
            for x in [s.q, s.q + (2.0 / k) * s.qdot] {
                for c in 0..2 {
                    prop_assert!(d.ell[c] <= x[c] && x[c] <= d.hbar[c]);
                }
            }
        }
        prop_assert!(d.max_delta >= 0.0);
    }
}

#[test]
fn switching_lyapunov_positive_definite() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let regions = vec![Region::aabb(vec![-1.0, -1.0], vec![1.0, 1.0]); 3];
    let q0 = Vec2::new(0.2, -0.3);
    let at_anchor = vec![AgentState::new([0.2, -0.3], [0.0, 0.0]); 3];
    assert_eq!(lyapunov_switching(&at_anchor, &regions, 5.0, &q0).unwrap(), 0.0);
    for _ in 0..10_000 {
        let xs: Vec<AgentState> = (0..3)
            .map(|_| {
                AgentState::new(
                    [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                    [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                )
            })
            .collect();
        let v = lyapunov_switching(&xs, &regions, 5.0, &q0).unwrap();
        // ½|v|² + e·v + (k/2)|e|² ≥ c(|e|² + |v|²) with c the smallest
        // eigenvalue of [[k/2, 1/2], [1/2, 1/2]]
        let c = 0.5 * (3.0 - 5f64.sqrt());
        let energy: f64 = xs.iter().map(|s| (s.q - q0).norm_squared() + s.qdot.norm_squared()).sum();
        assert!(v >= c * energy - 1e-9, "V = {v}, lower bound {}", c * energy);
    }
}

#[test]
fn registry_names_every_builtin_law() {
    let r = LawRegistry::builtin();
    let mut names: Vec<&str> = r.names().collect();
    names.sort_unstable();
    assert_eq!(names, ["collision", "fixed", "switching"]);
    assert!(r.build(&ControllerConfig::new("nope", 1.0)).is_err());
}
