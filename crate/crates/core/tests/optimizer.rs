mod common;

use common::*;
use leadfollow::control::{RunningCost, RunningCostFamily};
use leadfollow::dynamics::TimeGrid;
use leadfollow::kernels::Kernel;
use leadfollow::sparse_optimizer::{
    brute_force_solve, lattice_gap_bound, objective, prox_l1_ball, smooth_gradient, smooth_objective, solve,
    OptimalControlProblem, OptimizerSettings,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_problem(r: &mut ChaCha8Rng, m: usize, n: usize, cells: usize, gamma: f64) -> OptimalControlProblem {
    let dim = r.random_range(1..=2);
    let kernel = if r.random::<bool>() {
        Kernel::cucker_smale(dim, 1.0, 1.0, 0.5, -1.0).unwrap()
    } else {
        Kernel::repulsion_attraction(dim, 0.05, 1.0, 0.5).unwrap()
    };
    let cost = if r.random::<bool>() {
        RunningCost::velocity_consensus(gamma).unwrap()
    } else {
        RunningCost::new(
            RunningCostFamily::LeaderTracking {
                target_y: uniform_in(r, dim, 1.0),
                target_w: vec![0.0; dim],
            },
            gamma,
        )
        .unwrap()
    };
    let c0 = configuration(r, dim, m, n, 1.0);
    OptimalControlProblem::new(c0, kernel, cost, TimeGrid::new(1.0, 4 * cells, cells).unwrap(), 1.0).unwrap()
}

#[test]
fn adjoint_gradient_matches_central_differences() {
    let mut r = rng(51);
    for case in 0..20 {
        let m = r.random_range(1..=2);
        let n = r.random_range(0..=16);
        let cells = r.random_range(1..=8);
        let p = random_problem(&mut r, m, n, cells, 1.0);
        let u = p.zero_control().with_values(uniform_in(&mut r, cells * m * p.dim(), 0.5)).unwrap();
        let g = smooth_gradient(&p, &u).unwrap();
        let h = 1e-5;
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..g.len() {
            let shift = |s: f64| {
                let mut v = u.values.clone();
                v[i] += s;
                smooth_objective(&p, &u.with_values(v).unwrap()).unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs());
            scale = scale.max(fd.abs());
        }
        assert!(worst <= 1e-6 * scale.max(1e-3), "case {case}: {worst} vs scale {scale}");
    }
}

#[test]
fn solve_keeps_iterates_admissible_and_objective_monotone() {
    let mut r = rng(52);
    for _ in 0..5 {
        let p = random_problem(&mut r, 2, 8, 4, 5.0).with_settings(OptimizerSettings {
            max_iters: 40,
            ..Default::default()
        });
        let p = p.unwrap();
        let u0 = p.zero_control().with_values(uniform_in(&mut r, 8 * p.dim(), 0.5)).unwrap();
        let rep = solve(&p, &u0, 1).unwrap();
        assert!(rep.control.is_admissible());
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
        assert!((rep.cost - objective(&p, &rep.control).unwrap()).abs() <= 1e-12 * (1.0 + rep.cost));
    }
}

#[test]
fn solve_reaches_the_lattice_optimum_within_the_gap_bound() {
    let mut r = rng(53);
    for case in 0..4 {
        let kernel = Kernel::cucker_smale(1, 1.0, 1.0, 0.5, -1.0).unwrap();
        let cost = RunningCost::new(
            RunningCostFamily::LeaderTracking {
                target_y: vec![0.5],
                target_w: vec![0.0],
            },
            4.0,
        )
        .unwrap();
        let c0 = configuration(&mut r, 1, 1, 4, 1.0);
        let p = OptimalControlProblem::new(c0, kernel, cost, TimeGrid::new(1.0, 8, 2).unwrap(), 1.0).unwrap();
        let levels = 41;
        let lattice = brute_force_solve(&p, levels).unwrap();
        let gap = lattice_gap_bound(&p, levels, &lattice.control).unwrap();
        let rep = solve(&p, &p.zero_control(), 0).unwrap();
        assert!(rep.cost <= lattice.cost + gap, "case {case}: {} > {} + {gap}", rep.cost, lattice.cost);
    }
}

#[test]
fn zero_weight_gives_the_zero_control() {
    let mut r = rng(54);
    let p = random_problem(&mut r, 2, 6, 3, 0.0);
    let u0 = p.zero_control().with_values(uniform_in(&mut r, 6 * p.dim(), 0.5)).unwrap();
    let rep = solve(&p, &u0, 0).unwrap();
    assert_eq!(rep.cost, 0.0);
    assert!(rep.control.values.iter().all(|x| x.to_bits() == 0));
    assert_eq!(rep.sparsity_fraction, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_zeroes_small_blocks_and_shrinks_the_rest(
        v in prop::collection::vec(-3.0..3.0f64, 1..=3),
        tau in 0.0..2.0f64,
        radius in 0.1..2.0f64,
    ) {
        let out = prox_l1_ball(&v, tau, radius);
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let r = norm(&v);
        if r <= tau {
            prop_assert!(out.iter().all(|x| x.to_bits() == 0));
        } else {
            let expect = (r - tau).min(radius);
            prop_assert!((norm(&out) - expect).abs() <= 1e-12);
            for (a, b) in out.iter().zip(&v) {
                prop_assert!((a * r - b * norm(&out)).abs() <= 1e-12);
            }
        }
        prop_assert!(norm(&out) <= radius * (1.0 + 1e-15));
    }

    #[test]
    fn gradient_below_threshold_leaves_a_zero_cell_at_zero(
        g in prop::collection::vec(-1.0..1.0f64, 2),
        step in 0.01..1.0f64,
    ) {
        // From u = 0 one step maps -step * g to zero exactly when
        // step |g| <= step * dt / m, i.e. |g| <= dt / m.
        let (dt, m) = (0.25, 2.0);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        let trial: Vec<f64> = g.iter().map(|x| -step * x).collect();
        let out = prox_l1_ball(&trial, step * dt / m, 1.0);
        prop_assume!((gn - dt / m).abs() > 1e-9);
        prop_assert_eq!(out.iter().all(|x| *x == 0.0), gn < dt / m);
    }
}

#[test]
fn lattice_search_refuses_oversized_problems() {
    let mut r = rng(55);
    let p = random_problem(&mut r, 2, 2, 8, 1.0);
    assert!(brute_force_solve(&p, 11).is_err());
}
