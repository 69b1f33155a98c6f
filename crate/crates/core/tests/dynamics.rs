mod common;

use common::*;
use leadfollow::control::ControlSignal;
use leadfollow::dynamics::{envelopes, integrate, TimeGrid, Trajectory};
use leadfollow::kernels::{convolve_empirical, Kernel};
use leadfollow::measures::{config_norm, x_metric, Configuration};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_kernel(r: &mut ChaCha8Rng, dim: usize) -> Kernel {
    match r.random_range(0..4) {
        0 => Kernel::cucker_smale(dim, 0.5 + r.random::<f64>(), 0.5 + r.random::<f64>(), r.random::<f64>(), -1.0).unwrap(),
        1 => Kernel::cucker_smale(dim, 0.5 + r.random::<f64>(), 1.0, 0.5, 1.0).unwrap(),
        2 => Kernel::repulsion_attraction(dim, 0.05, 1.0, 0.5).unwrap(),
        _ => Kernel::table(dim, vec![0.0, 1.0, 2.0], vec![-1.0, -0.3, 0.2]).unwrap(),
    }
}

/// Random control with every block inside `B(0, U)`.
fn random_control(r: &mut ChaCha8Rng, cells: usize, m: usize, dim: usize, horizon: f64, radius: f64) -> ControlSignal {
    let mut values = Vec::with_capacity(cells * m * dim);
    for _ in 0..cells * m {
        let v = uniform_in(r, dim, 1.0);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        let scale = radius * r.random::<f64>() / norm;
        values.extend(v.iter().map(|x| x * scale));
    }
    ControlSignal::new(cells, m, dim, horizon, radius, values).unwrap()
}

#[test]
fn two_leaders_align_exponentially() {
    // With a = 1 and weights 1/2 each, w1 - w2 obeys d/dt (w1 - w2) = -(w1 - w2).
    let kernel = Kernel::cucker_smale(1, 1.0, 1.0, 0.0, -1.0).unwrap();
    let w0 = 0.8;
    let c0 = Configuration::new(1, vec![0.0, w0, 1.0, 0.0], vec![]).unwrap();
    let grid = TimeGrid::new(1.0, 1000, 1).unwrap();
    let u = ControlSignal::zeros(1, 2, 1, 1.0, 1.0).unwrap();
    let traj = integrate(&c0, &u, &kernel, &grid).unwrap();
    let end = traj.final_state();
    let rel = end.leader(0)[1] - end.leader(1)[1];
    assert!((rel - w0 * (-1.0f64).exp()).abs() <= 1e-9);
}

#[test]
fn trajectories_stay_inside_the_growth_envelope() {
    let mut r = rng(31);
    for case in 0..100 {
        let dim = r.random_range(1..=2);
        let m = r.random_range(1..=3);
        let n = r.random_range(0..=64);
        let horizon = 0.5 + 1.5 * r.random::<f64>();
        let cells = r.random_range(1..=4);
        let radius = 0.5 + r.random::<f64>();
        let kernel = random_kernel(&mut r, dim);
        let c0 = configuration(&mut r, dim, m, n, 2.0);
        let u = random_control(&mut r, cells, m, dim, horizon, radius);
        let grid = TimeGrid::new(horizon, 40, cells).unwrap();
        let traj = integrate(&c0, &u, &kernel, &grid).unwrap();
        let env = envelopes(&c0, &kernel, radius, horizon);
        let peak = traj.states.iter().map(config_norm).fold(0.0, f64::max);
        assert!(peak <= env.growth_bound, "case {case}: {peak} > {}", env.growth_bound);
        // Time-Lipschitz envelope between every pair of grid instants.
        for i in 0..traj.states.len() {
            for j in (i + 1..traj.states.len()).step_by(7) {
                let gap = config_norm(&traj.states[j].difference(&traj.states[i]).unwrap());
                let dt = traj.times[j] - traj.times[i];
                assert!(gap <= env.lipschitz_bound * dt + 1e-9, "case {case}");
            }
        }
    }
}

fn end_state(c0: &Configuration, u: &ControlSignal, kernel: &Kernel, horizon: f64, steps: usize) -> Configuration {
    let grid = TimeGrid::new(horizon, steps, u.n_cells).unwrap();
    integrate(c0, u, kernel, &grid).unwrap().final_state().clone()
}

#[test]
fn halving_the_step_shrinks_the_error_like_rk4() {
    let mut r = rng(32);
    for _ in 0..5 {
        let kernel = Kernel::cucker_smale(2, 1.0, 1.0, 0.5, -1.0).unwrap();
        let c0 = configuration(&mut r, 2, 2, 16, 1.0);
        let u = random_control(&mut r, 4, 2, 2, 2.0, 1.0);
        let a = end_state(&c0, &u, &kernel, 2.0, 8);
        let b = end_state(&c0, &u, &kernel, 2.0, 16);
        let c = end_state(&c0, &u, &kernel, 2.0, 32);
        let e1 = config_norm(&a.difference(&b).unwrap());
        let e2 = config_norm(&b.difference(&c).unwrap());
        assert!(e1 >= 8.0 * e2, "ratio {}", e1 / e2);
    }
}

#[test]
fn relabelling_followers_relabels_the_trajectory() {
    let mut r = rng(33);
    for _ in 0..5 {
        let kernel = random_kernel(&mut r, 2);
        let n = r.random_range(2..=80);
        let c0 = configuration(&mut r, 2, 2, n, 1.0);
        let perm = shuffled(&mut r, n);
        let u = random_control(&mut r, 3, 2, 2, 1.0, 1.0);
        let grid = TimeGrid::new(1.0, 12, 3).unwrap();
        let a = integrate(&c0, &u, &kernel, &grid).unwrap();
        let b = integrate(&c0.permute_followers(&perm), &u, &kernel, &grid).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            let expect = sa.permute_followers(&perm);
            let bits = |c: &Configuration| c.leaders().iter().chain(c.followers()).map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&expect), bits(sb));
        }
    }
}

fn support_half_width(traj: &Trajectory) -> f64 {
    traj.states
        .iter()
        .flat_map(|s| s.leaders().iter().chain(s.followers()))
        .fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Test particle pushed by the recorded background, with the background
/// interpolated linearly between grid nodes.
fn test_particle(kernel: &Kernel, traj: &Trajectory, p0: &[f64]) -> Vec<Vec<f64>> {
    let d = kernel.dim;
    let field = |bg: &Configuration, p: &[f64]| -> Vec<f64> {
        let mut f = p[d..].to_vec();
        let a = convolve_empirical(kernel, &bg.followers_as_measure().unwrap(), p).unwrap();
        let b = convolve_empirical(kernel, &bg.leaders_as_measure().unwrap(), p).unwrap();
        f.extend(a.iter().zip(&b).map(|(x, y)| x + y));
        f
    };
    let add = |p: &[f64], k: &[f64], s: f64| p.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let mut out = vec![p0.to_vec()];
    let mut p = p0.to_vec();
    for k in 0..traj.states.len() - 1 {
        let h = traj.times[k + 1] - traj.times[k];
        let (s0, s1) = (&traj.states[k], &traj.states[k + 1]);
        let avg: Vec<f64> = s0.followers().iter().zip(s1.followers()).map(|(a, b)| 0.5 * (a + b)).collect();
        let lavg: Vec<f64> = s0.leaders().iter().zip(s1.leaders()).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid = Configuration::new(s0.dim(), lavg, avg).unwrap();
        let k1 = field(s0, &p);
        let k2 = field(&mid, &add(&p, &k1, 0.5 * h));
        let k3 = field(&mid, &add(&p, &k2, 0.5 * h));
        let k4 = field(s1, &add(&p, &k3, h));
        p = p
            .iter()
            .enumerate()
            .map(|(i, x)| x + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        out.push(p.clone());
    }
    out
}

#[test]
fn nearby_test_particles_separate_at_most_exponentially() {
    // |dP/dt| differs by at most (1 + 2 Lip(H)) |P1 - P2|: the velocity
    // block moves the position, and the two unit-mass populations each add
    // Lip(H).
    let mut r = rng(34);
    for _ in 0..5 {
        let kernel = Kernel::cucker_smale(2, 1.0, 1.0, 0.5, -1.0).unwrap();
        let c0 = configuration(&mut r, 2, 2, 24, 1.0);
        let u = random_control(&mut r, 4, 2, 2, 2.0, 1.0);
        let traj = integrate(&c0, &u, &kernel, &TimeGrid::new(2.0, 80, 4).unwrap()).unwrap();
        let p1 = uniform_in(&mut r, 4, 1.0);
        let dir = uniform_in(&mut r, 4, 1.0);
        let delta = 1e-4;
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p2: Vec<f64> = p1.iter().zip(&dir).map(|(a, b)| a + delta * b / norm).collect();
        let a = test_particle(&kernel, &traj, &p1);
        let b = test_particle(&kernel, &traj, &p2);
        let reach = a.iter().chain(&b).flatten().fold(support_half_width(&traj), |m, x| m.max(x.abs()));
        let lip = kernel.estimate_lipschitz(2.0 * reach, 4096, 3);
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            let bound = ((1.0 + 2.0 * lip) * traj.times[k]).exp() * delta;
            assert!(euclid(x, y) <= 1.1 * bound);
        }
    }
}

#[test]
fn perturbed_runs_stay_within_the_gronwall_envelope() {
    let mut r = rng(35);
    for _ in 0..5 {
        let kernel = Kernel::cucker_smale(2, 1.0, 1.0, 0.5, -1.0).unwrap();
        let c0 = configuration(&mut r, 2, 2, 24, 1.0);
        let shift = uniform_in(&mut r, 4, 1e-4);
        let moved: Vec<f64> = c0.followers().chunks_exact(4).flat_map(|p| p.iter().zip(&shift).map(|(a, b)| a + b)).collect();
        let mut leaders = c0.leaders().to_vec();
        leaders[0] += 1e-4;
        let c1 = Configuration::new(2, leaders, moved).unwrap();
        let u = random_control(&mut r, 4, 2, 2, 2.0, 1.0);
        let grid = TimeGrid::new(2.0, 40, 4).unwrap();
        let a = integrate(&c0, &u, &kernel, &grid).unwrap();
        let b = integrate(&c1, &u, &kernel, &grid).unwrap();
        let reach = support_half_width(&a).max(support_half_width(&b));
        let l_hat = 1.0 + 4.0 * kernel.estimate_lipschitz(2.0 * reach, 4096, 4);
        let x0 = x_metric(&c0.phase_state().unwrap(), &c1.phase_state().unwrap()).unwrap();
        for (k, (sa, sb)) in a.states.iter().zip(&b.states).enumerate() {
            let x = x_metric(&sa.phase_state().unwrap(), &sb.phase_state().unwrap()).unwrap();
            assert!(x <= 1.1 * (l_hat * a.times[k]).exp() * x0);
        }
    }
}
