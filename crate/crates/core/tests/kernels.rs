mod common;

use common::*;
use leadfollow::kernels::{convolve_empirical, estimate_growth_constant, Kernel, SampleBox};
use leadfollow::measures::{w1_distance, EmpiricalMeasure};
use proptest::prelude::*;

fn registered(dim: usize) -> Vec<Kernel> {
    vec![
        Kernel::cucker_smale_default(dim).unwrap(),
        Kernel::cucker_smale(dim, 2.0, 0.5, 1.0, 1.0).unwrap(),
        Kernel::cucker_smale(dim, 1.0, 1.0, 0.0, -1.0).unwrap(),
        Kernel::repulsion_attraction(dim, 1.0, 1.0, 1e-3).unwrap(),
        Kernel::repulsion_attraction(dim, 0.01, 2.0, 0.5).unwrap(),
        Kernel::zero(dim).unwrap(),
        Kernel::table(dim, vec![0.0, 1.0, 3.0], vec![-1.0, -0.5, 0.0]).unwrap(),
    ]
}

#[test]
fn every_registered_kernel_obeys_its_growth_bound() {
    for dim in 1..=3 {
        for (k, kernel) in registered(dim).into_iter().enumerate() {
            for radius in [0.01, 1.0, 10.0, 1e3] {
                let bx = SampleBox::cube(2 * dim, radius);
                let est = estimate_growth_constant(&kernel, &bx, 1000, 7 * k as u64 + dim as u64);
                assert!(est.is_ok(), "kernel {k} dim {dim} radius {radius}: {est:?}");
            }
        }
    }
}

#[test]
fn convolution_is_lipschitz_in_the_measure() {
    // |H * mu - H * nu| <= Lip(H) W1(mu, nu) at every query point, with the
    // modulus measured on the cube holding all query-minus-atom differences.
    let mut r = rng(21);
    let kernel = Kernel::cucker_smale(2, 1.0, 1.0, 0.5, -1.0).unwrap();
    let lip = kernel.estimate_lipschitz(2.0, 20_000, 5);
    for _ in 0..20 {
        let mu = uniform_measure(&mut r, 2, 12, 0.5);
        let nu = weighted_measure(&mut r, 2, 9, 0.5);
        let w = w1_distance(&mu, &nu).unwrap();
        let mut sup = 0.0_f64;
        for _ in 0..200 {
            let query = uniform_in(&mut r, 4, 1.5);
            let a = convolve_empirical(&kernel, &mu, &query).unwrap();
            let b = convolve_empirical(&kernel, &nu, &query).unwrap();
            sup = sup.max(euclid(&a, &b));
        }
        assert!(sup <= lip * w * (1.0 + 1e-9), "{sup} > {lip} * {w}");
    }
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 2 * dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cucker_smale_is_linear_in_velocity(
        p in point(2),
        alpha in -10.0..10.0f64,
        beta in 0.0..2.0f64,
    ) {
        let k = Kernel::cucker_smale(2, 1.5, 0.7, beta, -1.0).unwrap();
        let scaled: Vec<f64> = p[2..].iter().map(|v| alpha * v).collect();
        let h = k.eval(&p[..2], &p[2..]).unwrap();
        let hs = k.eval(&p[..2], &scaled).unwrap();
        for (a, b) in h.iter().zip(&hs) {
            prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn convolution_ignores_atom_order(
        atoms in prop::collection::vec(point(2), 1..24),
        query in point(2),
        seed in any::<u64>(),
    ) {
        let k = Kernel::repulsion_attraction(2, 0.5, 1.0, 1e-2).unwrap();
        let flat: Vec<f64> = atoms.concat();
        let mu = EmpiricalMeasure::uniform(2, flat).unwrap();
        let perm = shuffled(&mut rng(seed), atoms.len());
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| atoms[i].clone()).collect();
        let nu = EmpiricalMeasure::uniform(2, permuted).unwrap();
        let a = convolve_empirical(&k, &mu, &query).unwrap();
        let b = convolve_empirical(&k, &nu, &query).unwrap();
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn convolution_is_linear_in_the_measure(
        first in prop::collection::vec(point(1), 3),
        second in prop::collection::vec(point(1), 3),
        query in point(1),
    ) {
        let k = Kernel::cucker_smale_default(1).unwrap();
        let a = EmpiricalMeasure::uniform(1, first.concat()).unwrap();
        let b = EmpiricalMeasure::uniform(1, second.concat()).unwrap();
        let both = EmpiricalMeasure::uniform(1, [first.concat(), second.concat()].concat()).unwrap();
        let ca = convolve_empirical(&k, &a, &query).unwrap();
        let cb = convolve_empirical(&k, &b, &query).unwrap();
        let cu = convolve_empirical(&k, &both, &query).unwrap();
        prop_assert!((cu[0] - 0.5 * (ca[0] + cb[0])).abs() <= 1e-12 * (1.0 + cu[0].abs()));
    }
}
