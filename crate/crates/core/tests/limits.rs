use leadfollow::control::{ControlSignal, RunningCost};
use leadfollow::dynamics::TimeGrid;
use leadfollow::kernels::Kernel;
use leadfollow::limits_harness::{
    decreasing_with_slack, gamma_convergence_experiment, meanfield_convergence_experiment, optimal_control_sweep,
    stability_experiment, LimitExperimentSpec, Report, StabilitySettings,
};
use leadfollow::measures::{InitialDensitySpec, SamplingScheme};
use leadfollow::sparse_optimizer::OptimizerSettings;

fn small_spec() -> LimitExperimentSpec {
    let values: Vec<f64> = (0..16).map(|i| 0.5 * (1.3 * i as f64).sin()).collect();
    LimitExperimentSpec {
        dim: 2,
        leaders: vec![-1.5, 0.0, 0.5, 0.0, 1.5, 0.0, 0.0, 0.5],
        followers: InitialDensitySpec::UniformBox {
            lo: vec![-1.0; 4],
            hi: vec![1.0; 4],
        },
        sampling: SamplingScheme::Sobol,
        kernel: Kernel::cucker_smale(2, 1.0, 1.0, 0.5, -1.0).unwrap(),
        cost: RunningCost::velocity_consensus(64.0).unwrap(),
        control: ControlSignal::new(4, 2, 2, 1.0, 1.0, values).unwrap(),
        grid: TimeGrid::new(1.0, 8, 4).unwrap(),
        optimizer: OptimizerSettings {
            max_iters: 6,
            ..Default::default()
        },
        n_list: vec![4, 16],
        n_ref: 64,
        seed: 9,
        eval_every: 2,
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn reports(spec: &LimitExperimentSpec) -> Vec<String> {
    let settings = StabilitySettings {
        n: 16,
        delta0: 1e-3,
        trials: 3,
        positions_only: false,
        lipschitz_samples: 64,
    };
    vec![
        meanfield_convergence_experiment(spec).unwrap().to_json().unwrap(),
        gamma_convergence_experiment(spec).unwrap().to_json().unwrap(),
        stability_experiment(spec, &settings).unwrap().to_json().unwrap(),
        optimal_control_sweep(spec, &[0.0, 8.0, 64.0]).unwrap().to_json().unwrap(),
    ]
}

#[test]
fn reports_do_not_depend_on_the_thread_count() {
    let spec = small_spec();
    let one = in_pool(1, || reports(&spec));
    let three = in_pool(3, || reports(&spec));
    assert_eq!(one, three);
}

#[test]
fn report_files_are_named_by_kind_hash_and_seed() {
    let spec = small_spec();
    let rep = meanfield_convergence_experiment(&spec).unwrap();
    let dir = std::env::temp_dir().join(format!("leadfollow-limits-{}", std::process::id()));
    let paths = rep.write_files(&dir).unwrap();
    let stem = format!("meanfield_{}_seed9", spec.hash());
    assert!(paths.iter().all(|p| p.file_stem().unwrap().to_str().unwrap() == stem));
    let csv = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(csv.lines().count(), 1 + spec.n_list.len() + 1);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = small_spec();
    spec.n_ref = 32;
    assert!(meanfield_convergence_experiment(&spec).is_err());
    let mut spec = small_spec();
    spec.n_list = vec![16, 4];
    assert!(spec.validate().is_err());
    assert!(optimal_control_sweep(&small_spec(), &[1.0, 0.5]).is_err());
}

#[test]
fn slack_applies_to_the_first_transition_only() {
    assert!(decreasing_with_slack(&[Some(1.0), Some(1.04), Some(0.5)]));
    assert!(!decreasing_with_slack(&[Some(1.0), Some(1.06), Some(0.5)]));
    assert!(!decreasing_with_slack(&[Some(1.0), Some(0.5), Some(0.5)]));
    assert!(!decreasing_with_slack(&[Some(1.0), None]));
}
