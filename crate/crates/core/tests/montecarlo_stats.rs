use metaspde::kramers::{transition_time_continuum, LandscapeSpectra};
use metaspde::landscape::{build_skeleton, find_stationary_points};
use metaspde::montecarlo::{
    estimate_mean, sample_hitting_time, standard_normal, trajectory_rng, Endpoints, MeanEstimate, Scheme,
    SimulationConfig,
};
use metaspde::potential::{discrete_gradient, l2_distance, make_grid, BoundaryCondition, FieldProfile, PotentialSpec};

fn config(epsilon: f64, seed: u64) -> SimulationConfig {
    SimulationConfig {
        spec: PotentialSpec::double_well(1.0, BoundaryCondition::Neumann).unwrap(),
        n: 16,
        epsilon,
        dt: 1e-3,
        rho: 0.4,
        scheme: Scheme::SemiImplicit,
        seed,
        max_time: 1e4,
        start: 0,
        targets: vec![1],
    }
}

fn wells(cfg: &SimulationConfig) -> Endpoints {
    let grid = cfg.grid().unwrap();
    let points = find_stationary_points(&cfg.spec, &grid, None).unwrap();
    let graph = build_skeleton(&cfg.spec, &points).unwrap();
    Endpoints::from_graph(&graph, 0, &[1]).unwrap()
}

fn combined_gap(a: &MeanEstimate, b: &MeanEstimate) -> f64 {
    (a.mean - b.mean).abs() / (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

#[test]
fn smoke_nearly_all_runs_finish() {
    let cfg = config(0.12, 11);
    let est = estimate_mean(&cfg, &wells(&cfg), 100).unwrap();
    let finished = est.samples.iter().filter(|s| !s.capped && s.tau > 0.0).count();
    assert!(finished >= 99, "{finished} of 100 finished");
}

#[test]
fn mean_against_prediction_and_sampling_behaviour() {
    let cfg = config(0.12, 1234);
    let ends = wells(&cfg);
    let grid = cfg.grid().unwrap();
    let points = find_stationary_points(&cfg.spec, &grid, None).unwrap();
    let graph = build_skeleton(&cfg.spec, &points).unwrap();
    let spectra = LandscapeSpectra::compute(&cfg.spec, &graph).unwrap();
    let predicted = transition_time_continuum(&graph, &spectra, 0, &[1], 0.12, None).unwrap().predicted_mean;

    let full = estimate_mean(&cfg, &ends, 500).unwrap();
    assert!(
        full.mean >= predicted / 3.0 && full.mean <= 3.0 * predicted,
        "mean {} vs prediction {predicted}",
        full.mean
    );

    // doubling the count shrinks the standard error by √2
    let half = estimate_mean(&config(0.12, 4321), &ends, 250).unwrap();
    let ratio = half.std_error / full.std_error;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.3, "SE ratio {ratio}");

    // halving dt
    let fine = estimate_mean(&SimulationConfig { dt: 5e-4, ..cfg.clone() }, &ends, 500).unwrap();
    assert!(combined_gap(&full, &fine) < 2.0, "dt: {} vs {}", full.mean, fine.mean);

    // explicit scheme at its stable step
    let h = grid.h();
    let explicit = SimulationConfig { scheme: Scheme::Explicit, dt: h * h / 4.0, ..cfg.clone() };
    let ex = estimate_mean(&explicit, &ends, 500).unwrap();
    assert!(combined_gap(&full, &ex) < 2.0, "schemes: {} vs {}", full.mean, ex.mean);
}

#[test]
fn worker_count_does_not_change_samples() {
    let cfg = config(0.2, 5);
    let ends = wells(&cfg);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_mean(&cfg, &ends, 40).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
}

#[test]
fn gradient_clock_reproduces_physical_times() {
    // dY = -∇S_N(Y) ds + √(2ε) dB_s with s = t/h is the same process as X.
    let mut cfg = config(0.2, 77);
    let grid = make_grid(BoundaryCondition::Neumann, cfg.n).unwrap();
    let h = grid.h();
    cfg.scheme = Scheme::Explicit;
    cfg.dt = 0.9 * h * h / 4.0;
    let ends = wells(&cfg);
    let ds = cfg.dt / h;
    for stream in 0..10 {
        let x = sample_hitting_time(&cfg, &ends, stream).unwrap();
        let mut rng = trajectory_rng(cfg.seed, stream);
        let mut y = ends.start.values().to_vec();
        let mut steps = 0u64;
        loop {
            let g = discrete_gradient(&cfg.spec, &FieldProfile::new(grid.clone(), y.clone()).unwrap()).unwrap();
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi += -gi * ds + (2.0 * cfg.epsilon * ds).sqrt() * standard_normal(&mut rng);
            }
            steps += 1;
            if ends.targets.iter().any(|t| l2_distance(&y, t.values()) <= cfg.rho) || steps > 50_000_000 {
                break;
            }
        }
        let tau_y = steps as f64 * ds * h;
        assert!((tau_y - x.tau).abs() <= 2.0 * cfg.dt, "stream {stream}: {tau_y} vs {}", x.tau);
    }
}
