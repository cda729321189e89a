use nelson_core::benchmarks::{Benchmark, Units};
use nelson_core::circle::{circle_params, wallstrom_state};
use nelson_core::estimators::*;
use nelson_core::fields::Grid;
use nelson_core::madelung::{averaged_energy, decompose};
use nelson_core::nelson::Ensemble;
use nelson_core::schrodinger::{evolve, PhysParams};

fn ground() -> (Benchmark, PhysParams) {
    let b = Benchmark::GroundState {
        omega0: 1.0,
        half_width: 8.0,
    };
    let p = b.params(b.grid(256).unwrap(), Units::default());
    (b, p)
}

fn ground_paths(walkers: usize, n_times: usize, dt: f64, seed: u64) -> (PathBundle, PhysParams) {
    let (b, p) = ground();
    let state = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    let mut e = Ensemble::from_density(state.rho(), walkers, seed).unwrap();
    let paths = PathBundle::simulate(&mut e, state.forward_drift(), p.nu, dt, n_times).unwrap();
    (paths, p)
}

#[test]
fn symmetric_estimate_matches_prediction_on_ground_state() {
    let (b, p) = ground();
    let state = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    let (paths, _) = ground_paths(100_000, 12, 1e-3, 21);
    let spec = EstimatorSpec::symmetric(p.mass);
    let est = kinetic_estimate(&paths, &spec);
    let pred = predicted_kinetic(&state, &spec, p.nu, 1e-3).unwrap();
    assert!((est.value - pred).abs() <= 3.0 * est.stderr, "{est:?} vs {pred}");
}

#[test]
fn reversal_is_bit_exact_for_symmetric_weights_and_swaps_otherwise() {
    let (paths, p) = ground_paths(5_000, 9, 2e-3, 2);
    let rev = paths.reversed();
    assert_eq!(rev.reversed(), paths);
    let sym = EstimatorSpec::symmetric(p.mass);
    assert_eq!(kinetic_estimate(&paths, &sym), kinetic_estimate(&rev, &sym));
    let a = EstimatorSpec::new(0.3, 0.7, p.mass).unwrap();
    let b = EstimatorSpec::new(0.7, 0.3, p.mass).unwrap();
    assert_eq!(kinetic_estimate(&paths, &a).value, kinetic_estimate(&rev, &b).value);
}

#[test]
fn uniform_circle_prediction_is_alpha_free() {
    let grid = Grid::circle(64).unwrap();
    let w = 0.7;
    let (s, _) = wallstrom_state(w, 1.0, 1.0, grid).unwrap();
    let p = circle_params(grid, 1.0, 1.0);
    let state = s.hydro(&p, 0.0).unwrap();
    let c = noise_constant(p.nu, 1.0, 1e-3).unwrap();
    for alpha in DEFAULT_ALPHAS {
        let spec = EstimatorSpec::with_alpha(alpha, 1.0).unwrap();
        let k = predicted_kinetic(&state, &spec, p.nu, 1e-3).unwrap();
        assert!((k - (0.5 * w * w + c)).abs() < 1e-10, "{alpha}: {k}");
    }
}

#[test]
fn spreading_gaussian_bias_term_matches_moments() {
    let b = Benchmark::SpreadingGaussian {
        width: 1.0,
        half_width: 12.0,
    };
    let u = Units::default();
    let p = b.params(b.grid(1024).unwrap(), u);
    let t = 1.0;
    let traj = evolve(&b.initial(&p).unwrap(), t, 1e-3, &p, usize::MAX).unwrap();
    let state = decompose(traj.last().unwrap(), &p).unwrap();
    // s(t) = σ₀√(1 + (t/T)²), T = 2mσ₀²/ħ
    let big_t = b.characteristic_time(u);
    let r = t / big_t;
    let s = (1.0 + r * r).sqrt();
    let s_dot = r / big_t / (1.0 + r * r).sqrt();
    let analytic = 0.5 * p.mass * (-p.nu * s_dot / s);
    let got = vu_term(&state, p.mass);
    assert!((got / analytic - 1.0).abs() < 1e-3, "{got} vs {analytic}");
    let spec = EstimatorSpec::with_alpha(1.0, p.mass).unwrap();
    let sym = EstimatorSpec::symmetric(p.mass);
    let diff = predicted_kinetic(&state, &spec, p.nu, 1e-3).unwrap()
        - predicted_kinetic(&state, &sym, p.nu, 1e-3).unwrap();
    assert!((diff - 2.0 * got).abs() < 1e-12);
}

#[test]
fn symmetric_prediction_is_the_averaged_energy_plus_c() {
    let (b, p) = ground();
    let state = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    let sym = predicted_kinetic(&state, &EstimatorSpec::symmetric(1.0), p.nu, 1e-3).unwrap();
    let potential = nelson_core::madelung::energy_parts(&state, &p).potential;
    let c = noise_constant(p.nu, 1.0, 1e-3).unwrap();
    assert!((sym - (averaged_energy(&state, &p) - potential + c)).abs() < 1e-10);
}

#[test]
fn null_states_show_no_alpha_dependence() {
    let (b, p) = ground();
    let state = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    let centres = Ensemble::from_density(state.rho(), 50_000, 9).unwrap();
    let paths = PathBundle::two_sided(
        centres.positions(),
        *p.grid(),
        state.forward_drift(),
        state.backward_drift(),
        p.nu,
        1e-3,
        10,
    )
    .unwrap();
    let sweep = alpha_sweep(&paths, &state, averaged_energy(&state, &p), 1.0, p.nu, &DEFAULT_ALPHAS).unwrap();
    assert!(sweep.vu_term.abs() < 1e-12);
    assert!(sweep.slope.abs() <= 3.0 * sweep.slope_stderr, "{}", sweep.slope);

    let grid = Grid::circle(64).unwrap();
    let (s, _) = wallstrom_state(1.0, 1.0, 1.0, grid).unwrap();
    let cp = circle_params(grid, 1.0, 1.0);
    let cs = s.hydro(&cp, 0.0).unwrap();
    let centres = Ensemble::from_density(cs.rho(), 50_000, 12).unwrap();
    let paths = PathBundle::two_sided(
        centres.positions(),
        grid,
        cs.forward_drift(),
        cs.backward_drift(),
        cp.nu,
        1e-3,
        13,
    )
    .unwrap();
    let sweep = alpha_sweep(&paths, &cs, averaged_energy(&cs, &cp), 1.0, cp.nu, &DEFAULT_ALPHAS).unwrap();
    assert!(sweep.slope.abs() <= 3.0 * sweep.slope_stderr, "{}", sweep.slope);
}

#[test]
fn stationary_benchmark_is_reported_underpowered() {
    let cfg = BiasConfig {
        benchmark: Benchmark::GroundState {
            omega0: 1.0,
            half_width: 8.0,
        },
        n_nodes: 256,
        walkers: 20_000,
        eval_fraction: 0.01,
        dt_oracle: 1e-3,
        ..BiasConfig::default()
    };
    assert!(matches!(bias_experiment(&cfg), Err(EstimatorError::Underpowered { .. })));
}

#[test]
fn constant_shift_cancels_in_energy_differences() {
    let (b, p) = ground();
    let s0 = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    let moved = evolve(&b.initial(&p).unwrap(), 0.3, 1e-3, &p, usize::MAX).unwrap();
    let s1 = decompose(moved.last().unwrap(), &p).unwrap();
    let spec = EstimatorSpec::symmetric(1.0);
    let gap = |dt| {
        predicted_kinetic(&s1, &spec, p.nu, dt).unwrap() - predicted_kinetic(&s0, &spec, p.nu, dt).unwrap()
    };
    assert!((gap(1e-3) - gap(1e-1)).abs() < 1e-9);
}

#[test]
fn power_law_fit_recovers_exact_data() {
    let rows = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| ScalingRow {
            dt,
            estimate: 0.0,
            stderr: 0.0,
            reference: 0.0,
            excess: 0.5 / dt,
            c: 0.5 / dt,
            c_tau: 0.5 / dt,
        })
        .collect();
    let fit = fit_power_law(rows, 1.0, 0.5).unwrap();
    assert!((fit.exponent + 1.0).abs() < 1e-12);
    assert!((fit.amplitude_ratio - 1.0).abs() < 1e-12);
    assert!(fit_power_law(Vec::new(), 1.0, 0.5).is_err());
}
