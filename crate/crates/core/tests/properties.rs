use num_complex::Complex64;
use proptest::prelude::*;

use nelson_core::estimators::{kinetic_estimate, EstimatorSpec, PathBundle};
use nelson_core::fields::*;
use nelson_core::hidden::{conditional_drift, energy_split, JointDensity, VelocityMap};
use nelson_core::madelung::{compose, decompose};
use nelson_core::nelson::{fokker_planck_step, histogram, time_reverse, Direction, Ensemble};
use nelson_core::schrodinger::{PhysParams, WaveField};

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..2.0, n)
}

fn grid_for(periodic: bool, n: usize) -> Grid {
    if periodic {
        Grid::circle(n).unwrap()
    } else {
        Grid::line(n, -3.0, 3.0).unwrap()
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn divergence_integrates_to_zero_on_circles(v in prop::collection::vec(-5.0f64..5.0, 8..96)) {
        let g = Grid::circle(v.len()).unwrap();
        let d = divergence(&VectorField::new(g, v).unwrap()).unwrap();
        prop_assert!(integrate(&d).abs() < 1e-10);
    }

    #[test]
    fn laplacian_is_divergence_of_gradient(v in prop::collection::vec(-5.0f64..5.0, 8..96), periodic: bool) {
        let f = ScalarField::new(grid_for(periodic, v.len()), v).unwrap();
        let a = laplacian(&f).unwrap();
        let b = divergence(&gradient(&f).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn normalize_is_idempotent(v in positive(40), periodic: bool) {
        let f = ScalarField::new(grid_for(periodic, 40), v).unwrap();
        let once = normalize(&f).unwrap();
        let twice = normalize(&once).unwrap();
        prop_assert!((integrate(&once) - 1.0).abs() < 1e-12);
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn compose_undoes_decompose(amp in positive(48), phase in prop::collection::vec(-3.0f64..3.0, 48), periodic: bool) {
        let g = grid_for(periodic, 48);
        let vals: Vec<Complex64> = amp.iter().zip(&phase).map(|(&a, &p)| Complex64::from_polar(a, p)).collect();
        let psi = WaveField::new(g, vals, 0.0).unwrap().normalized().unwrap();
        let params = PhysParams::natural(g);
        let s = decompose(&psi, &params).unwrap();
        let back = compose(s.rho(), s.action(), params.hbar()).unwrap();
        for (a, b) in psi.values().iter().zip(back.values()) {
            prop_assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn time_reversal_is_an_involution(amp in positive(32), phase in prop::collection::vec(-3.0f64..3.0, 32)) {
        let g = Grid::circle(32).unwrap();
        let vals: Vec<Complex64> = amp.iter().zip(&phase).map(|(&a, &p)| Complex64::from_polar(a, p)).collect();
        let psi = WaveField::new(g, vals, 0.0).unwrap().normalized().unwrap();
        let s = decompose(&psi, &PhysParams::natural(g)).unwrap();
        let twice = time_reverse(&time_reverse(&s));
        prop_assert_eq!(twice.rho(), s.rho());
        prop_assert_eq!(twice.current_velocity(), s.current_velocity());
        prop_assert_eq!(twice.osmotic_velocity(), s.osmotic_velocity());
        prop_assert_eq!(twice.forward_drift(), s.forward_drift());
    }

    #[test]
    fn fokker_planck_conserves_mass(
        rho in positive(64),
        b in prop::collection::vec(-2.0f64..2.0, 64),
        periodic: bool,
        backward: bool,
    ) {
        let g = grid_for(periodic, 64);
        let rho = normalize(&ScalarField::new(g, rho).unwrap()).unwrap();
        let drift = VectorField::new(g, b).unwrap();
        let h = g.spacing();
        let dt = 0.4 * h * h;
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let out = fokker_planck_step(&rho, &drift, 0.5, dt, dir).unwrap();
        prop_assert!((integrate(&out.density) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn histogram_integrates_to_one(xs in prop::collection::vec(-3.0f64..3.0, 1..400), periodic: bool) {
        let g = grid_for(periodic, 50);
        let xs = if periodic { xs.iter().map(|x| g.wrap(*x)).collect() } else { xs };
        let e = Ensemble::from_positions(g, xs, 0).unwrap();
        prop_assert!((integrate(&histogram(&e, &g)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_estimate_ignores_time_direction(
        data in prop::collection::vec(-3.0f64..3.0, 60),
        dt in 1e-4f64..1e-1,
        mass in 0.1f64..10.0,
    ) {
        let g = Grid::line(16, -4.0, 4.0).unwrap();
        let paths = PathBundle::new(g, dt, 6, 10, data).unwrap();
        let spec = EstimatorSpec::symmetric(mass);
        prop_assert_eq!(kinetic_estimate(&paths, &spec), kinetic_estimate(&paths.reversed(), &spec));
    }

    #[test]
    fn hidden_energy_identity_holds(rho in positive(12 * 10), vel in prop::collection::vec(-4.0f64..4.0, 12 * 10), mass in 0.1f64..5.0) {
        let x = Grid::line(12, -2.0, 2.0).unwrap();
        let y = Grid::circle(10).unwrap();
        let j = JointDensity::from_fn(x, y, |a, b| rho[x.cell_of(a) * 10 + y.cell_of(b)]).unwrap();
        let v = VelocityMap::new(x, y, vel, mass).unwrap();
        let u = ScalarField::from_fn(x, |a| a * a);
        let split = energy_split(&j, &v, &u).unwrap();
        prop_assert!(split.identity_residual().abs() <= 1e-10 * (1.0 + split.total.abs()));
    }

    #[test]
    fn hidden_drift_ignores_hidden_node_order(
        rho in positive(8 * 12),
        vel in prop::collection::vec(-4.0f64..4.0, 8 * 12),
        shift in 0usize..12,
    ) {
        let x = Grid::line(8, -1.0, 1.0).unwrap();
        let y = Grid::circle(12).unwrap();
        let j = JointDensity::from_fn(x, y, |a, b| rho[x.cell_of(a) * 12 + y.cell_of(b)]).unwrap();
        let v = VelocityMap::new(x, y, vel, 1.0).unwrap();
        let rot = |vals: &[f64]| -> Vec<f64> {
            (0..8).flat_map(|i| (0..12).map(move |k| (i, (k + shift) % 12))).map(|(i, k)| vals[i * 12 + k]).collect()
        };
        let jr = JointDensity::new(x, y, rot(j.values())).unwrap();
        let vr = VelocityMap::new(x, y, rot(v.values()), 1.0).unwrap();
        let a = conditional_drift(&j, &v).unwrap();
        let b = conditional_drift(&jr, &vr).unwrap();
        prop_assert_eq!(a.drift, b.drift);
        prop_assert_eq!(a.variance, b.variance);
    }
}
