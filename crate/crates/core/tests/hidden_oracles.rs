use nelson_core::benchmarks::{Benchmark, Units};
use nelson_core::fields::{integrate, moments, Grid, ScalarField};
use nelson_core::hidden::*;
use nelson_core::madelung::decompose;

fn bivariate(x: Grid, y: Grid, sx: f64, sy: f64, r: f64) -> JointDensity {
    JointDensity::from_fn(x, y, |a, b| {
        let (u, v) = (a / sx, b / sy);
        (-(u * u - 2.0 * r * u * v + v * v) / (2.0 * (1.0 - r * r))).exp()
    })
    .unwrap()
}

fn fine() -> (Grid, Grid) {
    (Grid::line(241, -9.0, 9.0).unwrap(), Grid::line(241, -12.0, 12.0).unwrap())
}

#[test]
fn product_density_marginal_is_the_x_factor() {
    let (x, y) = fine();
    let j = JointDensity::from_fn(x, y, |a, b| (-a * a / 2.0).exp() * (1.0 + 0.5 * (b / 3.0).cos()) * (-b * b / 18.0).exp())
        .unwrap();
    let m = marginal(&j);
    let expect = nelson_core::fields::normalize(&ScalarField::from_fn(x, |a| (-a * a / 2.0).exp())).unwrap();
    for i in 0..x.n_nodes() {
        assert!((m[i] - expect[i]).abs() < 1e-12);
    }
    assert!((integrate(&m) - 1.0).abs() < 1e-10);
}

#[test]
fn correlated_gaussian_marginal_keeps_x_variance() {
    let (x, y) = fine();
    let j = bivariate(x, y, 1.3, 2.0, 0.6);
    let (mean, var) = moments(&marginal(&j));
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.69).abs() < 1e-6, "{var}");
}

#[test]
fn uniform_joint_gives_uniform_marginal() {
    let (x, y) = fine();
    let m = marginal(&JointDensity::from_fn(x, y, |_, _| 1.0).unwrap());
    let first = m[0];
    assert!(m.values().iter().all(|v| (v - first).abs() < 1e-14));
}

#[test]
fn gaussian_conditional_mean_is_linear() {
    let (x, y) = fine();
    let (sx, sy, r) = (1.0, 2.0, 0.6);
    let j = bivariate(x, y, sx, sy, r);
    let vel = VelocityMap::from_fn(x, y, 1.0, |_, b| b).unwrap();
    let cd = conditional_drift(&j, &vel).unwrap();
    for i in 0..x.n_nodes() {
        let xi = x.x(i);
        if xi.abs() <= 2.0 {
            let expect = r * xi * sy / sx;
            assert!((cd.drift[i] - expect).abs() < 1e-6, "x={xi}: {}", cd.drift[i]);
            // conditional variance σ_y²(1 - r²)
            let cv = sy * sy * (1.0 - r * r);
            assert!((cd.variance[i] - cv).abs() < 1e-6, "x={xi}: {} vs {cv}", cd.variance[i]);
        }
    }
}

#[test]
fn centred_additive_noise_averages_out() {
    let (x, y) = fine();
    let j = JointDensity::from_fn(x, y, |a, b| (-a * a).exp() * (-b * b / 8.0).exp()).unwrap();
    let vel = VelocityMap::from_fn(x, y, 1.0, |a, b| a.cos() + b).unwrap();
    let cd = conditional_drift(&j, &vel).unwrap();
    for i in (0..x.n_nodes()).filter(|&i| !cd.floored[i]) {
        assert!((cd.drift[i] - x.x(i).cos()).abs() < 1e-12);
    }
    assert!(cd.floored[0] && !cd.floored[120]);
}

#[test]
fn centred_noise_costs_exactly_half_m_s_squared() {
    let (x, y) = fine();
    let m = 1.7;
    let j = JointDensity::from_fn(x, y, |a, b| (-a * a).exp() * (-b * b / 8.0).exp()).unwrap();
    let quiet = VelocityMap::from_fn(x, y, m, |a, _| a.sin()).unwrap();
    let noisy = VelocityMap::from_fn(x, y, m, |a, b| a.sin() + b).unwrap();
    let u = ScalarField::from_fn(x, |a| 0.5 * a * a);
    // discrete variance of y under its own factor
    let sigma = nelson_core::fields::normalize(&ScalarField::from_fn(y, |b| (-b * b / 8.0).exp())).unwrap();
    let s2 = integrate(&sigma.zip_with(&ScalarField::from_fn(y, |b| b * b), |p, b| p * b).unwrap());
    let gap = subsystem_energy(&j, &noisy, &u).unwrap() - subsystem_energy(&j, &quiet, &u).unwrap();
    assert!((gap - 0.5 * m * s2).abs() < 1e-10, "{gap} vs {}", 0.5 * m * s2);
}

#[test]
fn energy_splits_into_drift_and_fluctuation_parts() {
    let (x, y) = fine();
    let u = ScalarField::from_fn(x, |a| 0.5 * a * a);
    let cases: Vec<(JointDensity, VelocityMap)> = vec![
        (
            bivariate(x, y, 1.0, 2.0, 0.6),
            VelocityMap::from_fn(x, y, 1.0, |_, b| b).unwrap(),
        ),
        (
            bivariate(x, y, 0.7, 1.5, -0.3),
            VelocityMap::from_fn(x, y, 2.0, |a, b| (a * b).sin() + a * a - b).unwrap(),
        ),
        (
            JointDensity::from_fn(x, y, |a, b| (-(a - 1.0).powi(2)).exp() + 0.5 * (-(a + 2.0).powi(2) - b * b).exp())
                .unwrap(),
            VelocityMap::from_fn(x, y, 0.5, |a, b| 3.0 * a + b * b).unwrap(),
        ),
        (
            JointDensity::from_fn(x, y, |_, _| 1.0).unwrap(),
            VelocityMap::from_fn(x, y, 1.0, |a, b| a - b).unwrap(),
        ),
    ];
    for (j, vel) in &cases {
        let split = energy_split(j, vel, &u).unwrap();
        assert!(split.identity_residual().abs() <= 1e-10, "{split:?}");
        assert!(split.fluctuation_part >= 0.0);
    }
}

#[test]
fn permuting_hidden_nodes_leaves_drift_bit_identical() {
    let x = Grid::line(31, -3.0, 3.0).unwrap();
    let y = Grid::circle(48).unwrap();
    let rho_f = |a: f64, b: f64| (-a * a).exp() * (1.2 + (b + a).sin());
    let vel_f = |a: f64, b: f64| (2.0 * b).cos() * a + b.sin();
    let j = JointDensity::from_fn(x, y, rho_f).unwrap();
    let v = VelocityMap::from_fn(x, y, 1.0, vel_f).unwrap();
    // reverse the order of hidden nodes, carrying density and velocity along
    let ny = y.n_nodes();
    let perm = |vals: &[f64]| -> Vec<f64> {
        (0..x.n_nodes())
            .flat_map(|i| (0..ny).rev().map(move |jj| (i, jj)))
            .map(|(i, jj)| vals[i * ny + jj])
            .collect()
    };
    let jp = JointDensity::new(x, y, perm(j.values())).unwrap();
    let vp = VelocityMap::new(x, y, perm(v.values()), 1.0).unwrap();
    let a = conditional_drift(&j, &v).unwrap();
    let b = conditional_drift(&jp, &vp).unwrap();
    assert_eq!(a.drift, b.drift);
    assert_eq!(a.variance, b.variance);
}

#[test]
fn nelson_realizing_instance_matches_ground_state_process() {
    let bench = Benchmark::GroundState {
        omega0: 1.0,
        half_width: 8.0,
    };
    let p = bench.params(bench.grid(129).unwrap(), Units::default());
    let state = decompose(&bench.initial(&p).unwrap(), &p).unwrap();
    let y = Grid::line(81, -8.0, 8.0).unwrap();
    let dt = 1e-3;
    let (j, vel) = nelson_realizing(&state, y, dt).unwrap();
    let report = drift_decomposition_report(&j, &vel, &state, dt).unwrap();
    assert!(report.realizes(1e-9), "{} {}", report.max_drift_residual, report.max_variance_residual);
    assert!((report.implied_nu / p.nu - 1.0).abs() < 1e-9);
    let split = energy_split(&j, &vel, &p.potential).unwrap();
    assert!(split.identity_residual().abs() <= 1e-10);

    // wrong resolution: the same hidden spread read at a different dt
    let off = drift_decomposition_report(&j, &vel, &state, 2.0 * dt).unwrap();
    assert!(!off.realizes(1e-3));
    assert!((off.max_variance_residual - 1.0).abs() < 1e-9);
}

#[test]
fn y_free_velocity_is_classical() {
    let bench = Benchmark::GroundState {
        omega0: 1.0,
        half_width: 8.0,
    };
    let p = bench.params(bench.grid(129).unwrap(), Units::default());
    let state = decompose(&bench.initial(&p).unwrap(), &p).unwrap();
    let x = *p.grid();
    let y = Grid::line(21, -3.0, 3.0).unwrap();
    let rho = state.rho().clone();
    let j = JointDensity::from_fn(x, y, |a, b| rho[x.cell_of(a)] * (-b * b).exp()).unwrap();
    let b = state.forward_drift().clone();
    let vel = VelocityMap::from_fn(x, y, 1.0, |a, _| b[x.cell_of(a)]).unwrap();
    let report = drift_decomposition_report(&j, &vel, &state, 1e-3).unwrap();
    assert!(report.classical);
    assert_eq!(report.implied_nu, 0.0);
    assert!(report.max_drift_residual < 1e-12);
}

#[test]
fn lattice_csv_layout() {
    let x = Grid::line(9, 0.0, 1.0).unwrap();
    let y = Grid::line(9, 0.0, 1.0).unwrap();
    let j = JointDensity::from_fn(x, y, |_, _| 1.0).unwrap();
    let mut buf = Vec::new();
    j.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("x,y,value"));
    assert_eq!(text.lines().count(), 82);
}
