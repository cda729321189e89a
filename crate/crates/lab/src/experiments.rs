//! The named experiments. Each returns metrics, a results document and the
//! files to write; nothing touches the filesystem here.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nelson_core::benchmarks::Benchmark;
use nelson_core::circle::{
    check_circle_dynamics, circle_ensemble_check, circle_params, momentum_eigen_check, wallstrom_state,
    CircleEnsembleConfig, WallstromRow,
};
use nelson_core::estimators::{
    bias_experiment, kinetic_estimate, noise_scaling, BiasConfig, EstimatorSpec, PathBundle, ScalingConfig,
};
use nelson_core::fields::{Grid, ScalarField};
use nelson_core::hidden::{
    drift_decomposition_report, energy_split, nelson_realizing, JointDensity, VelocityMap,
};
use nelson_core::madelung::{averaged_energy, decompose, energy_trace, hbar_consistency, ConsistencyConfig, HydroState};
use nelson_core::nelson::{reversed_clock_check, time_reverse, triangle, Ensemble};
use nelson_core::schrodinger::{evolve, init_packet, Packet, PhysParams};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::plot::{line_chart, Series};
use crate::report::Metric;
use crate::LabError;

pub struct Outcome {
    pub metrics: Vec<Metric>,
    pub results: serde_json::Value,
    pub files: Vec<(String, Vec<u8>)>,
}

fn fail(e: impl std::fmt::Display) -> LabError {
    LabError::Experiment(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("results serialize");
    out.push(b'\n');
    out
}

pub(crate) const SPREADING: Benchmark = Benchmark::SpreadingGaussian {
    width: 1.0,
    half_width: 12.0,
};
pub(crate) const COHERENT: Benchmark = Benchmark::CoherentState {
    omega0: 1.0,
    displacement: 2.0,
    half_width: 10.0,
};
pub(crate) const GROUND: Benchmark = Benchmark::GroundState {
    omega0: 1.0,
    half_width: 8.0,
};

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    match cfg.experiment.as_str() {
        "triangle" => run_triangle(cfg),
        "energy-conservation" => run_energy(cfg),
        "hbar-consistency" => run_hbar(cfg),
        "estimator-bias" => run_bias(cfg),
        "noise-constant-scaling" => run_scaling(cfg),
        "hidden-decomposition" => run_hidden(cfg),
        "circle-wallstrom" => run_circle(cfg),
        "time-reversal" => run_reversal(cfg),
        other => Err(LabError::UnknownExperiment(other.to_string())),
    }
}

fn run_triangle(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let units = cfg.units();
    let dt = cfg.ensemble.dt.expect("resolved");
    let stride = cfg.ensemble.snapshot_stride.expect("resolved") as usize;
    let tol = cfg.tolerance("l1");
    let mut metrics = Vec::new();
    let mut files = Vec::new();
    let mut results = serde_json::Map::new();
    for (i, b) in [SPREADING, COHERENT].iter().enumerate() {
        let name = b.name();
        let params = b.params(b.grid(cfg.n_nodes()).map_err(fail)?, units);
        let psi0 = b.initial(&params).map_err(fail)?;
        let steps = (b.characteristic_time(units) / dt).round() as usize;
        let checkpoints: Vec<usize> = (1..=5).map(|k| k * steps / 5).collect();
        let run = triangle(&psi0, &params, cfg.walkers(), dt, &checkpoints, cfg.seed().wrapping_add(i as u64))
            .map_err(fail)?;
        let worst = |f: fn(&nelson_core::nelson::DensityComparison) -> f64| {
            run.comparisons.iter().map(f).fold(0.0, f64::max)
        };
        metrics.push(Metric::at_most(format!("{name}.L1_sde_vs_fp"), worst(|c| c.l1_sde_vs_fp), tol));
        metrics.push(Metric::at_most(format!("{name}.L1_sde_vs_psi2"), worst(|c| c.l1_sde_vs_psi2), tol));
        metrics.push(Metric::at_most(format!("{name}.L1_fp_vs_psi2"), worst(|c| c.l1_fp_vs_psi2), tol));
        metrics.push(Metric::at_most(
            format!("{name}.clipped_mass"),
            run.max_clipped_mass,
            cfg.tolerance("clipped_mass"),
        ));
        results.insert(
            name.to_string(),
            json!({
                "checkpoints": run.comparisons,
                "max_clipped_mass": run.max_clipped_mass,
                "characteristic_time": b.characteristic_time(units),
            }),
        );

        let grid = params.grid();
        let mut csv = String::from("x,sde,fp,psi2\n");
        for k in 0..grid.n_nodes() {
            let _ = writeln!(csv, "{},{},{},{}", grid.x(k), run.final_sde[k], run.final_fp[k], run.final_psi2[k]);
        }
        files.push((format!("{name}_final_density.csv"), csv.into_bytes()));
        let mut snap = b"t,walker_id,x\n".to_vec();
        for e in &run.snapshots {
            e.write_csv_rows(stride, &mut snap).map_err(fail)?;
        }
        files.push((format!("{name}_walkers.csv"), snap));
        files.push((format!("{name}_checkpoints.json"), to_json(&run.comparisons)));
        let col = |f: &ScalarField| -> Vec<(f64, f64)> { (0..grid.n_nodes()).map(|k| (grid.x(k), f[k])).collect() };
        let svg = line_chart(
            &format!("{name}: densities at t = {:.3}", run.comparisons.last().map_or(0.0, |c| c.t)),
            "x",
            "density",
            &[
                Series { label: "SDE histogram", points: col(&run.final_sde) },
                Series { label: "Fokker-Planck", points: col(&run.final_fp) },
                Series { label: "|psi|^2", points: col(&run.final_psi2) },
            ],
            false,
            false,
        );
        files.push((format!("{name}_final_density.svg"), svg.into_bytes()));
    }
    Ok(Outcome {
        metrics,
        results: results.into(),
        files,
    })
}

fn run_energy(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let units = cfg.units();
    let dt = cfg.oracle.dt.expect("resolved");
    let n = cfg.n_nodes();
    let mut metrics = Vec::new();
    let mut files = Vec::new();
    let mut results = serde_json::Map::new();
    for b in [SPREADING, COHERENT] {
        let name = b.name();
        let t = b.characteristic_time(units);
        let stride = ((t / dt) / 200.0).ceil().max(1.0) as usize;
        let coarse = energy_trace(&b, units, n, dt, t, stride).map_err(fail)?;
        let fine = energy_trace(&b, units, 2 * n, dt, t, stride).map_err(fail)?;
        let gain = coarse.max_rel_drift / fine.max_rel_drift;
        metrics.push(Metric::at_most(format!("{name}.drift_n{n}"), coarse.max_rel_drift, cfg.tolerance("drift")));
        metrics.push(Metric::at_least(
            format!("{name}.refinement_gain"),
            gain,
            cfg.tolerance("refinement_gain"),
        ));
        let mut csv = format!("t,energy_n{},energy_n{}\n", n, 2 * n);
        for k in 0..coarse.times.len() {
            let _ = writeln!(csv, "{},{},{}", coarse.times[k], coarse.energies[k], fine.energies[k]);
        }
        files.push((format!("{name}_energy.csv"), csv.into_bytes()));
        let rel = |tr: &nelson_core::madelung::EnergyTrace| -> Vec<(f64, f64)> {
            tr.times
                .iter()
                .zip(&tr.energies)
                .map(|(t, e)| (*t, (e - tr.energies[0]) / tr.energies[0].abs()))
                .collect()
        };
        let svg = line_chart(
            &format!("{name}: relative change of the averaged energy"),
            "t",
            "(H(t) - H(0)) / |H(0)|",
            &[
                Series { label: "coarse", points: rel(&coarse) },
                Series { label: "fine", points: rel(&fine) },
            ],
            false,
            false,
        );
        files.push((format!("{name}_energy.svg"), svg.into_bytes()));
        results.insert(
            name.to_string(),
            json!({
                "coarse": { "n_nodes": coarse.n_nodes, "max_rel_drift": coarse.max_rel_drift, "initial_energy": coarse.energies[0] },
                "fine": { "n_nodes": fine.n_nodes, "max_rel_drift": fine.max_rel_drift, "initial_energy": fine.energies[0] },
                "refinement_gain": gain,
            }),
        );
    }
    Ok(Outcome {
        metrics,
        results: results.into(),
        files,
    })
}

fn run_hbar(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let n = cfg.n_nodes();
    let band = cfg.tolerance("order_band");
    let mut metrics = Vec::new();
    let mut reports = Vec::new();
    let mut series = Vec::new();
    for b in [SPREADING, COHERENT] {
        let c = ConsistencyConfig {
            units: cfg.units(),
            grids: [n, 2 * n],
            dt_oracle: cfg.oracle.dt.expect("resolved"),
            ..ConsistencyConfig::new(b)
        };
        let r = hbar_consistency(&c).map_err(fail)?;
        let name = b.name();
        metrics.push(Metric::between(
            format!("{name}.two_nu_gain_over_h2"),
            r.ratio_two_nu / r.expected_ratio,
            1.0 / band,
            band,
        ));
        metrics.push(Metric::at_most(format!("{name}.one_nu_gain"), r.ratio_one_nu, cfg.tolerance("plateau_gain")));
        for conv in [nelson_core::schrodinger::HbarConvention::TwoNu, nelson_core::schrodinger::HbarConvention::OneNu] {
            let pts: Vec<(f64, f64)> = r
                .rows
                .iter()
                .filter(|row| row.convention == conv)
                .map(|row| (row.spacing, row.weighted_rms))
                .collect();
            series.push((format!("{name} {conv:?}"), pts));
        }
        reports.push(r);
    }
    let svg = line_chart(
        "Hamilton-Jacobi residual against spacing",
        "h",
        "weighted rms residual",
        &series
            .iter()
            .map(|(l, p)| Series { label: l, points: p.clone() })
            .collect::<Vec<_>>(),
        true,
        true,
    );
    Ok(Outcome {
        metrics,
        results: json!({ "reports": reports }),
        files: vec![
            ("consistency.json".into(), to_json(&reports)),
            ("residual_vs_spacing.svg".into(), svg.into_bytes()),
        ],
    })
}

fn run_bias(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let bc = BiasConfig {
        units: cfg.units(),
        n_nodes: cfg.n_nodes(),
        walkers: cfg.walkers(),
        dt: cfg.ensemble.dt.expect("resolved"),
        alphas: cfg.estimator.alphas.clone().expect("resolved"),
        dt_oracle: cfg.oracle.dt.expect("resolved"),
        seed: cfg.seed(),
        ..BiasConfig::default()
    };
    let sweep = bias_experiment(&bc).map_err(fail)?;
    let mut metrics = vec![Metric::within(
        "slope_ratio",
        sweep.slope_ratio(),
        1.0,
        cfg.tolerance("slope_ratio"),
    )];
    if let Some(half) = sweep.rows.iter().find(|r| r.alpha == 0.5) {
        metrics.push(Metric::at_most(
            "symmetric_vs_energy_sigma",
            (half.estimate - sweep.energy_plus_c).abs() / half.stderr,
            cfg.tolerance("symmetric_sigma"),
        ));
    }
    metrics.push(Metric::flag("symmetric_unique", sweep.symmetric_unique()));
    let pts = |f: fn(&nelson_core::estimators::BiasRow) -> f64| -> Vec<(f64, f64)> {
        sweep.rows.iter().map(|r| (r.alpha, f(r))).collect()
    };
    let svg = line_chart(
        "kinetic estimate against alpha",
        "alpha",
        "K(alpha)",
        &[
            Series { label: "measured", points: pts(|r| r.estimate) },
            Series { label: "predicted", points: pts(|r| r.predicted) },
        ],
        false,
        false,
    );
    let results = json!({
        "benchmark": bc.benchmark,
        "rows": sweep.rows,
        "vu_term": sweep.vu_term,
        "slope": sweep.slope,
        "slope_stderr": sweep.slope_stderr,
        "slope_ratio": sweep.slope_ratio(),
        "slope_ratio_stderr": sweep.slope_ratio_stderr(),
        "energy_plus_C": sweep.energy_plus_c,
        "C_tau": sweep.c_tau,
    });
    Ok(Outcome {
        metrics,
        files: vec![
            ("bias.json".into(), to_json(&results)),
            ("bias.svg".into(), svg.into_bytes()),
        ],
        results,
    })
}

fn run_scaling(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let sc = ScalingConfig {
        units: cfg.units(),
        n_nodes: cfg.n_nodes(),
        walkers: cfg.walkers(),
        dts: cfg.estimator.dts.clone().expect("resolved"),
        n_times: cfg.estimator.n_times.expect("resolved") as usize,
        seed: cfg.seed(),
        ..ScalingConfig::default()
    };
    let fit = noise_scaling(&sc).map_err(fail)?;
    let metrics = vec![
        Metric::within("exponent", fit.exponent, -1.0, cfg.tolerance("exponent")),
        Metric::within("amplitude_ratio", fit.amplitude_ratio, 1.0, cfg.tolerance("amplitude")),
    ];
    let mut csv = String::from("dt,estimate,stderr,reference,excess,C\n");
    for r in &fit.rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.dt, r.estimate, r.stderr, r.reference, r.excess, r.c);
    }
    let svg = line_chart(
        "estimator excess against dt",
        "dt",
        "excess",
        &[
            Series { label: "measured", points: fit.rows.iter().map(|r| (r.dt, r.excess)).collect() },
            Series { label: "m nu / dt", points: fit.rows.iter().map(|r| (r.dt, r.c)).collect() },
        ],
        true,
        true,
    );
    Ok(Outcome {
        metrics,
        results: serde_json::to_value(&fit).expect("fit serializes"),
        files: vec![
            ("scaling.csv".into(), csv.into_bytes()),
            ("scaling.svg".into(), svg.into_bytes()),
        ],
    })
}

fn bivariate(x: Grid, y: Grid, sx: f64, sy: f64, r: f64) -> Result<JointDensity, LabError> {
    JointDensity::from_fn(x, y, |a, b| {
        let (u, v) = (a / sx, b / sy);
        (-(u * u - 2.0 * r * u * v + v * v) / (2.0 * (1.0 - r * r))).exp()
    })
    .map_err(fail)
}

fn run_hidden(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let x = Grid::line(241, -9.0, 9.0).map_err(fail)?;
    let y = Grid::line(241, -12.0, 12.0).map_err(fail)?;
    let u = ScalarField::from_fn(x, |a| 0.5 * a * a);
    let vel = |m: f64, f: fn(f64, f64) -> f64| VelocityMap::from_fn(x, y, m, f).map_err(fail);
    let cases: Vec<(&str, JointDensity, VelocityMap)> = vec![
        ("correlated-gaussian", bivariate(x, y, 1.0, 2.0, 0.6)?, vel(1.0, |_, b| b)?),
        (
            "anticorrelated-nonlinear",
            bivariate(x, y, 0.7, 1.5, -0.3)?,
            vel(2.0, |a, b| (a * b).sin() + a * a - b)?,
        ),
        (
            "bimodal",
            JointDensity::from_fn(x, y, |a, b| (-(a - 1.0).powi(2)).exp() + 0.5 * (-(a + 2.0).powi(2) - b * b).exp())
                .map_err(fail)?,
            vel(0.5, |a, b| 3.0 * a + b * b)?,
        ),
        ("uniform", JointDensity::from_fn(x, y, |_, _| 1.0).map_err(fail)?, vel(1.0, |a, b| a - b)?),
    ];
    let tol = cfg.tolerance("identity");
    let mut metrics = Vec::new();
    let mut splits = serde_json::Map::new();
    for (name, j, v) in &cases {
        let s = energy_split(j, v, &u).map_err(fail)?;
        metrics.push(Metric::at_most(format!("{name}.identity_residual"), s.identity_residual().abs(), tol));
        splits.insert(name.to_string(), serde_json::to_value(s).expect("split serializes"));
    }

    let params = GROUND.params(GROUND.grid(cfg.n_nodes()).map_err(fail)?, cfg.units());
    let state = decompose(&GROUND.initial(&params).map_err(fail)?, &params).map_err(fail)?;
    let dt = cfg.ensemble.dt.expect("resolved");
    let hy = Grid::line(81, -8.0, 8.0).map_err(fail)?;
    let (j, v) = nelson_realizing(&state, hy, dt).map_err(fail)?;
    let split = energy_split(&j, &v, &params.potential).map_err(fail)?;
    let report = drift_decomposition_report(&j, &v, &state, dt).map_err(fail)?;
    let rtol = cfg.tolerance("realization");
    metrics.push(Metric::at_most("nelson-realizing.identity_residual", split.identity_residual().abs(), tol));
    metrics.push(Metric::at_most("nelson-realizing.max_drift_residual", report.max_drift_residual, rtol));
    metrics.push(Metric::at_most("nelson-realizing.max_variance_residual", report.max_variance_residual, rtol));
    metrics.push(Metric::at_most(
        "nelson-realizing.implied_nu_error",
        (report.implied_nu / params.nu - 1.0).abs(),
        rtol,
    ));
    splits.insert("nelson-realizing".into(), serde_json::to_value(split).expect("split serializes"));

    let cd = nelson_core::hidden::conditional_drift(&j, &v).map_err(fail)?;
    let g = params.grid();
    let mut csv = String::from("x,marginal,drift,b_fwd,variance\n");
    for k in 0..g.n_nodes() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            g.x(k),
            cd.marginal[k],
            cd.drift[k],
            state.forward_drift()[k],
            cd.variance[k]
        );
    }
    let mut joint = Vec::new();
    j.write_csv(&mut joint).map_err(fail)?;
    let mut velocity = Vec::new();
    v.write_csv(&mut velocity).map_err(fail)?;
    let svg = line_chart(
        "conditional drift of the constructed instance",
        "x",
        "drift",
        &[
            Series { label: "E[xdot | x]", points: (0..g.n_nodes()).map(|k| (g.x(k), cd.drift[k])).collect() },
            Series {
                label: "b = v + u",
                points: (0..g.n_nodes()).map(|k| (g.x(k), state.forward_drift()[k])).collect(),
            },
        ],
        false,
        false,
    );
    let results = json!({ "energy_splits": splits, "nelson_realizing": report });
    Ok(Outcome {
        metrics,
        files: vec![
            ("hidden.json".into(), to_json(&results)),
            ("nelson_drift.csv".into(), csv.into_bytes()),
            ("nelson_joint_density.csv".into(), joint),
            ("nelson_velocity.csv".into(), velocity),
            ("nelson_drift.svg".into(), svg.into_bytes()),
        ],
        results,
    })
}

fn run_circle(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let units = cfg.units();
    let (m, hbar) = (units.mass, units.hbar);
    let grid = Grid::circle(cfg.n_nodes()).map_err(fail)?;
    let params = circle_params(grid, m, hbar);
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (i, &w) in cfg.circle.w.as_ref().expect("resolved").iter().enumerate() {
        let (s, psi) = wallstrom_state(w, m, hbar, grid).map_err(fail)?;
        let dynamics = check_circle_dynamics(&s, &params, 1e-3).map_err(fail)?;
        let exact = m * w * w / 2.0;
        let omega_err = (s.omega - exact).abs().max((dynamics.omega_from_residual - exact).abs());
        let mom = momentum_eigen_check(&psi, w, m, hbar).map_err(fail)?;
        let ens = circle_ensemble_check(
            &s,
            &params,
            &CircleEnsembleConfig {
                walkers: cfg.walkers(),
                t_final: cfg.ensemble.t_final.expect("resolved"),
                dt: cfg.ensemble.dt.expect("resolved"),
                seed: cfg.seed().wrapping_add(i as u64),
                ..CircleEnsembleConfig::default()
            },
        )
        .map_err(fail)?;
        let tag = format!("w={w}");
        metrics.push(Metric::at_most(format!("{tag}.omega_error"), omega_err, cfg.tolerance("omega")));
        metrics.push(Metric::at_most(format!("{tag}.norm_error"), (psi.norm_sqr() - 1.0).abs(), cfg.tolerance("norm")));
        metrics.push(Metric::flag(format!("{tag}.seam_localized_iff_unquantized"), mom.localized != mom.quantized));
        metrics.push(Metric::flag(
            format!("{tag}.interior_at_discretization_level"),
            mom.interior_residual_max <= mom.interior_tolerance,
        ));
        metrics.push(Metric::at_most(format!("{tag}.L1_uniform"), ens.l1_uniform, cfg.tolerance("l1")));
        metrics.push(Metric::at_most(
            format!("{tag}.winding_rate_sigma"),
            (ens.winding_rate - ens.expected_rate).abs() / ens.winding_rate_se,
            cfg.tolerance("winding_sigma"),
        ));
        rows.push(WallstromRow {
            w,
            omega: s.omega,
            seam_residual: mom.seam_residual,
            interior_residual_max: mom.interior_residual_max,
            winding_rate: ens.winding_rate,
            winding_rate_se: ens.winding_rate_se,
        });
        details.push(json!({ "dynamics": dynamics, "momentum": mom, "ensemble": ens }));
    }
    let svg = line_chart(
        "winding rate against w",
        "w",
        "turns per unit time",
        &[
            Series { label: "walkers", points: rows.iter().map(|r| (r.w, r.winding_rate)).collect() },
            Series { label: "w / 2 pi", points: rows.iter().map(|r| (r.w, r.w / (2.0 * PI))).collect() },
        ],
        false,
        false,
    );
    Ok(Outcome {
        metrics,
        files: vec![
            ("wallstrom.json".into(), to_json(&rows)),
            ("winding_rate.svg".into(), svg.into_bytes()),
        ],
        results: json!({ "rows": rows, "details": details }),
    })
}

/// Fields of two states that differ bitwise.
fn mismatches(a: &HydroState, b: &HydroState) -> usize {
    [
        a.rho() == b.rho(),
        a.current_velocity() == b.current_velocity(),
        a.osmotic_velocity() == b.osmotic_velocity(),
        a.forward_drift() == b.forward_drift(),
        a.backward_drift() == b.backward_drift(),
        a.action() == b.action(),
    ]
    .iter()
    .filter(|same| !**same)
    .count()
}

fn run_reversal(cfg: &ExperimentConfig) -> Result<Outcome, LabError> {
    let units = cfg.units();
    let dt = cfg.ensemble.dt.expect("resolved");
    let gparams = GROUND.params(GROUND.grid(cfg.n_nodes()).map_err(fail)?, units);
    let psi0 = GROUND.initial(&gparams).map_err(fail)?;

    // involution on real, moving and current-carrying states
    let mut states: Vec<(HydroState, PhysParams)> = Vec::new();
    for (b, frac) in [(GROUND, 0.0), (SPREADING, 0.5), (COHERENT, 0.25)] {
        let p = b.params(b.grid(cfg.n_nodes()).map_err(fail)?, units);
        let t = frac * b.characteristic_time(units);
        let traj = evolve(&b.initial(&p).map_err(fail)?, t, 1e-3, &p, usize::MAX).map_err(fail)?;
        states.push((decompose(traj.last().expect("final state"), &p).map_err(fail)?, p));
    }
    let ring = Grid::circle(cfg.n_nodes()).map_err(fail)?;
    let rp = PhysParams::natural(ring);
    let wave = init_packet(Packet::PlaneWave { w: 1.0 }, ring, &rp).map_err(fail)?;
    states.push((decompose(&wave, &rp).map_err(fail)?, rp));
    let mut bad = 0;
    let mut energy_change: f64 = 0.0;
    for (s, p) in &states {
        let r = time_reverse(s);
        bad += mismatches(&time_reverse(&r), s);
        energy_change = energy_change.max((averaged_energy(&r, p) - averaged_energy(s, p)).abs());
        if r.forward_drift().values().iter().zip(s.backward_drift().values()).any(|(a, b)| *a != -*b) {
            bad += 1;
        }
    }
    let mut metrics = vec![
        Metric::at_most("involution_mismatches", bad as f64, 0.0),
        Metric::at_most("energy_change_under_reversal", energy_change, 0.0),
    ];

    // bit-invariance of the symmetric estimator
    let state = decompose(&psi0, &gparams).map_err(fail)?;
    let mut e = Ensemble::from_density(state.rho(), 10_000, cfg.seed()).map_err(fail)?;
    let paths = PathBundle::simulate(&mut e, state.forward_drift(), gparams.nu, dt, 16).map_err(fail)?;
    let rev = paths.reversed();
    let sym = EstimatorSpec::symmetric(gparams.mass);
    let k_fwd = kinetic_estimate(&paths, &sym);
    let k_rev = kinetic_estimate(&rev, &sym);
    metrics.push(Metric::at_most("symmetric_estimator_reversal_change", (k_fwd.value - k_rev.value).abs(), 0.0));
    metrics.push(Metric::flag("symmetric_estimator_bit_identical", k_fwd == k_rev));

    // forward against reversed-clock ensembles
    let n_steps = (cfg.ensemble.t_final.expect("resolved") / dt).round() as usize;
    let checkpoints: Vec<usize> = (0..=4).map(|k| k * n_steps / 4).collect();
    let rows = reversed_clock_check(&psi0, &gparams, cfg.walkers(), dt, n_steps, &checkpoints, cfg.seed())
        .map_err(fail)?;
    let sigma = cfg.tolerance("mc_sigma");
    for r in &rows {
        metrics.push(Metric::at_most(
            format!("t={:.3}.L1_forward_vs_reversed", r.t),
            r.l1_forward_vs_reversed,
            r.mc_expected + sigma * r.mc_sd,
        ));
    }
    let svg = line_chart(
        "forward against reversed-clock histograms",
        "t",
        "L1",
        &[
            Series { label: "forward vs reversed", points: rows.iter().map(|r| (r.t, r.l1_forward_vs_reversed)).collect() },
            Series {
                label: "Monte Carlo limit",
                points: rows.iter().map(|r| (r.t, r.mc_expected + sigma * r.mc_sd)).collect(),
            },
        ],
        false,
        false,
    );
    let results = json!({
        "involution_states": states.len(),
        "symmetric_estimate": k_fwd,
        "reversed_estimate": k_rev,
        "reversed_clock": rows,
    });
    Ok(Outcome {
        metrics,
        files: vec![
            ("reversal.json".into(), to_json(&results)),
            ("reversal.svg".into(), svg.into_bytes()),
        ],
        results,
    })
}
