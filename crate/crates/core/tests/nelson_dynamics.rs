use std::f64::consts::PI;

use nelson_core::benchmarks::{Benchmark, Units};
use nelson_core::fields::{integrate, l1_distance, moments, Grid, ScalarField};
use nelson_core::madelung::decompose;
use nelson_core::nelson::*;
use nelson_core::schrodinger::{evolve, init_packet, Packet, PhysParams};

fn ground_on(n: usize) -> (Benchmark, PhysParams) {
    let b = Benchmark::GroundState {
        omega0: 1.0,
        half_width: 8.0,
    };
    let p = b.params(b.grid(n).unwrap(), Units::default());
    (b, p)
}

fn ground() -> (Benchmark, PhysParams) {
    ground_on(256)
}

#[test]
fn ground_state_ensemble_stays_stationary() {
    let (b, p) = ground();
    let psi = b.initial(&p).unwrap();
    let traj = evolve(&psi, 5.0, 1e-3, &p, 1).unwrap();
    let rho0 = psi.density();
    let mut e = Ensemble::from_density(&rho0, 100_000, 3).unwrap();
    let hist = evolve_ensemble(&mut e, &traj, &p, 1e-3, 1000).unwrap();
    assert_eq!(hist.times.len(), 6);
    assert!((e.time() - 5.0).abs() < 1e-9);
    let l1 = l1_distance(&histogram(&e, p.grid()), &rho0).unwrap();
    assert!(l1 <= 0.03, "L1 = {l1}");
}

#[test]
fn spreading_gaussian_variance_tracks_oracle() {
    let b = Benchmark::SpreadingGaussian {
        width: 1.0,
        half_width: 12.0,
    };
    let p = b.params(b.grid(512).unwrap(), Units::default());
    let psi = b.initial(&p).unwrap();
    let dt = 1e-3;
    let traj = evolve(&psi, 2.0, dt, &p, 10).unwrap();
    let mut e = Ensemble::from_density(&psi.density(), 100_000, 5).unwrap();
    let hist = evolve_ensemble(&mut e, &traj, &p, dt, 500).unwrap();
    for (t, xs) in hist.times.iter().zip(&hist.positions) {
        let k = traj.iter().position(|s| (s.time() - t).abs() < 1e-9).unwrap();
        let (_, oracle) = moments(&traj[k].density());
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / oracle - 1.0).abs() <= 0.02, "t={t}: {var} vs {oracle}");
    }
}

#[test]
fn plane_wave_walkers_advance_at_w() {
    let grid = Grid::circle(128).unwrap();
    let p = PhysParams::natural(grid);
    let w = 1.0;
    let psi = init_packet(Packet::PlaneWave { w }, grid, &p).unwrap();
    let dt = 1e-2;
    let traj = evolve(&psi, 2.0, dt, &p, 1).unwrap();
    let mut e = Ensemble::from_density(&psi.density(), 20_000, 8).unwrap();
    let start = e.unwrapped();
    evolve_ensemble(&mut e, &traj, &p, dt, 1).unwrap();
    let d: Vec<f64> = e.unwrapped().iter().zip(&start).map(|(a, b)| (a - b) / 2.0).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - w).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn uneven_trajectories_are_rejected() {
    let (b, p) = ground();
    let psi = b.initial(&p).unwrap();
    let traj = evolve(&psi, 0.01, 1e-3, &p, 3).unwrap();
    let mut e = Ensemble::from_density(&psi.density(), 100, 1).unwrap();
    assert!(evolve_ensemble(&mut e, &traj, &p, 2e-3, 1).is_err());
    assert!(evolve_ensemble(&mut e, &[], &p, 1e-3, 1).is_err());
}

#[test]
fn ground_state_density_is_a_fokker_planck_fixed_point() {
    let (b, p) = ground_on(384);
    let state = decompose(&b.initial(&p).unwrap(), &p).unwrap();
    for (dir, drift) in [
        (Direction::Forward, state.forward_drift()),
        (Direction::Backward, state.backward_drift()),
    ] {
        let out = fokker_planck_step(state.rho(), drift, p.nu, 1e-3, dir).unwrap();
        let change = out
            .density
            .values()
            .iter()
            .zip(state.rho().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(change <= 1e-6, "{dir:?}: {change}");
        assert!(out.valid());
    }
}

#[test]
fn forward_and_backward_fokker_planck_agree_on_the_current() {
    // the half-sum of the two equations is continuity with v
    let b = Benchmark::CoherentState {
        omega0: 1.0,
        displacement: 2.0,
        half_width: 10.0,
    };
    let p = b.params(b.grid(512).unwrap(), Units::default());
    let traj = evolve(&b.initial(&p).unwrap(), 0.5, 1e-3, &p, usize::MAX).unwrap();
    let s = decompose(traj.last().unwrap(), &p).unwrap();
    let dt = 1e-4;
    let fwd = fokker_planck_step(s.rho(), s.forward_drift(), p.nu, dt, Direction::Forward).unwrap();
    let bwd = fokker_planck_step(s.rho(), s.backward_drift(), p.nu, dt, Direction::Backward).unwrap();
    // ρ(t+dt) - ρ(t-dt) over 2dt against -∇·(ρv)
    let flux = s.rho().zip_with(&s.current_velocity().clone().into_scalar(), |r, v| r * v).unwrap();
    let div = nelson_core::fields::divergence(&flux.into_vector()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..512 {
        let rate = (fwd.density[i] - bwd.density[i]) / (2.0 * dt);
        worst = worst.max((rate + div[i]).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn triangle_holds_for_spreading_gaussian_at_small_scale() {
    let b = Benchmark::SpreadingGaussian {
        width: 1.0,
        half_width: 12.0,
    };
    let p = b.params(b.grid(256).unwrap(), Units::default());
    let psi = b.initial(&p).unwrap();
    let r = triangle(&psi, &p, 20_000, 2e-3, &[0, 250, 500], 17).unwrap();
    assert_eq!(r.comparisons.len(), 3);
    for c in &r.comparisons {
        let (mean, sd) = sampling_l1(&psi.density(), 20_000);
        assert!(c.l1_sde_vs_psi2 <= mean + 5.0 * sd + 0.01, "{c:?}");
        assert!(c.l1_fp_vs_psi2 <= 1e-3, "{c:?}");
    }
    assert!((integrate(&r.final_fp) - 1.0).abs() < 1e-10);
}

#[test]
fn reversed_clock_matches_forward_on_ground_state() {
    let (b, p) = ground();
    let psi = b.initial(&p).unwrap();
    let rows = reversed_clock_check(&psi, &p, 50_000, 1e-3, 500, &[0, 250, 500], 4).unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r.l1_forward_vs_reversed <= r.mc_expected + 3.0 * r.mc_sd, "{r:?}");
    }
}

#[test]
fn time_reverse_flips_plane_wave_and_fixes_real_states() {
    let grid = Grid::circle(64).unwrap();
    let p = PhysParams::natural(grid);
    let fwd = decompose(&init_packet(Packet::PlaneWave { w: 2.0 }, grid, &p).unwrap(), &p).unwrap();
    let back = decompose(&init_packet(Packet::PlaneWave { w: -2.0 }, grid, &p).unwrap(), &p).unwrap();
    let rev = time_reverse(&fwd);
    for i in 0..64 {
        assert!((rev.current_velocity()[i] - back.current_velocity()[i]).abs() < 1e-10);
        assert_eq!(rev.osmotic_velocity()[i], fwd.osmotic_velocity()[i]);
        assert_eq!(rev.forward_drift()[i], -fwd.backward_drift()[i]);
    }
    let (b, gp) = ground();
    let real = decompose(&b.initial(&gp).unwrap(), &gp).unwrap();
    let r = time_reverse(&real);
    assert_eq!(r.current_velocity(), real.current_velocity());
    assert_eq!(r.rho(), real.rho());
}

#[test]
fn snapshot_csv_layout() {
    let grid = Grid::circle(16).unwrap();
    let flat = ScalarField::constant(grid, 1.0 / (2.0 * PI));
    let e = Ensemble::from_density(&flat, 10, 1).unwrap();
    let mut buf = Vec::new();
    e.write_csv_rows(3, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.starts_with("0,") && l.split(',').count() == 3));
}
