//! Uniform states on the ring `θ ∈ [0, 2π)` with constant current velocity w,
//! `Ψ = (2π)^{-1/2} exp(i(mwθ - ωt)/ħ)`, including unquantized w.
//!
//! The seam sits at θ = 0, between the last node and node 0. When `mw/ħ` is
//! not an integer the stored Ψ jumps in phase across it; ρ and v stay smooth.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::pairwise_sum;
use crate::fields::{l1_distance, FieldError, Grid, ScalarField};
use crate::madelung::{compose, continuity_residual, decompose, hj_residual, HydroState, MadelungError};
use crate::nelson::{histogram, sampling_l1, Ensemble, NelsonError, NoiseSpec};
use crate::schrodinger::{CrankNicolson, HbarConvention, PhysParams, SchrodingerError, WaveField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircleError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Madelung(#[from] MadelungError),
    #[error(transparent)]
    Schrodinger(#[from] SchrodingerError),
    #[error(transparent)]
    Nelson(#[from] NelsonError),
    #[error("expected a periodic grid of circumference 2π")]
    NotACircle,
    #[error("state and parameters disagree on {0}")]
    ParamMismatch(&'static str),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("ensemble check needs at least 10^4 walkers, got {0}")]
    TooFewWalkers(usize),
}

fn check_circle(grid: &Grid) -> Result<(), CircleError> {
    if !grid.is_periodic() || (grid.length() - 2.0 * PI).abs() > 1e-12 {
        return Err(CircleError::NotACircle);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleState {
    pub w: f64,
    pub mass: f64,
    pub hbar: f64,
    /// `m w² / 2`.
    pub omega: f64,
}

impl CircleState {
    pub fn new(w: f64, mass: f64, hbar: f64) -> Self {
        Self {
            w,
            mass,
            hbar,
            omega: 0.5 * mass * w * w,
        }
    }

    pub fn density(&self) -> f64 {
        1.0 / (2.0 * PI)
    }

    /// `mw/ħ`.
    pub fn quantum_number(&self) -> f64 {
        self.mass * self.w / self.hbar
    }

    pub fn is_quantized(&self) -> bool {
        let k = self.quantum_number();
        (k - k.round()).abs() <= 1e-12 * k.abs().max(1.0)
    }

    /// Phase jump of the stored Ψ across the seam, in `[0, 2π)`.
    pub fn phase_jump(&self) -> f64 {
        2.0 * PI * self.quantum_number().rem_euclid(1.0)
    }

    /// `S(θ + 2π) - S(θ) = 2π m w`.
    pub fn seam_shift(&self) -> f64 {
        2.0 * PI * self.mass * self.w
    }

    /// The branch `S = mwθ - ωt` on `[0, 2π)`.
    pub fn action(&self, grid: Grid, t: f64) -> ScalarField {
        ScalarField::from_fn(grid, |th| self.mass * self.w * th - self.omega * t)
    }

    /// Hydrodynamic state of the exact solution at time t.
    pub fn hydro(&self, params: &PhysParams, t: f64) -> Result<HydroState, CircleError> {
        self.check_params(params)?;
        let grid = *params.grid();
        Ok(HydroState::from_density_action(
            ScalarField::constant(grid, self.density()),
            self.action(grid, t),
            self.seam_shift(),
            params,
            t,
        )?)
    }

    fn check_params(&self, params: &PhysParams) -> Result<(), CircleError> {
        check_circle(params.grid())?;
        if params.mass != self.mass {
            return Err(CircleError::ParamMismatch("mass"));
        }
        if (params.hbar() - self.hbar).abs() > 1e-12 * self.hbar {
            return Err(CircleError::ParamMismatch("hbar"));
        }
        Ok(())
    }
}

/// The state with current velocity w and its wavefunction at t = 0.
pub fn wallstrom_state(w: f64, mass: f64, hbar: f64, grid: Grid) -> Result<(CircleState, WaveField), CircleError> {
    check_circle(&grid)?;
    let state = CircleState::new(w, mass, hbar);
    let psi = compose(
        &ScalarField::constant(grid, state.density()),
        &state.action(grid, 0.0),
        hbar,
    )?;
    Ok((state, psi))
}

/// Natural parameters on `grid` with the given mass and ħ.
pub fn circle_params(grid: Grid, mass: f64, hbar: f64) -> PhysParams {
    PhysParams::from_hbar(grid, mass, 1.0, hbar, HbarConvention::TwoNu)
}

/// Decompose a Ψ stored with a twist `e^{2πik}` across the seam: the smooth
/// factor `Ψ e^{-ikθ}` is decomposed and `ħkθ` is added back to the action.
pub fn decompose_twisted(psi: &WaveField, k: f64, params: &PhysParams) -> Result<HydroState, CircleError> {
    let grid = *psi.grid();
    check_circle(&grid)?;
    let phi: Vec<Complex64> = psi
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| z * Complex64::from_polar(1.0, -k * grid.x(i)))
        .collect();
    let smooth = decompose(&WaveField::new(grid, phi, psi.time())?, params)?;
    let hbar = params.hbar();
    let action = smooth
        .action()
        .zip_with(&ScalarField::from_fn(grid, |th| hbar * k * th), |a, b| a + b)?;
    Ok(HydroState::from_density_action(
        smooth.rho().clone(),
        action,
        smooth.seam_shift() + 2.0 * PI * hbar * k,
        params,
        psi.time(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleDynamicsReport {
    pub w: f64,
    pub omega: f64,
    pub continuity_max: f64,
    pub hj_max: f64,
    /// ω implied by the mean Hamilton–Jacobi residual.
    pub omega_from_residual: f64,
    /// Residual when the phase is advanced at a detuned frequency `ω + δ`.
    pub detuning: f64,
    pub hj_max_detuned: f64,
}

/// Residuals of the exact solution between t = 0 and t = dt.
pub fn check_circle_dynamics(state: &CircleState, params: &PhysParams, dt: f64) -> Result<CircleDynamicsReport, CircleError> {
    if !(dt > 0.0) {
        return Err(CircleError::BadTimeStep(dt));
    }
    let s0 = state.hydro(params, 0.0)?;
    let s1 = state.hydro(params, dt)?;
    let hj = hj_residual(&s0, &s1, params)?;
    let cont = continuity_residual(&s0, &s1)?;
    let mean = hj.field.values().iter().sum::<f64>() / hj.field.values().len() as f64;
    let detuning = 1e-3 * state.omega.max(1.0);
    let detuned = CircleState {
        omega: state.omega + detuning,
        ..*state
    };
    let hj_detuned = hj_residual(&s0, &detuned.hydro(params, dt)?, params)?;
    Ok(CircleDynamicsReport {
        w: state.w,
        omega: state.omega,
        continuity_max: cont.max_abs(),
        hj_max: hj.max_abs(),
        omega_from_residual: state.omega + mean,
        detuning,
        hj_max_detuned: hj_detuned.max_abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RippleConfig {
    /// Relative amplitude ε of `ρ = (1 + ε cos θ)/2π`.
    pub amplitude: f64,
    pub grids: Vec<usize>,
    pub dt: f64,
    pub t_eval: f64,
}

impl Default for RippleConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.01,
            grids: vec![128, 256],
            dt: 1e-4,
            t_eval: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RippleRow {
    pub n_nodes: usize,
    /// Residuals of the uniform ansatz (frozen rippled ρ, `S = mwθ - ωt`).
    pub ansatz_hj_max: f64,
    pub ansatz_continuity_max: f64,
    /// Residuals of consecutive oracle states at `t_eval`.
    pub oracle_hj_max: f64,
    pub oracle_continuity_max: f64,
}

/// A rippled density is not a uniform solution, so the ansatz leaves a
/// residual of order ε; the oracle-evolved state satisfies both equations to
/// discretization accuracy, shrinking under refinement. Unquantized w is
/// evolved with the matching twisted boundary condition.
pub fn ripple_regression(state: &CircleState, cfg: &RippleConfig) -> Result<Vec<RippleRow>, CircleError> {
    let k = state.quantum_number();
    let mut rows = Vec::with_capacity(cfg.grids.len());
    for &n in &cfg.grids {
        let grid = Grid::circle(n)?;
        let params = circle_params(grid, state.mass, state.hbar);
        let rho = crate::fields::normalize(&ScalarField::from_fn(grid, |th| 1.0 + cfg.amplitude * th.cos()))?;
        let frozen = |t| {
            HydroState::from_density_action(rho.clone(), state.action(grid, t), state.seam_shift(), &params, t)
        };
        let a0 = frozen(0.0)?;
        let a1 = frozen(cfg.dt)?;
        let mut psi = compose(&rho, &state.action(grid, 0.0), state.hbar)?;
        let prop = CrankNicolson::twisted(&params, cfg.dt, 2.0 * PI * k)?;
        let steps = (cfg.t_eval / cfg.dt).round() as usize;
        for _ in 0..steps {
            psi = prop.step(&psi)?;
        }
        let o0 = decompose_twisted(&psi, k, &params)?;
        let o1 = decompose_twisted(&prop.step(&psi)?, k, &params)?;
        rows.push(RippleRow {
            n_nodes: n,
            ansatz_hj_max: hj_residual(&a0, &a1, &params)?.max_abs(),
            ansatz_continuity_max: continuity_residual(&a0, &a1)?.max_abs(),
            oracle_hj_max: hj_residual(&o0, &o1, &params)?.max_abs(),
            oracle_continuity_max: continuity_residual(&o0, &o1)?.max_abs(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentumReport {
    pub w: f64,
    /// `mw/ħ`.
    pub quantum_number: f64,
    pub quantized: bool,
    /// `|−iħ DΨ − mw Ψ̄|` in the seam cell (last node to node 0).
    pub seam_residual: f64,
    pub interior_residual_max: f64,
    /// Discretization bound `ħ|k|³h²/(12√2π)`, doubled, plus rounding slack.
    pub interior_tolerance: f64,
    /// True when the seam residual is far above the discretization bound.
    pub localized: bool,
    pub norm: f64,
}

/// Cell residuals of `−iħ∂Ψ = mwΨ` with the derivative `(Ψ_{i+1} − Ψ_i)/h`
/// and Ψ averaged over the cell.
pub fn momentum_eigen_check(psi: &WaveField, w: f64, mass: f64, hbar: f64) -> Result<MomentumReport, CircleError> {
    let grid = *psi.grid();
    check_circle(&grid)?;
    let n = grid.n_nodes();
    let h = grid.spacing();
    let p = mass * w;
    let v = psi.values();
    let cell = |i: usize| {
        let j = (i + 1) % n;
        let d = (v[j] - v[i]) / h;
        (Complex64::new(0.0, -hbar) * d - p * 0.5 * (v[i] + v[j])).norm()
    };
    let interior_residual_max = (0..n - 1).map(cell).fold(0.0, f64::max);
    let seam_residual = cell(n - 1);
    let k = p / hbar;
    let interior_tolerance = 2.0 * hbar * k.abs().powi(3) * h * h / (12.0 * (2.0 * PI).sqrt()) + 1e-10;
    let norm = psi.norm_sqr().sqrt();
    let state = CircleState::new(w, mass, hbar);
    Ok(MomentumReport {
        w,
        quantum_number: k,
        quantized: state.is_quantized(),
        seam_residual,
        interior_residual_max,
        interior_tolerance,
        localized: seam_residual > 10.0 * interior_tolerance.max(interior_residual_max),
        norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircleEnsembleConfig {
    pub walkers: usize,
    pub t_final: f64,
    /// The drift is constant, so Euler–Maruyama is exact for any step.
    pub dt: f64,
    pub hist_nodes: usize,
    pub seed: u64,
}

impl Default for CircleEnsembleConfig {
    fn default() -> Self {
        Self {
            walkers: 100_000,
            t_final: 10.0,
            dt: 1e-2,
            hist_nodes: 64,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircleEnsembleReport {
    pub w: f64,
    pub l1_uniform: f64,
    /// Expected L1 of an N-sample histogram of the uniform density, and its spread.
    pub l1_expected: f64,
    pub l1_sd: f64,
    /// Mean turns per unit time and its standard error.
    pub winding_rate: f64,
    pub winding_rate_se: f64,
    pub expected_rate: f64,
}

/// Walkers under `b = v + u = w` from a uniform start; compares the final
/// histogram with `1/2π` and the mean winding rate with `w/2π`.
pub fn circle_ensemble_check(
    state: &CircleState,
    params: &PhysParams,
    cfg: &CircleEnsembleConfig,
) -> Result<CircleEnsembleReport, CircleError> {
    if cfg.walkers < 10_000 {
        return Err(CircleError::TooFewWalkers(cfg.walkers));
    }
    if !(cfg.dt > 0.0) {
        return Err(CircleError::BadTimeStep(cfg.dt));
    }
    let hydro = state.hydro(params, 0.0)?;
    let mut e = Ensemble::from_density(hydro.rho(), cfg.walkers, cfg.seed)?;
    let start = e.unwrapped();
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    for _ in 0..steps {
        e.sde_step(hydro.forward_drift(), NoiseSpec::forward(params.nu, cfg.dt))?;
    }
    let t = steps as f64 * cfg.dt;
    let rates: Vec<f64> = e
        .unwrapped()
        .iter()
        .zip(&start)
        .map(|(x, x0)| (x - x0) / (2.0 * PI * t))
        .collect();
    let nw = rates.len() as f64;
    let mean = pairwise_sum(&rates) / nw;
    let dev: Vec<f64> = rates.iter().map(|r| (r - mean) * (r - mean)).collect();
    let se = (pairwise_sum(&dev) / (nw - 1.0) / nw).sqrt();
    let hist_grid = Grid::circle(cfg.hist_nodes)?;
    let uniform = ScalarField::constant(hist_grid, state.density());
    let (l1_expected, l1_sd) = sampling_l1(&uniform, cfg.walkers);
    Ok(CircleEnsembleReport {
        w: state.w,
        l1_uniform: l1_distance(&histogram(&e, &hist_grid), &uniform)?,
        l1_expected,
        l1_sd,
        winding_rate: mean,
        winding_rate_se: se,
        expected_rate: state.w / (2.0 * PI),
    })
}

/// One line of the circle suite in the reported JSON layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WallstromRow {
    pub w: f64,
    pub omega: f64,
    pub seam_residual: f64,
    pub interior_residual_max: f64,
    pub winding_rate: f64,
    pub winding_rate_se: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_follow_mw2_over_2() {
        assert_eq!(CircleState::new(1.0, 1.0, 1.0).omega, 0.5);
        assert_eq!(CircleState::new(0.0, 1.0, 1.0).omega, 0.0);
        assert_eq!(CircleState::new(2.0, 3.0, 1.0).omega, 6.0);
    }

    #[test]
    fn line_grids_are_rejected() {
        let line = Grid::line(64, 0.0, 2.0 * PI).unwrap();
        assert_eq!(wallstrom_state(1.0, 1.0, 1.0, line).unwrap_err(), CircleError::NotACircle);
        let short = Grid::new(64, 0.05, crate::fields::Topology::Periodic, 0.0).unwrap();
        assert_eq!(wallstrom_state(1.0, 1.0, 1.0, short).unwrap_err(), CircleError::NotACircle);
    }

    #[test]
    fn ground_state_has_zero_action() {
        let grid = Grid::circle(32).unwrap();
        let (s, psi) = wallstrom_state(0.0, 1.0, 1.0, grid).unwrap();
        assert!(s.action(grid, 0.0).values().iter().all(|&a| a == 0.0));
        assert!(psi.values().iter().all(|z| z.im == 0.0 && z.re > 0.0));
    }

    #[test]
    fn phase_jump_is_fractional_part() {
        let s = CircleState::new(0.3, 1.0, 1.0);
        assert!((s.phase_jump() - 0.6 * PI).abs() < 1e-12);
        assert!(!s.is_quantized());
        assert!(CircleState::new(2.0, 1.0, 1.0).is_quantized());
        assert_eq!(CircleState::new(2.0, 1.0, 1.0).phase_jump(), 0.0);
    }
}
