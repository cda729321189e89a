//! Kinetic-energy estimators built from difference quotients of walker paths.
//!
//! For a path sampled at interval dt the estimator is
//! `(m/2)·avg[α(Δ₊x/dt)² + β(Δ₋x/dt)²]` with `α + β = 1`. Its expectation is
//! `(m/2)∫ρ[v² + u² + 2(α-β)v·u] + C` with `C = mν/dt`, equivalently
//! `νm/(2τ)` under `τ = dt/2`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::benchmarks::{Benchmark, Units};
use crate::fields::{integrate, FieldError, Grid, ScalarField, VectorField};
use crate::madelung::{averaged_energy, decompose, HydroState, MadelungError};
use crate::nelson::{Ensemble, NelsonError, NoiseSpec};
use crate::schrodinger::{evolve, SchrodingerError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Madelung(#[from] MadelungError),
    #[error(transparent)]
    Nelson(#[from] NelsonError),
    #[error(transparent)]
    Schrodinger(#[from] SchrodingerError),
    #[error("need at least 3 samples per path, got {0}")]
    TooShort(usize),
    #[error("path data has {got} values, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("weights must be non-negative with alpha + beta = 1, got ({alpha}, {beta})")]
    Weights { alpha: f64, beta: f64 },
    #[error("argument must be positive, got {0}")]
    NonPositive(f64),
    #[error("experiment underpowered: |(m/2)∫ρ v·u| = {signal:e} is below 5x its Monte-Carlo error {stderr:e}")]
    Underpowered { signal: f64, stderr: f64 },
    #[error("fit needs at least two time steps with positive excess energy")]
    Fit,
}

/// N walkers × T samples, stored walker-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: Grid,
    dt: f64,
    n_walkers: usize,
    n_times: usize,
    data: Vec<f64>,
}

impl PathBundle {
    pub fn new(
        grid: Grid,
        dt: f64,
        n_walkers: usize,
        n_times: usize,
        data: Vec<f64>,
    ) -> Result<Self, EstimatorError> {
        if n_times < 3 {
            return Err(EstimatorError::TooShort(n_times));
        }
        if !(dt > 0.0) {
            return Err(EstimatorError::NonPositive(dt));
        }
        if data.len() != n_walkers * n_times {
            return Err(EstimatorError::Shape {
                got: data.len(),
                expected: n_walkers * n_times,
            });
        }
        Ok(Self {
            grid,
            dt,
            n_walkers,
            n_times,
            data,
        })
    }

    /// Bundle from time-major snapshots (one `Vec` of positions per time).
    pub fn from_snapshots(grid: Grid, dt: f64, snapshots: &[Vec<f64>]) -> Result<Self, EstimatorError> {
        let t = snapshots.len();
        let n = snapshots.first().map_or(0, Vec::len);
        let mut data = vec![0.0; n * t];
        for (k, snap) in snapshots.iter().enumerate() {
            if snap.len() != n {
                return Err(EstimatorError::Shape {
                    got: snap.len(),
                    expected: n,
                });
            }
            for (w, &x) in snap.iter().enumerate() {
                data[w * t + k] = x;
            }
        }
        Self::new(grid, dt, n, t, data)
    }

    /// `n_times` consecutive Euler–Maruyama states of `ensemble` under a fixed drift.
    pub fn simulate(
        ensemble: &mut Ensemble,
        drift: &VectorField,
        nu: f64,
        dt: f64,
        n_times: usize,
    ) -> Result<Self, EstimatorError> {
        let mut snaps = vec![ensemble.unwrapped()];
        for _ in 1..n_times {
            ensemble.sde_step(drift, NoiseSpec::forward(nu, dt))?;
            snaps.push(ensemble.unwrapped());
        }
        Self::from_snapshots(*ensemble.grid(), dt, &snaps)
    }

    /// Three-sample paths around centres drawn at time t:
    /// `x(t-dt) = x - b*·dt + √(2ν dt)ξ'` and `x(t+dt) = x + b·dt + √(2ν dt)ξ`
    /// with independent noises. `seed` feeds the two legs.
    pub fn two_sided(
        centres: &[f64],
        grid: Grid,
        b_fwd: &VectorField,
        b_bwd: &VectorField,
        nu: f64,
        dt: f64,
        seed: u64,
    ) -> Result<Self, EstimatorError> {
        let mut fwd = Ensemble::from_positions(grid, centres.to_vec(), seed)?;
        fwd.sde_step(b_fwd, NoiseSpec::forward(nu, dt))?;
        let mut bwd = Ensemble::from_positions(grid, centres.to_vec(), seed ^ 0x5851_f42d_4c95_7f2d)?;
        bwd.sde_step(b_bwd, NoiseSpec::backward(nu, dt))?;
        let (f, b) = (fwd.unwrapped(), bwd.unwrapped());
        let data = centres
            .iter()
            .zip(f.iter().zip(&b))
            .flat_map(|(&c, (&xf, &xb))| [xb, c, xf])
            .collect();
        Self::new(grid, dt, centres.len(), 3, data)
    }

    /// Same paths with the time order of every walker reversed.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.n_times) {
            row.reverse();
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn n_walkers(&self) -> usize {
        self.n_walkers
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn path(&self, walker: usize) -> &[f64] {
        &self.data[walker * self.n_times..(walker + 1) * self.n_times]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSpec {
    pub alpha: f64,
    pub beta: f64,
    pub mass: f64,
}

impl EstimatorSpec {
    pub fn new(alpha: f64, beta: f64, mass: f64) -> Result<Self, EstimatorError> {
        if !(alpha >= 0.0 && beta >= 0.0 && (alpha + beta - 1.0).abs() <= 1e-12) {
            return Err(EstimatorError::Weights { alpha, beta });
        }
        Ok(Self { alpha, beta, mass })
    }

    pub fn with_alpha(alpha: f64, mass: f64) -> Result<Self, EstimatorError> {
        Self::new(alpha, 1.0 - alpha, mass)
    }

    pub fn symmetric(mass: f64) -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            mass,
        }
    }
}

/// Estimate with its Monte-Carlo standard error over walkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Sum with a fixed binary split, independent of thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sum of `t` that is bit-identical for `t` and `t` reversed: mirror pairs are
/// added first, then the pair sums in order.
fn palindromic_sum(t: &[f64]) -> f64 {
    let n = t.len();
    let mut s = 0.0;
    for i in 0..n / 2 {
        s += t[i] + t[n - 1 - i];
    }
    if n % 2 == 1 {
        s += t[n / 2];
    }
    s
}

fn walker_terms(paths: &PathBundle, spec: &EstimatorSpec) -> Vec<f64> {
    let grid = paths.grid;
    let scale = 0.5 * spec.mass / (paths.dt * paths.dt);
    let interior = (paths.n_times - 2) as f64;
    paths
        .data
        .par_chunks(paths.n_times)
        .map(|row| {
            let d: Vec<f64> = row.windows(2).map(|w| grid.displacement(w[0], w[1])).collect();
            let terms: Vec<f64> = (1..row.len() - 1)
                .map(|k| spec.alpha * d[k] * d[k] + spec.beta * d[k - 1] * d[k - 1])
                .collect();
            scale * palindromic_sum(&terms) / interior
        })
        .collect()
}

fn mean_and_stderr(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = if xs.len() > 1 {
        pairwise_sum(&dev) / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        stderr: (var / n).sqrt(),
    }
}

/// `(m/2)·avg[α(Δ₊x/dt)² + β(Δ₋x/dt)²]` over walkers and interior times;
/// increments are shortest-arc on circles.
pub fn kinetic_estimate(paths: &PathBundle, spec: &EstimatorSpec) -> Estimate {
    mean_and_stderr(&walker_terms(paths, spec))
}

/// `mν/dt`.
pub fn noise_constant(nu: f64, mass: f64, dt: f64) -> Result<f64, EstimatorError> {
    if !(dt > 0.0) {
        return Err(EstimatorError::NonPositive(dt));
    }
    Ok(mass * nu / dt)
}

/// `νm/(2τ)`; equals [`noise_constant`] at `τ = dt/2`.
pub fn noise_constant_tau(nu: f64, mass: f64, tau: f64) -> Result<f64, EstimatorError> {
    if !(tau > 0.0) {
        return Err(EstimatorError::NonPositive(tau));
    }
    Ok(nu * mass / (2.0 * tau))
}

/// `(m/2)∫ρ v·u`.
pub fn vu_term(state: &HydroState, mass: f64) -> f64 {
    let v = state.current_velocity().values();
    let u = state.osmotic_velocity().values();
    let f = ScalarField::new(*state.grid(), v.iter().zip(u).map(|(a, b)| a * b).collect())
        .expect("same grid");
    0.5 * mass * integrate(&state.rho().zip_with(&f, |r, g| r * g).expect("same grid"))
}

/// `(m/2)∫ρ(v² + u²)`.
pub fn symmetric_kinetic(state: &HydroState, mass: f64) -> f64 {
    let v = state.current_velocity().values();
    let u = state.osmotic_velocity().values();
    let rho = state.rho().values();
    let f: Vec<f64> = (0..rho.len()).map(|i| rho[i] * (v[i] * v[i] + u[i] * u[i])).collect();
    0.5 * mass * integrate(&ScalarField::new(*state.grid(), f).expect("same grid"))
}

/// `(m/2)∫ρ[v² + u² + 2(α-β)v·u] + mν/dt`.
pub fn predicted_kinetic(
    state: &HydroState,
    spec: &EstimatorSpec,
    nu: f64,
    dt: f64,
) -> Result<f64, EstimatorError> {
    Ok(symmetric_kinetic(state, spec.mass)
        + 2.0 * (spec.alpha - spec.beta) * vu_term(state, spec.mass)
        + noise_constant(nu, spec.mass, dt)?)
}

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub alpha: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub predicted: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub dt: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Within 3 standard errors of the conserved energy plus C.
    pub matches_energy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSweep {
    pub rows: Vec<BiasRow>,
    /// `(m/2)∫ρ v·u` from quadrature.
    pub vu_term: f64,
    /// Fitted coefficient of `2(α-β)` in `K(α) - K(½)`, and its standard error.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Averaged energy of the state plus C.
    pub energy_plus_c: f64,
    /// `C` keyed by τ = dt/2, shown next to the dt form.
    pub c_tau: f64,
}

impl AlphaSweep {
    pub fn slope_ratio(&self) -> f64 {
        self.slope / self.vu_term
    }

    pub fn slope_ratio_stderr(&self) -> f64 {
        self.slope_stderr / self.vu_term.abs()
    }

    /// True when α = ½ is the only swept weight matching the conserved energy.
    pub fn symmetric_unique(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.matches_energy == (r.alpha == 0.5))
    }
}

/// Estimates for each α on one bundle, compared with the prediction from `state`.
pub fn alpha_sweep(
    paths: &PathBundle,
    state: &HydroState,
    params_energy: f64,
    mass: f64,
    nu: f64,
    alphas: &[f64],
) -> Result<AlphaSweep, EstimatorError> {
    let c = noise_constant(nu, mass, paths.dt)?;
    let energy_plus_c = params_energy + c;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let spec = EstimatorSpec::with_alpha(alpha, mass)?;
        let est = kinetic_estimate(paths, &spec);
        rows.push(BiasRow {
            alpha,
            estimate: est.value,
            stderr: est.stderr,
            predicted: predicted_kinetic(state, &spec, nu, paths.dt)?,
            c,
            dt: paths.dt,
            n: paths.n_walkers,
            matches_energy: (est.value - energy_plus_c).abs() <= 3.0 * est.stderr,
        });
    }
    // K(α) - K(½) = (α-½)·mean(A - B) with A, B the forward and backward
    // squared quotients; the coefficient of 2(α-β) = 4(α-½) is mean(A - B)/4.
    let fwd = walker_terms(paths, &EstimatorSpec::with_alpha(1.0, mass)?);
    let bwd = walker_terms(paths, &EstimatorSpec::with_alpha(0.0, mass)?);
    let diff: Vec<f64> = fwd.iter().zip(&bwd).map(|(a, b)| 0.25 * (a - b)).collect();
    let d = mean_and_stderr(&diff);
    Ok(AlphaSweep {
        rows,
        vu_term: vu_term(state, mass),
        slope: d.value,
        slope_stderr: d.stderr,
        energy_plus_c,
        c_tau: noise_constant_tau(nu, mass, paths.dt / 2.0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasConfig {
    pub benchmark: Benchmark,
    pub units: Units,
    pub n_nodes: usize,
    pub walkers: usize,
    pub dt: f64,
    pub alphas: Vec<f64>,
    /// Evaluation time in units of the benchmark's characteristic time.
    pub eval_fraction: f64,
    /// Oracle step used to reach the evaluation time.
    pub dt_oracle: f64,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::SpreadingGaussian {
                width: 0.04,
                half_width: 1.0,
            },
            units: Units::default(),
            n_nodes: 2048,
            walkers: 100_000,
            dt: 1e-3,
            alphas: DEFAULT_ALPHAS.to_vec(),
            eval_fraction: 1.0,
            dt_oracle: 1e-5,
            seed: 2024,
        }
    }
}

/// α-sweep on the state reached by the oracle at the evaluation time, using
/// two-sided paths around walkers drawn from its density.
pub fn bias_experiment(cfg: &BiasConfig) -> Result<AlphaSweep, EstimatorError> {
    let grid = cfg.benchmark.grid(cfg.n_nodes)?;
    let params = cfg.benchmark.params(grid, cfg.units);
    let psi0 = cfg.benchmark.initial(&params)?;
    let t_eval = cfg.eval_fraction * cfg.benchmark.characteristic_time(cfg.units);
    let traj = evolve(&psi0, t_eval, cfg.dt_oracle, &params, usize::MAX)?;
    let psi = traj.last().expect("evolve returns the final state");
    let state = decompose(psi, &params)?;
    let centres = Ensemble::from_density(state.rho(), cfg.walkers, cfg.seed)?;
    let paths = PathBundle::two_sided(
        centres.positions(),
        grid,
        state.forward_drift(),
        state.backward_drift(),
        params.nu,
        cfg.dt,
        cfg.seed.wrapping_add(1),
    )?;
    let sweep = alpha_sweep(
        &paths,
        &state,
        averaged_energy(&state, &params),
        params.mass,
        params.nu,
        &cfg.alphas,
    )?;
    if sweep.vu_term.abs() < 5.0 * sweep.slope_stderr {
        return Err(EstimatorError::Underpowered {
            signal: sweep.vu_term.abs(),
            stderr: sweep.slope_stderr,
        });
    }
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub dt: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `(m/2)∫ρ(v² + u²)`.
    pub reference: f64,
    pub excess: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub c_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub rows: Vec<ScalingRow>,
    /// Exponent and amplitude of `excess ≈ A·dt^p`.
    pub exponent: f64,
    pub amplitude: f64,
    /// `A / (mν)`.
    pub amplitude_ratio: f64,
}

/// Least-squares fit of `log(excess)` against `log(dt)`.
pub fn fit_power_law(rows: Vec<ScalingRow>, mass: f64, nu: f64) -> Result<ScalingFit, EstimatorError> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.excess > 0.0)
        .map(|r| (r.dt.ln(), r.excess.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(EstimatorError::Fit);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(EstimatorError::Fit);
    }
    let exponent = sxy / sxx;
    let amplitude = (my - exponent * mx).exp();
    Ok(ScalingFit {
        rows,
        exponent,
        amplitude,
        amplitude_ratio: amplitude / (mass * nu),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingConfig {
    pub benchmark: Benchmark,
    pub units: Units,
    pub n_nodes: usize,
    pub walkers: usize,
    pub dts: Vec<f64>,
    pub n_times: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::GroundState {
                omega0: 1.0,
                half_width: 8.0,
            },
            units: Units::default(),
            n_nodes: 256,
            walkers: 100_000,
            dts: vec![4e-3, 2e-3, 1e-3],
            n_times: 12,
            seed: 7,
        }
    }
}

/// Symmetric estimator on Euler–Maruyama paths of a stationary state, minus
/// `(m/2)∫ρ(v² + u²)`, fitted against `dt`.
pub fn noise_scaling(cfg: &ScalingConfig) -> Result<ScalingFit, EstimatorError> {
    let grid = cfg.benchmark.grid(cfg.n_nodes)?;
    let params = cfg.benchmark.params(grid, cfg.units);
    let state = decompose(&cfg.benchmark.initial(&params)?, &params)?;
    let reference = symmetric_kinetic(&state, params.mass);
    let spec = EstimatorSpec::symmetric(params.mass);
    let mut rows = Vec::with_capacity(cfg.dts.len());
    for (i, &dt) in cfg.dts.iter().enumerate() {
        let mut e = Ensemble::from_density(state.rho(), cfg.walkers, cfg.seed.wrapping_add(i as u64))?;
        let paths = PathBundle::simulate(&mut e, state.forward_drift(), params.nu, dt, cfg.n_times)?;
        let est = kinetic_estimate(&paths, &spec);
        rows.push(ScalingRow {
            dt,
            estimate: est.value,
            stderr: est.stderr,
            reference,
            excess: est.value - reference,
            c: noise_constant(params.nu, params.mass, dt)?,
            c_tau: noise_constant_tau(params.nu, params.mass, dt / 2.0)?,
        });
    }
    fit_power_law(rows, params.mass, params.nu)
}
