//! Walker ensembles driven by `dx = b dt + dw`, Fokker–Planck propagation of
//! densities, and the time-reversal map.
//!
//! Random numbers come from ChaCha8 streams, one per fixed block of
//! [`STREAM_BLOCK`] walkers, all derived from a single master seed. Blocks are
//! processed in parallel but each block consumes only its own stream, so
//! results do not depend on the number of threads.

use std::f64::consts::PI;
use std::io::{self, Write};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{integrate, l1_distance, FieldError, Grid, ScalarField, VectorField};
use crate::madelung::{decompose, HydroState, MadelungError};
use crate::schrodinger::{CrankNicolson, PhysParams, SchrodingerError, WaveField};

/// Walkers sharing one RNG stream.
pub const STREAM_BLOCK: usize = 1024;

/// Clipped mass per Fokker–Planck step above which a run is marked invalid.
pub const CLIP_LIMIT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NelsonError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Madelung(#[from] MadelungError),
    #[error(transparent)]
    Schrodinger(#[from] SchrodingerError),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("diffusion constant must be non-negative, got {0}")]
    BadDiffusion(f64),
    #[error("ensemble needs at least one walker")]
    Empty,
    #[error("walker left the domain at x = {0} after reflection; reduce dt")]
    WalkerEscaped(f64),
    #[error("drift lives on a different grid")]
    GridMismatch,
    #[error("CFL violated: dt = {dt} exceeds {limit} ({reason})")]
    Cfl {
        dt: f64,
        limit: f64,
        reason: &'static str,
    },
    #[error("wave trajectory is empty or unevenly spaced relative to dt = {0}")]
    Trajectory(f64),
}

/// Direction of the clock for a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `dx = b dt + dw`, time advances.
    Forward,
    /// Reversed clock: `x(t - dt) = x(t) - b* dt + dw`, with fresh forward
    /// noise of variance `2ν dt`; time decreases.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub nu: f64,
    pub dt: f64,
    pub direction: Direction,
}

impl NoiseSpec {
    pub fn forward(nu: f64, dt: f64) -> Self {
        Self {
            nu,
            dt,
            direction: Direction::Forward,
        }
    }

    pub fn backward(nu: f64, dt: f64) -> Self {
        Self {
            nu,
            dt,
            direction: Direction::Backward,
        }
    }

    fn check(&self) -> Result<(), NelsonError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(NelsonError::BadTimeStep(self.dt));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(NelsonError::BadDiffusion(self.nu));
        }
        Ok(())
    }
}

/// N walkers on a grid's domain with their RNG streams.
#[derive(Debug, Clone)]
pub struct Ensemble {
    grid: Grid,
    positions: Vec<f64>,
    /// Completed turns around a periodic domain (zero on lines).
    windings: Vec<i64>,
    streams: Vec<ChaCha8Rng>,
    seed: u64,
    time: f64,
}

fn block_streams(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n.div_ceil(STREAM_BLOCK))
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            rng
        })
        .collect()
}

impl Ensemble {
    /// Walkers at the given positions (wrapped or checked against the domain).
    pub fn from_positions(grid: Grid, positions: Vec<f64>, seed: u64) -> Result<Self, NelsonError> {
        if positions.is_empty() {
            return Err(NelsonError::Empty);
        }
        let (lo, hi) = grid.bounds();
        let positions: Vec<f64> = positions
            .into_iter()
            .map(|x| {
                if grid.is_periodic() {
                    Ok(grid.wrap(x))
                } else if (lo..=hi).contains(&x) {
                    Ok(x)
                } else {
                    Err(NelsonError::WalkerEscaped(x))
                }
            })
            .collect::<Result<_, _>>()?;
        let n = positions.len();
        Ok(Self {
            grid,
            windings: vec![0; n],
            streams: block_streams(seed, n),
            positions,
            seed,
            time: 0.0,
        })
    }

    /// All walkers at one point.
    pub fn at_point(grid: Grid, n: usize, x: f64, seed: u64) -> Result<Self, NelsonError> {
        Self::from_positions(grid, vec![x; n], seed)
    }

    /// Draw `n` walkers from a density: a cell is picked with probability
    /// equal to its quadrature mass, then the position is uniform in the cell.
    pub fn from_density(rho: &ScalarField, n: usize, seed: u64) -> Result<Self, NelsonError> {
        if n == 0 {
            return Err(NelsonError::Empty);
        }
        rho.check_density()?;
        let grid = *rho.grid();
        let mut cdf = Vec::with_capacity(grid.n_nodes());
        let mut acc = 0.0;
        for i in 0..grid.n_nodes() {
            acc += grid.weight(i) * rho[i];
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(FieldError::NonPositiveMass(acc).into());
        }
        let mut streams = block_streams(seed, n);
        let mut positions = vec![0.0; n];
        positions
            .par_chunks_mut(STREAM_BLOCK)
            .zip(streams.par_iter_mut())
            .for_each(|(chunk, rng)| {
                for x in chunk.iter_mut() {
                    let target = rng.random::<f64>() * acc;
                    let cell = cdf.partition_point(|&c| c <= target).min(grid.n_nodes() - 1);
                    let (lo, width) = grid.cell_extent(cell);
                    *x = grid.wrap(lo + rng.random::<f64>() * width);
                }
            });
        Ok(Self {
            grid,
            windings: vec![0; n],
            streams,
            positions,
            seed,
            time: 0.0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Positions with completed turns added back (equal to positions on lines).
    pub fn unwrapped(&self) -> Vec<f64> {
        let l = self.grid.length();
        self.positions
            .iter()
            .zip(&self.windings)
            .map(|(&x, &w)| x + w as f64 * l)
            .collect()
    }

    /// One Euler–Maruyama step. `drift` is b for forward steps and b* for
    /// backward steps; values between nodes are linearly interpolated.
    pub fn sde_step(&mut self, drift: &VectorField, spec: NoiseSpec) -> Result<(), NelsonError> {
        if *drift.grid() != self.grid {
            return Err(NelsonError::GridMismatch);
        }
        let grid = self.grid;
        let values = drift.values();
        self.advance(|x| grid.interpolate(values, x), spec)
    }

    /// Euler–Maruyama step with a drift given as a function of position.
    pub fn sde_step_with<F>(&mut self, drift: F, spec: NoiseSpec) -> Result<(), NelsonError>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        self.advance(drift, spec)
    }

    fn advance<F>(&mut self, drift: F, spec: NoiseSpec) -> Result<(), NelsonError>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        spec.check()?;
        let sign = match spec.direction {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        };
        let dt = spec.dt;
        let sigma = (2.0 * spec.nu * dt).sqrt();
        let grid = self.grid;
        let (lo, hi) = grid.bounds();
        let length = grid.length();
        self.positions
            .par_chunks_mut(STREAM_BLOCK)
            .zip(self.windings.par_chunks_mut(STREAM_BLOCK))
            .zip(self.streams.par_iter_mut())
            .try_for_each(|((xs, ws), rng)| {
                for (x, w) in xs.iter_mut().zip(ws.iter_mut()) {
                    let xi: f64 = rng.sample(StandardNormal);
                    let mut y = *x + sign * drift(*x) * dt + sigma * xi;
                    if grid.is_periodic() {
                        let turns = ((y - lo) / length).floor();
                        y -= turns * length;
                        if y >= hi {
                            y = lo;
                        }
                        *w += turns as i64;
                    } else {
                        if y < lo {
                            y = 2.0 * lo - y;
                        } else if y > hi {
                            y = 2.0 * hi - y;
                        }
                        if !(lo..=hi).contains(&y) {
                            return Err(NelsonError::WalkerEscaped(y));
                        }
                    }
                    *x = y;
                }
                Ok(())
            })?;
        self.time += sign * dt;
        Ok(())
    }

    /// Write `t,walker_id,x` rows for every `stride`-th walker.
    pub fn write_csv_rows(&self, stride: usize, mut w: impl Write) -> io::Result<()> {
        for (i, x) in self.positions.iter().enumerate().step_by(stride.max(1)) {
            writeln!(w, "{},{},{}", self.time, i, x)?;
        }
        Ok(())
    }
}

/// Empirical density: walker counts per dual cell of `grid`, divided by
/// `N · cell width`, so it integrates to exactly one.
pub fn histogram(e: &Ensemble, grid: &Grid) -> ScalarField {
    let mut counts = vec![0u64; grid.n_nodes()];
    for &x in e.positions() {
        counts[grid.cell_of(x)] += 1;
    }
    let n = e.len() as f64;
    let values = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (n * grid.cell_extent(i).1))
        .collect();
    ScalarField::new(*grid, values).expect("one count per node")
}

/// Expected L1 distance between a density and an N-sample histogram of it,
/// together with the spread of that distance (normal approximation per cell).
pub fn sampling_l1(rho: &ScalarField, n: usize) -> (f64, f64) {
    let g = rho.grid();
    let (mut mean, mut var) = (0.0, 0.0);
    for i in 0..g.n_nodes() {
        let p = (g.weight(i) * rho[i]).clamp(0.0, 1.0);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        mean += (2.0 / PI).sqrt() * sd;
        var += (1.0 - 2.0 / PI) * sd * sd;
    }
    (mean, var.sqrt())
}

/// Result of one Fokker–Planck step.
#[derive(Debug, Clone, PartialEq)]
pub struct FpStep {
    pub density: ScalarField,
    /// Mass removed by clipping negative values before renormalizing.
    pub clipped_mass: f64,
}

impl FpStep {
    pub fn valid(&self) -> bool {
        self.clipped_mass <= CLIP_LIMIT
    }
}

/// Explicit finite-volume step of the Fokker–Planck equation.
///
/// Forward: `ρ(t+dt) = ρ - dt ∇·(ρ b - ν∇ρ)`. Backward, stepping the clock
/// from `t` to `t - dt` under `ρ̇ = -∇·(ρ b*) - ν∇²ρ`:
/// `ρ(t-dt) = ρ - dt ∇·(-ρ b* - ν∇ρ)`. Fluxes live on cell faces, reflecting
/// ends are closed, so the quadrature mass is conserved to rounding.
pub fn fokker_planck_step(
    rho: &ScalarField,
    drift: &VectorField,
    nu: f64,
    dt: f64,
    direction: Direction,
) -> Result<FpStep, NelsonError> {
    let grid = *rho.grid();
    if *drift.grid() != grid {
        return Err(NelsonError::GridMismatch);
    }
    NoiseSpec { nu, dt, direction }.check()?;
    let h = grid.spacing();
    if nu > 0.0 && dt > h * h / (2.0 * nu) {
        return Err(NelsonError::Cfl {
            dt,
            limit: h * h / (2.0 * nu),
            reason: "diffusion: spacing²/(2ν)",
        });
    }
    let bmax = drift.max_abs();
    if dt * bmax > h {
        return Err(NelsonError::Cfl {
            dt,
            limit: h / bmax,
            reason: "advection: spacing/max|b|",
        });
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let n = grid.n_nodes();
    let r = rho.values();
    let b = drift.values();
    let n_faces = if grid.is_periodic() { n } else { n - 1 };
    // flux through the face between node i and node i+1
    let flux: Vec<f64> = (0..n_faces)
        .map(|i| {
            let j = (i + 1) % n;
            sign * 0.5 * (r[i] * b[i] + r[j] * b[j]) - nu * (r[j] - r[i]) / h
        })
        .collect();
    let mut next: Vec<f64> = (0..n)
        .map(|i| {
            let right = if i < n_faces { flux[i] } else { 0.0 };
            let left = if i > 0 {
                flux[i - 1]
            } else if grid.is_periodic() {
                flux[n - 1]
            } else {
                0.0
            };
            r[i] - dt * (right - left) / grid.weight(i)
        })
        .collect();
    let mut clipped_mass = 0.0;
    for (i, v) in next.iter_mut().enumerate() {
        if *v < 0.0 {
            clipped_mass += -*v * grid.weight(i);
            *v = 0.0;
        }
    }
    let mut density = ScalarField::new(grid, next)?;
    if clipped_mass > 0.0 {
        let before = integrate(rho);
        density = density.scale(before / integrate(&density));
        if clipped_mass > CLIP_LIMIT {
            warn!("Fokker–Planck step clipped mass {clipped_mass:e}; run marked invalid");
        }
    }
    Ok(FpStep {
        density,
        clipped_mass,
    })
}

/// `t → -t` on a hydrodynamic state (v, S flip; u kept; b → -b*).
pub fn time_reverse(state: &HydroState) -> HydroState {
    state.time_reversed()
}

/// Recorded walker positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHistory {
    pub times: Vec<f64>,
    /// Unwrapped positions per recorded time.
    pub positions: Vec<Vec<f64>>,
}

/// Step an ensemble alongside a precomputed wave trajectory. Snapshots must be
/// evenly spaced by an integer multiple of `dt`; the drift at each step is
/// `v + u` of the latest snapshot at or before the current time. Every
/// `record_every`-th state (and the first) is kept.
pub fn evolve_ensemble(
    ensemble: &mut Ensemble,
    wave_trajectory: &[WaveField],
    params: &PhysParams,
    dt: f64,
    record_every: usize,
) -> Result<EnsembleHistory, NelsonError> {
    let first = wave_trajectory.first().ok_or(NelsonError::Trajectory(dt))?;
    let spacing = match wave_trajectory.get(1) {
        Some(s) => s.time() - first.time(),
        None => dt,
    };
    let per_snapshot = (spacing / dt).round() as usize;
    if per_snapshot == 0 || ((per_snapshot as f64) * dt - spacing).abs() > 1e-9 * spacing {
        return Err(NelsonError::Trajectory(dt));
    }
    let n_steps = (wave_trajectory.len() - 1) * per_snapshot;
    let record_every = record_every.max(1);
    let mut history = EnsembleHistory {
        times: vec![ensemble.time()],
        positions: vec![ensemble.unwrapped()],
    };
    let mut drift = decompose(first, params)?.forward_drift().clone();
    for k in 0..n_steps {
        if k % per_snapshot == 0 {
            drift = decompose(&wave_trajectory[k / per_snapshot], params)?
                .forward_drift()
                .clone();
        }
        ensemble.sde_step(&drift, NoiseSpec::forward(params.nu, dt))?;
        if (k + 1) % record_every == 0 {
            history.times.push(ensemble.time());
            history.positions.push(ensemble.unwrapped());
        }
    }
    Ok(history)
}

/// Densities compared at one checkpoint of a coupled run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityComparison {
    pub t: f64,
    #[serde(rename = "L1_sde_vs_fp")]
    pub l1_sde_vs_fp: f64,
    #[serde(rename = "L1_sde_vs_psi2")]
    pub l1_sde_vs_psi2: f64,
    #[serde(rename = "L1_fp_vs_psi2")]
    pub l1_fp_vs_psi2: f64,
    /// Expected L1 between |Ψ|² and an N-sample histogram of it.
    pub mc_stderr: f64,
}

/// Coupled run of the oracle, the Fokker–Planck chain and the walker
/// ensemble from a common initial density, with drift `v + u` taken from the
/// oracle at every step.
#[derive(Debug, Clone)]
pub struct TriangleRun {
    pub comparisons: Vec<DensityComparison>,
    pub max_clipped_mass: f64,
    /// The walker ensemble at each checkpoint.
    pub snapshots: Vec<Ensemble>,
    pub final_sde: ScalarField,
    pub final_fp: ScalarField,
    pub final_psi2: ScalarField,
}

pub fn triangle(
    psi0: &WaveField,
    params: &PhysParams,
    walkers: usize,
    dt: f64,
    checkpoints: &[usize],
    seed: u64,
) -> Result<TriangleRun, NelsonError> {
    let grid = *psi0.grid();
    let prop = CrankNicolson::new(params, dt)?;
    let mut psi = psi0.clone();
    let mut fp = psi.density();
    let mut ens = Ensemble::from_density(&fp, walkers, seed)?;
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut comparisons = Vec::new();
    let mut snapshots = Vec::new();
    let mut max_clipped: f64 = 0.0;
    for k in 0..=last {
        if checkpoints.contains(&k) {
            snapshots.push(ens.clone());
            let psi2 = psi.density();
            let hist = histogram(&ens, &grid);
            comparisons.push(DensityComparison {
                t: psi.time(),
                l1_sde_vs_fp: l1_distance(&hist, &fp)?,
                l1_sde_vs_psi2: l1_distance(&hist, &psi2)?,
                l1_fp_vs_psi2: l1_distance(&fp, &psi2)?,
                mc_stderr: sampling_l1(&psi2, walkers).0,
            });
        }
        if k == last {
            break;
        }
        let drift = decompose(&psi, params)?.forward_drift().clone();
        let stepped = fokker_planck_step(&fp, &drift, params.nu, dt, Direction::Forward)?;
        max_clipped = max_clipped.max(stepped.clipped_mass);
        fp = stepped.density;
        ens.sde_step(&drift, NoiseSpec::forward(params.nu, dt))?;
        psi = prop.step(&psi)?;
    }
    Ok(TriangleRun {
        comparisons,
        max_clipped_mass: max_clipped,
        snapshots,
        final_sde: histogram(&ens, &grid),
        final_fp: fp,
        final_psi2: psi.density(),
    })
}

/// Histograms of the forward process and of the reversed-clock process at
/// matched times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversalComparison {
    pub t: f64,
    pub l1_forward_vs_reversed: f64,
    pub l1_forward_vs_psi2: f64,
    pub l1_reversed_vs_psi2: f64,
    /// Expected L1 between two independent N-sample histograms of |Ψ|², and
    /// its standard deviation.
    pub mc_expected: f64,
    pub mc_sd: f64,
}

/// Forward run from `ρ(0)` with drift `b(t)`; reversed-clock run from fresh
/// samples of `ρ(T)` with drift `b*(t)` stepping `t` from `T` down to 0. Both
/// use the oracle's drifts and are compared at the checkpoints.
pub fn reversed_clock_check(
    psi0: &WaveField,
    params: &PhysParams,
    walkers: usize,
    dt: f64,
    n_steps: usize,
    checkpoints: &[usize],
    seed: u64,
) -> Result<Vec<ReversalComparison>, NelsonError> {
    let grid = *psi0.grid();
    let prop = CrankNicolson::new(params, dt)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut psi = psi0.clone();
    for _ in 0..n_steps {
        let next = prop.step(&psi)?;
        states.push(psi);
        psi = next;
    }
    states.push(psi);

    let mut fwd = Ensemble::from_density(&states[0].density(), walkers, seed)?;
    let mut fwd_hist = vec![None; n_steps + 1];
    for k in 0..=n_steps {
        if checkpoints.contains(&k) {
            fwd_hist[k] = Some(histogram(&fwd, &grid));
        }
        if k < n_steps {
            let b = decompose(&states[k], params)?.forward_drift().clone();
            fwd.sde_step(&b, NoiseSpec::forward(params.nu, dt))?;
        }
    }

    let reversed_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut rev = Ensemble::from_density(&states[n_steps].density(), walkers, reversed_seed)?;
    rev.set_time(states[n_steps].time());
    let mut out = Vec::new();
    for k in (0..=n_steps).rev() {
        if let Some(fh) = &fwd_hist[k] {
            let psi2 = states[k].density();
            let rh = histogram(&rev, &grid);
            let (m, s) = sampling_l1(&psi2, walkers);
            out.push(ReversalComparison {
                t: states[k].time(),
                l1_forward_vs_reversed: l1_distance(fh, &rh)?,
                l1_forward_vs_psi2: l1_distance(fh, &psi2)?,
                l1_reversed_vs_psi2: l1_distance(&rh, &psi2)?,
                mc_expected: std::f64::consts::SQRT_2 * m,
                mc_sd: std::f64::consts::SQRT_2 * s,
            });
        }
        if k > 0 {
            let b_star = decompose(&states[k], params)?.backward_drift().clone();
            rev.sde_step(&b_star, NoiseSpec::backward(params.nu, dt))?;
        }
    }
    out.reverse();
    Ok(out)
}
