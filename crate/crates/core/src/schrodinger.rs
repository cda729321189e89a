//! Reference Crank–Nicolson integrator for `iħ ∂Ψ/∂t = [-ħ²/2m ∇² + U] Ψ`.
//!
//! The Hamiltonian is the compact three-point finite-difference operator.
//! Reflecting grids use hard walls (Ψ vanishes one node beyond each end),
//! periodic grids close the stencil around the circle. Each step solves one
//! (cyclic) tridiagonal complex system directly.

use std::f64::consts::PI;
use std::io::{self, Write};

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{integrate, FieldError, Grid, ScalarField};
use crate::madelung::{hbar_from, nu_from_hbar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchrodingerError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("gaussian width must be positive, got {0}")]
    BadWidth(f64),
    #[error("plane waves and twisted boundaries need a periodic grid")]
    PlaneWaveOnLine,
    #[error("eigenstates are computed on reflecting grids only")]
    EigenstateOnCircle,
    #[error("time step must be finite and non-zero, got {0}")]
    BadTimeStep(f64),
    #[error("final time must be non-negative, got {0}")]
    BadFinalTime(f64),
    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),
    #[error("wavefunction has zero or non-finite norm")]
    ZeroNorm,
    #[error("potential lives on a different grid")]
    GridMismatch,
}

/// Relation used to tie ħ to the diffusion constant and the osmotic coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbarConvention {
    /// `ħ = 2ν√(m b)`: the relation under which the Hamilton–Jacobi equation
    /// with the quantum term reproduces the Schrödinger equation.
    #[default]
    TwoNu,
    /// `ħ = ν√(m b)`.
    OneNu,
}

/// Physical parameters of a one-particle problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysParams {
    pub mass: f64,
    pub nu: f64,
    pub osmotic_coupling: f64,
    pub convention: HbarConvention,
    pub potential: ScalarField,
}

impl PhysParams {
    /// Natural units on `grid`: m = 1, osmotic coupling = m, ħ = 1, U = 0.
    pub fn natural(grid: Grid) -> Self {
        Self::from_hbar(grid, 1.0, 1.0, 1.0, HbarConvention::TwoNu)
    }

    /// Parameters with the diffusion constant fixed by `hbar` under `convention`.
    pub fn from_hbar(
        grid: Grid,
        mass: f64,
        osmotic_coupling: f64,
        hbar: f64,
        convention: HbarConvention,
    ) -> Self {
        Self {
            mass,
            nu: nu_from_hbar(hbar, mass, osmotic_coupling, convention),
            osmotic_coupling,
            convention,
            potential: ScalarField::zeros(grid),
        }
    }

    pub fn with_potential(mut self, potential: ScalarField) -> Self {
        self.potential = potential;
        self
    }

    /// `U(x) = m ω₀² x² / 2`.
    pub fn with_harmonic(self, omega0: f64) -> Self {
        let m = self.mass;
        let grid = *self.potential.grid();
        self.with_potential(ScalarField::from_fn(grid, |x| 0.5 * m * omega0 * omega0 * x * x))
    }

    pub fn hbar(&self) -> f64 {
        hbar_from(self.nu, self.mass, self.osmotic_coupling, self.convention)
    }

    pub fn grid(&self) -> &Grid {
        self.potential.grid()
    }
}

/// Complex amplitude per node with a time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid,
    values: Vec<Complex64>,
    time: f64,
}

impl WaveField {
    pub fn new(grid: Grid, values: Vec<Complex64>, time: f64) -> Result<Self, SchrodingerError> {
        if values.len() != grid.n_nodes() {
            return Err(FieldError::LengthMismatch {
                expected: grid.n_nodes(),
                got: values.len(),
            }
            .into());
        }
        Ok(Self { grid, values, time })
    }

    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(f64) -> Complex64) -> Self {
        let values = (0..grid.n_nodes()).map(|i| f(grid.x(i))).collect();
        Self { grid, values, time }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// `|Ψ|²` as a scalar field.
    pub fn density(&self) -> ScalarField {
        ScalarField::new(self.grid, self.values.iter().map(|z| z.norm_sqr()).collect())
            .expect("same grid")
    }

    /// `∫|Ψ|²` with the grid's quadrature rule.
    pub fn norm_sqr(&self) -> f64 {
        integrate(&self.density())
    }

    pub fn normalized(mut self) -> Result<Self, SchrodingerError> {
        let n = self.norm_sqr();
        if !(n > 0.0 && n.is_finite()) {
            return Err(SchrodingerError::ZeroNorm);
        }
        let s = 1.0 / n.sqrt();
        self.values.iter_mut().for_each(|z| *z *= s);
        Ok(self)
    }

    /// Write `t,x,re,im` rows (no header; see [`write_snapshots_csv`]).
    fn write_rows(&self, w: &mut impl Write) -> io::Result<()> {
        for (i, z) in self.values.iter().enumerate() {
            writeln!(w, "{},{},{},{}", self.time, self.grid.x(i), z.re, z.im)?;
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for WaveField {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.values[i]
    }
}

/// Snapshot series as `t,x,re,im` CSV with a header.
pub fn write_snapshots_csv(snapshots: &[WaveField], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "t,x,re,im")?;
    for s in snapshots {
        s.write_rows(&mut w)?;
    }
    Ok(())
}

/// Initial states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Packet {
    /// Gaussian with density variance `width²` and mean velocity `velocity`.
    Gaussian {
        center: f64,
        width: f64,
        velocity: f64,
    },
    /// `e^{i m w x / ħ}` on a circle.
    PlaneWave { w: f64 },
    /// Eigenstate `level` (0 = ground) of the discrete Hamiltonian.
    Eigenstate { level: usize },
}

/// Build a unit-norm initial state.
pub fn init_packet(
    kind: Packet,
    grid: Grid,
    params: &PhysParams,
) -> Result<WaveField, SchrodingerError> {
    let hbar = params.hbar();
    let m = params.mass;
    match kind {
        Packet::Gaussian {
            center,
            width,
            velocity,
        } => {
            if !(width > 0.0 && width.is_finite()) {
                return Err(SchrodingerError::BadWidth(width));
            }
            let amp = (2.0 * PI * width * width).powf(-0.25);
            let k = m * velocity / hbar;
            WaveField::from_fn(grid, 0.0, |x| {
                let d = if grid.is_periodic() {
                    grid.displacement(center, x)
                } else {
                    x - center
                };
                amp * Complex64::from_polar((-d * d / (4.0 * width * width)).exp(), k * d)
            })
            .normalized()
        }
        Packet::PlaneWave { w } => {
            if !grid.is_periodic() {
                return Err(SchrodingerError::PlaneWaveOnLine);
            }
            let k = m * w / hbar;
            let amp = 1.0 / grid.length().sqrt();
            WaveField::from_fn(grid, 0.0, |x| Complex64::from_polar(amp, k * (x - grid.origin())))
                .normalized()
        }
        Packet::Eigenstate { level } => {
            if grid.is_periodic() {
                return Err(SchrodingerError::EigenstateOnCircle);
            }
            let (_, vector) = line_eigenpair(params, level)?;
            WaveField::new(grid, vector.into_iter().map(Complex64::from).collect(), 0.0)?
                .normalized()
        }
    }
}

/// Eigenvalue and eigenvector of the discrete hard-wall Hamiltonian, by Sturm
/// bisection followed by inverse iteration.
pub fn line_eigenpair(
    params: &PhysParams,
    level: usize,
) -> Result<(f64, Vec<f64>), SchrodingerError> {
    let grid = *params.grid();
    let n = grid.n_nodes();
    if level >= n {
        return Err(SchrodingerError::Singular(level));
    }
    let hbar = params.hbar();
    let kin = hbar * hbar / (2.0 * params.mass * grid.spacing() * grid.spacing());
    let diag: Vec<f64> = params.potential.values().iter().map(|u| 2.0 * kin + u).collect();
    let off = -kin;

    // number of eigenvalues strictly below x
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for d in &diag[1..] {
            let prev = if q == 0.0 { f64::EPSILON * kin } else { q };
            q = d - x - off * off / prev;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let umin = params.potential.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let umax = params.potential.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (umin - 1.0, umax + 4.0 * kin + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) > level {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let energy = 0.5 * (lo + hi);

    // inverse iteration with a slightly shifted operator
    let shift = energy - 1e-10 * energy.abs().max(1.0);
    let a: Vec<f64> = vec![off; n];
    let b: Vec<f64> = diag.iter().map(|d| d - shift).collect();
    let mut vec: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * (i as f64).sin()).collect();
    for _ in 0..6 {
        let rhs: Vec<Complex64> = vec.iter().map(|&v| Complex64::from(v)).collect();
        let ac: Vec<Complex64> = a.iter().map(|&v| Complex64::from(v)).collect();
        let bc: Vec<Complex64> = b.iter().map(|&v| Complex64::from(v)).collect();
        let sol = solve_tridiagonal(&ac, &bc, &ac, &rhs)?;
        let norm = sol.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
        vec = sol.iter().map(|z| z.re / norm).collect();
    }
    // positive where the amplitude is largest
    let imax = (0..n)
        .max_by(|&i, &j| vec[i].abs().total_cmp(&vec[j].abs()))
        .unwrap_or(0);
    if vec[imax] < 0.0 {
        vec.iter_mut().for_each(|v| *v = -*v);
    }
    Ok((energy, vec))
}

/// Crank–Nicolson propagator for a fixed time step.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: Grid,
    dt: f64,
    // left-hand operator I + i dt H / 2ħ
    lhs_diag: Vec<Complex64>,
    lhs_off: Complex64,
    // right-hand operator I - i dt H / 2ħ
    rhs_diag: Vec<Complex64>,
    rhs_off: Complex64,
    // Ψ(x + L) = twist·Ψ(x) on periodic grids
    twist: Complex64,
}

impl CrankNicolson {
    pub fn new(params: &PhysParams, dt: f64) -> Result<Self, SchrodingerError> {
        if !(dt != 0.0 && dt.is_finite()) {
            return Err(SchrodingerError::BadTimeStep(dt));
        }
        let grid = *params.grid();
        let hbar = params.hbar();
        let h = grid.spacing();
        if dt.abs() > h * h * params.mass / hbar {
            warn!(
                "dt = {dt} exceeds spacing²·m/ħ = {}; Crank–Nicolson stays stable but phase accuracy degrades",
                h * h * params.mass / hbar
            );
        }
        let kin = hbar * hbar / (2.0 * params.mass * h * h);
        let c = Complex64::new(0.0, dt / (2.0 * hbar));
        let lhs_diag = params
            .potential
            .values()
            .iter()
            .map(|u| 1.0 + c * (2.0 * kin + u))
            .collect();
        let rhs_diag = params
            .potential
            .values()
            .iter()
            .map(|u| 1.0 - c * (2.0 * kin + u))
            .collect();
        Ok(Self {
            grid,
            dt,
            lhs_diag,
            lhs_off: c * (-kin),
            rhs_diag,
            rhs_off: -c * (-kin),
            twist: Complex64::new(1.0, 0.0),
        })
    }

    /// Propagator on a periodic grid with the quasi-periodic boundary
    /// condition `Ψ(x + L) = e^{iφ}Ψ(x)`. Stored values are one period of Ψ,
    /// so the data jump by the twist across the seam.
    pub fn twisted(params: &PhysParams, dt: f64, phase: f64) -> Result<Self, SchrodingerError> {
        if !params.grid().is_periodic() {
            return Err(SchrodingerError::PlaneWaveOnLine);
        }
        let mut out = Self::new(params, dt)?;
        out.twist = Complex64::from_polar(1.0, phase);
        Ok(out)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, psi: &WaveField) -> Result<WaveField, SchrodingerError> {
        if psi.grid != self.grid {
            return Err(SchrodingerError::GridMismatch);
        }
        let n = self.grid.n_nodes();
        let v = &psi.values;
        let periodic = self.grid.is_periodic();
        let rhs: Vec<Complex64> = (0..n)
            .map(|i| {
                let left = if i > 0 {
                    v[i - 1]
                } else if periodic {
                    v[n - 1] * self.twist.conj()
                } else {
                    Complex64::default()
                };
                let right = if i + 1 < n {
                    v[i + 1]
                } else if periodic {
                    v[0] * self.twist
                } else {
                    Complex64::default()
                };
                self.rhs_diag[i] * v[i] + self.rhs_off * (left + right)
            })
            .collect();
        let off = vec![self.lhs_off; n];
        let values = if periodic {
            solve_cyclic_tridiagonal(
                &off,
                &self.lhs_diag,
                &off,
                self.lhs_off * self.twist.conj(),
                self.lhs_off * self.twist,
                &rhs,
            )?
        } else {
            solve_tridiagonal(&off, &self.lhs_diag, &off, &rhs)?
        };
        Ok(WaveField {
            grid: self.grid,
            values,
            time: psi.time + self.dt,
        })
    }
}

/// One Crank–Nicolson step of size `dt` (negative steps run backwards).
pub fn step(psi: &WaveField, dt: f64, params: &PhysParams) -> Result<WaveField, SchrodingerError> {
    CrankNicolson::new(params, dt)?.step(psi)
}

/// Step from `psi` to `t_final` (relative to `psi.time()`), keeping every
/// `stride`-th state plus the initial and final ones. A final partial step
/// lands exactly on `t_final`.
pub fn evolve(
    psi: &WaveField,
    t_final: f64,
    dt: f64,
    params: &PhysParams,
    stride: usize,
) -> Result<Vec<WaveField>, SchrodingerError> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(SchrodingerError::BadFinalTime(t_final));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SchrodingerError::BadTimeStep(dt));
    }
    let stride = stride.max(1);
    let mut out = vec![psi.clone()];
    if t_final == 0.0 {
        return Ok(out);
    }
    let full = (t_final / dt * (1.0 + 1e-12)).floor() as usize;
    let rest = t_final - full as f64 * dt;
    let prop = CrankNicolson::new(params, dt)?;
    let t0 = psi.time;
    let mut cur = psi.clone();
    for k in 1..=full {
        cur = prop.step(&cur)?;
        cur.time = t0 + k as f64 * dt;
        if k % stride == 0 {
            out.push(cur.clone());
        }
    }
    if rest > 1e-12 * dt {
        cur = step(&cur, rest, params)?;
    }
    cur.time = t0 + t_final;
    if out.last().map(|s| s.time) != Some(cur.time) {
        out.push(cur);
    }
    Ok(out)
}

/// `⟨Ψ|H|Ψ⟩ / ⟨Ψ|Ψ⟩` with the same discrete Hamiltonian the integrator uses:
/// kinetic part from squared face differences (including the wall faces on
/// reflecting grids), potential part by node sums.
pub fn energy_expectation(psi: &WaveField, params: &PhysParams) -> f64 {
    let g = psi.grid;
    let n = g.n_nodes();
    let h = g.spacing();
    let hbar = params.hbar();
    let v = &psi.values;
    let mut kinetic = 0.0;
    for i in 0..n - 1 {
        kinetic += (v[i + 1] - v[i]).norm_sqr();
    }
    if g.is_periodic() {
        kinetic += (v[0] - v[n - 1]).norm_sqr();
    } else {
        kinetic += v[0].norm_sqr() + v[n - 1].norm_sqr();
    }
    kinetic *= hbar * hbar / (2.0 * params.mass * h * h);
    let potential: f64 = v
        .iter()
        .zip(params.potential.values())
        .map(|(z, u)| u * z.norm_sqr())
        .sum();
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    (kinetic + potential) / norm
}

/// Thomas algorithm for `a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]`
/// (`a[0]` and `c[n-1]` ignored).
pub fn solve_tridiagonal(
    a: &[Complex64],
    b: &[Complex64],
    c: &[Complex64],
    d: &[Complex64],
) -> Result<Vec<Complex64>, SchrodingerError> {
    let n = b.len();
    let mut cp = vec![Complex64::default(); n];
    let mut dp = vec![Complex64::default(); n];
    let tiny = 1e-300;
    if b[0].norm() < tiny {
        return Err(SchrodingerError::Singular(0));
    }
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let denom = b[i] - a[i] * cp[i - 1];
        if denom.norm() < tiny || !denom.is_finite() {
            return Err(SchrodingerError::Singular(i));
        }
        cp[i] = if i + 1 < n { c[i] / denom } else { Complex64::default() };
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= cp[i] * next;
    }
    Ok(x)
}

/// Cyclic tridiagonal solve via Sherman–Morrison. `corner_top` couples row 0
/// to `x[n-1]`, `corner_bottom` couples row `n-1` to `x[0]`.
pub fn solve_cyclic_tridiagonal(
    a: &[Complex64],
    b: &[Complex64],
    c: &[Complex64],
    corner_top: Complex64,
    corner_bottom: Complex64,
    d: &[Complex64],
) -> Result<Vec<Complex64>, SchrodingerError> {
    let n = b.len();
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - corner_top * corner_bottom / gamma;
    let x = solve_tridiagonal(a, &bb, c, d)?;
    let mut u = vec![Complex64::default(); n];
    u[0] = gamma;
    u[n - 1] = corner_bottom;
    let z = solve_tridiagonal(a, &bb, c, &u)?;
    let fact_num = x[0] + corner_top * x[n - 1] / gamma;
    let fact_den = 1.0 + z[0] + corner_top * z[n - 1] / gamma;
    if fact_den.norm() < 1e-300 {
        return Err(SchrodingerError::Singular(n - 1));
    }
    let fact = fact_num / fact_den;
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
}
