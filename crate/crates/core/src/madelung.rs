//! Hydrodynamic (Madelung) variables: the map `Ψ ↔ (ρ, S)`, current and
//! osmotic velocities, the averaged energy functional and the residuals of
//! the continuity and Hamilton–Jacobi equations.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{
    divergence, gradient, gradient_multivalued, FieldError, Grid, ScalarField,
    VectorField,
};
use crate::benchmarks::{Benchmark, Units};
use crate::schrodinger::{evolve, step, HbarConvention, PhysParams, SchrodingerError, WaveField};

/// Densities below this fraction of the maximum are clamped before taking
/// logarithms or dividing.
pub const DENSITY_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MadelungError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Schrodinger(#[from] SchrodingerError),
    #[error("wavefunction norm² is {0}, expected 1")]
    NotNormalized(f64),
    #[error("phase unwrapping failed: |Ψ| below the floor on nodes {from}..={to} inside the support")]
    PhaseUnwrap { from: usize, to: usize },
    #[error("states are not separated in time (dt = {0})")]
    ZeroTimeStep(f64),
    #[error("states live on different grids")]
    GridMismatch,
    #[error("consistency check inconclusive: {0}")]
    Inconclusive(String),
}

/// ħ implied by the diffusion constant, mass and osmotic coupling.
pub fn hbar_from(nu: f64, mass: f64, osmotic_coupling: f64, convention: HbarConvention) -> f64 {
    let base = nu * (mass * osmotic_coupling).sqrt();
    match convention {
        HbarConvention::TwoNu => 2.0 * base,
        HbarConvention::OneNu => base,
    }
}

/// Inverse of [`hbar_from`] for ν. Infinite when the osmotic coupling vanishes.
pub fn nu_from_hbar(hbar: f64, mass: f64, osmotic_coupling: f64, convention: HbarConvention) -> f64 {
    let root = (mass * osmotic_coupling).sqrt();
    match convention {
        HbarConvention::TwoNu => hbar / (2.0 * root),
        HbarConvention::OneNu => hbar / root,
    }
}

/// Clamp a density at `DENSITY_FLOOR_REL · max`. Returns the clamped field and
/// the mask of clamped nodes.
pub fn floored_density(rho: &ScalarField) -> (ScalarField, Vec<bool>) {
    let floor = DENSITY_FLOOR_REL * rho.max_abs();
    let mask = rho.values().iter().map(|&r| r < floor).collect();
    (rho.map(|r| r.max(floor)), mask)
}

/// `u = ν ∇ ln ρ` on the floored density.
pub fn osmotic_velocity(rho: &ScalarField, nu: f64) -> Result<VectorField, MadelungError> {
    let (floored, _) = floored_density(rho);
    Ok(gradient(&floored.map(f64::ln))?.scale(nu))
}

/// Density, action and the velocity fields derived from them at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroState {
    time: f64,
    rho: ScalarField,
    action: ScalarField,
    seam_shift: f64,
    v: VectorField,
    u: VectorField,
    b_fwd: VectorField,
    b_bwd: VectorField,
    floored: Vec<bool>,
    mass: f64,
    nu: f64,
    hbar: f64,
}

impl HydroState {
    /// Assemble a state from a density and a branch of the action. On circles
    /// `seam_shift` is the jump `S(θ + 2π) - S(θ)` (zero on lines).
    pub fn from_density_action(
        rho: ScalarField,
        action: ScalarField,
        seam_shift: f64,
        params: &PhysParams,
        time: f64,
    ) -> Result<Self, MadelungError> {
        if rho.grid() != action.grid() {
            return Err(MadelungError::GridMismatch);
        }
        rho.check_density()?;
        let shift = if rho.grid().is_periodic() { seam_shift } else { 0.0 };
        let v = gradient_multivalued(&action, shift)?.scale(1.0 / params.mass);
        let (_, floored) = floored_density(&rho);
        let u = osmotic_velocity(&rho, params.nu)?;
        let b_fwd = v.zip_with(&u, |a, b| a + b)?;
        let b_bwd = v.zip_with(&u, |a, b| a - b)?;
        Ok(Self {
            time,
            rho,
            action,
            seam_shift: shift,
            v,
            u,
            b_fwd,
            b_bwd,
            floored,
            mass: params.mass,
            nu: params.nu,
            hbar: params.hbar(),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }
    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }
    /// The action `S` (one branch on circles).
    pub fn action(&self) -> &ScalarField {
        &self.action
    }
    pub fn seam_shift(&self) -> f64 {
        self.seam_shift
    }
    /// Phase winding number `seam_shift / 2πħ`; integer for single-valued Ψ.
    pub fn winding(&self) -> f64 {
        self.seam_shift / (2.0 * PI * self.hbar)
    }
    pub fn current_velocity(&self) -> &VectorField {
        &self.v
    }
    pub fn osmotic_velocity(&self) -> &VectorField {
        &self.u
    }
    pub fn forward_drift(&self) -> &VectorField {
        &self.b_fwd
    }
    pub fn backward_drift(&self) -> &VectorField {
        &self.b_bwd
    }
    pub fn floored(&self) -> &[bool] {
        &self.floored
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// `t → -t`: v and S change sign, u is kept, and the drifts become
    /// `b → -b*`, `b* → -b`.
    pub fn time_reversed(&self) -> Self {
        let v = self.v.map(|x| -x);
        let b_fwd = v.zip_with(&self.u, |a, b| a + b).expect("same grid");
        let b_bwd = v.zip_with(&self.u, |a, b| a - b).expect("same grid");
        Self {
            time: -self.time,
            action: self.action.map(|s| -s),
            seam_shift: -self.seam_shift,
            v,
            b_fwd,
            b_bwd,
            ..self.clone()
        }
    }

    /// `x,rho,S,v,u,b_fwd,b_bwd` CSV with a header.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "x,rho,S,v,u,b_fwd,b_bwd")?;
        for i in 0..self.grid().n_nodes() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.grid().x(i),
                self.rho[i],
                self.action[i],
                self.v[i],
                self.u[i],
                self.b_fwd[i],
                self.b_bwd[i]
            )?;
        }
        Ok(())
    }
}

/// Split a unit-norm wavefunction into hydrodynamic variables.
///
/// The action is rebuilt from nearest-neighbour phase increments
/// `arg(Ψ[i+1] Ψ̄[i])`, anchored so that `S = ħ arg Ψ` at the node of largest
/// amplitude. Nodes below the density floor carry no phase information: a
/// single such node inside the support is bridged, a longer run is an error.
pub fn decompose(psi: &WaveField, params: &PhysParams) -> Result<HydroState, MadelungError> {
    let norm = psi.norm_sqr();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(MadelungError::NotNormalized(norm));
    }
    let grid = *psi.grid();
    let n = grid.n_nodes();
    let hbar = params.hbar();
    let rho = psi.density();
    let (_, floored) = floored_density(&rho);
    let z = psi.values();
    let periodic = grid.is_periodic();
    let n_links = if periodic { n } else { n - 1 };

    // phase increment across link i -> i+1
    let mut inc = vec![0.0; n_links];
    let supported: Vec<usize> = (0..n).filter(|&i| !floored[i]).collect();
    let (first, last) = match (supported.first(), supported.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(MadelungError::NotNormalized(norm)),
    };
    let mut i = 0;
    while i < n_links {
        let j = (i + 1) % n;
        if !floored[i] && !floored[j] {
            inc[i] = (z[j] * z[i].conj()).arg();
            i += 1;
            continue;
        }
        if floored[i] {
            i += 1;
            continue;
        }
        // i supported, j floored: measure the floored run starting at j
        let mut end = j;
        let mut len = 0;
        while floored[end] && len < n {
            end = (end + 1) % n;
            len += 1;
        }
        let interior = periodic || (j > first && j <= last);
        if interior {
            if len > 1 {
                return Err(MadelungError::PhaseUnwrap {
                    from: j,
                    to: (j + len - 1) % n,
                });
            }
            // bridge one floored node: split the two-cell increment evenly
            let half = 0.5 * (z[end] * z[i].conj()).arg();
            inc[i] = half;
            inc[j] = half;
            i += 2;
        } else {
            i += 1;
        }
    }

    let mut phase = vec![0.0; n];
    for k in 1..n {
        phase[k] = phase[k - 1] + inc[k - 1];
    }
    let anchor = (0..n)
        .max_by(|&a, &b| rho[a].total_cmp(&rho[b]))
        .unwrap_or(0);
    let offset = z[anchor].arg() - phase[anchor];
    let action = ScalarField::new(grid, phase.iter().map(|p| hbar * (p + offset)).collect())?;
    let seam_shift = if periodic {
        let total: f64 = inc.iter().sum();
        2.0 * PI * hbar * (total / (2.0 * PI)).round()
    } else {
        0.0
    };
    HydroState::from_density_action(rho, action, seam_shift, params, psi.time())
}

/// `Ψ = √ρ e^{iS/ħ}` node by node (time stamp 0).
pub fn compose(rho: &ScalarField, action: &ScalarField, hbar: f64) -> Result<WaveField, MadelungError> {
    if rho.grid() != action.grid() {
        return Err(MadelungError::GridMismatch);
    }
    let values = rho
        .values()
        .iter()
        .zip(action.values())
        .map(|(&r, &s)| Complex64::from_polar(r.max(0.0).sqrt(), s / hbar))
        .collect();
    Ok(WaveField::new(*rho.grid(), values, 0.0)?)
}

/// Energy density integrand split into its three parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParts {
    /// `∫ρ (m/2) v²`
    pub current: f64,
    /// `∫ρ (b/2) u²`, the quantum term
    pub osmotic: f64,
    /// `∫ρ U`
    pub potential: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.current + self.osmotic + self.potential
    }
}

pub fn energy_parts(state: &HydroState, params: &PhysParams) -> EnergyParts {
    let rho = state.rho();
    let m = params.mass;
    let b = params.osmotic_coupling;
    let weighted = |f: &dyn Fn(usize) -> f64| -> f64 {
        let g = rho.grid();
        (0..g.n_nodes()).map(|i| g.weight(i) * rho[i] * f(i)).sum()
    };
    EnergyParts {
        current: weighted(&|i| 0.5 * m * state.v[i] * state.v[i]),
        osmotic: weighted(&|i| 0.5 * b * state.u[i] * state.u[i]),
        potential: weighted(&|i| params.potential[i]),
    }
}

/// `H = ∫ρ[(m/2)v² + (b/2)u² + U]`.
pub fn averaged_energy(state: &HydroState, params: &PhysParams) -> f64 {
    energy_parts(state, params).total()
}

/// `H_quantum = (b ν²/2) ∫ρ (∇ln ρ)²` (equal to the osmotic part of the energy).
pub fn quantum_energy(state: &HydroState, params: &PhysParams) -> f64 {
    energy_parts(state, params).osmotic
}

/// Node-wise residual with the nodes excluded from maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub field: ScalarField,
    pub excluded: Vec<bool>,
}

impl Residual {
    /// Largest |residual| over non-excluded nodes.
    pub fn max_abs(&self) -> f64 {
        self.field
            .values()
            .iter()
            .zip(&self.excluded)
            .filter(|(_, &x)| !x)
            .fold(0.0, |m, (r, _)| m.max(r.abs()))
    }

    /// Largest |residual| over non-excluded nodes where `rho ≥ rel · max ρ`.
    pub fn max_abs_on_support(&self, rho: &ScalarField, rel: f64) -> f64 {
        let cut = rel * rho.max_abs();
        (0..rho.grid().n_nodes())
            .filter(|&i| !self.excluded[i] && rho[i] >= cut)
            .fold(0.0, |m, i| m.max(self.field[i].abs()))
    }

    /// `(∫ρ r² / ∫ρ)^{1/2}` over non-excluded nodes.
    pub fn weighted_rms(&self, rho: &ScalarField) -> f64 {
        let g = rho.grid();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..g.n_nodes() {
            if self.excluded[i] {
                continue;
            }
            let w = g.weight(i) * rho[i];
            num += w * self.field[i] * self.field[i];
            den += w;
        }
        (num / den).sqrt()
    }
}

fn check_pair(s0: &HydroState, s1: &HydroState) -> Result<f64, MadelungError> {
    if s0.grid() != s1.grid() {
        return Err(MadelungError::GridMismatch);
    }
    let dt = s1.time - s0.time;
    if dt == 0.0 || !dt.is_finite() {
        return Err(MadelungError::ZeroTimeStep(dt));
    }
    Ok(dt)
}

/// `(∇ρ)²/ρ² + 2∇·(∇ρ/ρ)`, the density bracket of the quantum term, on the
/// floored density.
pub fn quantum_bracket(rho: &ScalarField) -> Result<ScalarField, MadelungError> {
    let (floored, _) = floored_density(rho);
    let g = gradient(&floored.map(f64::ln))?;
    let div = divergence(&g)?;
    Ok(div.zip_with(&g.into_scalar(), |d, g| g * g + 2.0 * d)?)
}

/// Residual of `Ṡ + (∇S)²/2m + U - (bν²/2)[(∇ρ)²/ρ² + 2∇·(∇ρ/ρ)] = 0`
/// between two states, centred at the half step. The coefficient `bν²`
/// comes from `params`; the time difference of `S` is taken modulo `2πħ`.
pub fn hj_residual(
    s0: &HydroState,
    s1: &HydroState,
    params: &PhysParams,
) -> Result<Residual, MadelungError> {
    let dt = check_pair(s0, s1)?;
    let coeff = 0.5 * params.osmotic_coupling * params.nu * params.nu;
    let hbar = s0.hbar;
    let m = params.mass;
    let q0 = quantum_bracket(&s0.rho)?;
    let q1 = quantum_bracket(&s1.rho)?;
    let n = s0.grid().n_nodes();
    let two_pi_hbar = 2.0 * PI * hbar;
    let values = (0..n)
        .map(|i| {
            let mut ds = s1.action[i] - s0.action[i];
            ds -= two_pi_hbar * (ds / two_pi_hbar).round();
            let spatial = |s: &HydroState, q: &ScalarField| {
                0.5 * m * s.v[i] * s.v[i] + params.potential[i] - coeff * q[i]
            };
            ds / dt + 0.5 * (spatial(s0, &q0) + spatial(s1, &q1))
        })
        .collect();
    Ok(Residual {
        field: ScalarField::new(*s0.grid(), values)?,
        excluded: excluded_nodes(s0, s1),
    })
}

/// Residual of `ρ̇ + ∇·(ρv) = 0`, centred at the half step.
pub fn continuity_residual(s0: &HydroState, s1: &HydroState) -> Result<Residual, MadelungError> {
    let dt = check_pair(s0, s1)?;
    let flux = |s: &HydroState| -> Result<ScalarField, MadelungError> {
        let j = s.rho.zip_with(&s.v.clone().into_scalar(), |r, v| r * v)?;
        Ok(divergence(&j.into_vector())?)
    };
    let f0 = flux(s0)?;
    let f1 = flux(s1)?;
    let values = (0..s0.grid().n_nodes())
        .map(|i| (s1.rho[i] - s0.rho[i]) / dt + 0.5 * (f0[i] + f1[i]))
        .collect();
    Ok(Residual {
        field: ScalarField::new(*s0.grid(), values)?,
        excluded: excluded_nodes(s0, s1),
    })
}

fn excluded_nodes(s0: &HydroState, s1: &HydroState) -> Vec<bool> {
    s0.floored
        .iter()
        .zip(&s1.floored)
        .map(|(&a, &b)| a || b)
        .collect()
}

/// Averaged energy along an oracle run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub n_nodes: usize,
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// `max |H(t) − H(0)| / |H(0)|`.
    pub max_rel_drift: f64,
}

/// Evolve `benchmark` on `n_nodes` nodes for `t_final` and evaluate
/// [`averaged_energy`] on every `stride`-th state.
pub fn energy_trace(
    benchmark: &Benchmark,
    units: Units,
    n_nodes: usize,
    dt: f64,
    t_final: f64,
    stride: usize,
) -> Result<EnergyTrace, MadelungError> {
    let params = benchmark.params(benchmark.grid(n_nodes)?, units);
    let traj = evolve(&benchmark.initial(&params)?, t_final, dt, &params, stride)?;
    let mut times = Vec::with_capacity(traj.len());
    let mut energies = Vec::with_capacity(traj.len());
    for psi in &traj {
        times.push(psi.time());
        energies.push(averaged_energy(&decompose(psi, &params)?, &params));
    }
    let e0 = energies[0];
    let max_rel_drift = energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs();
    Ok(EnergyTrace {
        n_nodes,
        times,
        energies,
        max_rel_drift,
    })
}

/// Setup of the ħ-convention adjudication.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ConsistencyConfig {
    pub benchmark: Benchmark,
    pub units: Units,
    /// Coarse and fine node counts.
    pub grids: [usize; 2],
    /// Evaluation time as a fraction of the characteristic time.
    pub eval_fraction: f64,
    pub dt_oracle: f64,
    /// Separation of the two states fed to the residual.
    pub dt_residual: f64,
    /// Nodes with `ρ < support_rel · max ρ` are left out of the maxima.
    pub support_rel: f64,
}

impl ConsistencyConfig {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            units: Units::default(),
            grids: [512, 1024],
            eval_fraction: 0.25,
            dt_oracle: 1e-3,
            dt_residual: 1e-5,
            support_rel: 1e-4,
        }
    }
}

/// Residual norms of one convention on one grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConventionResidual {
    pub convention: HbarConvention,
    pub n_nodes: usize,
    pub spacing: f64,
    pub weighted_rms: f64,
    pub max_on_support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub benchmark: String,
    pub eval_time: f64,
    pub rows: Vec<ConventionResidual>,
    /// `(h_coarse / h_fine)²`, the refinement gain of a second-order error.
    pub expected_ratio: f64,
    pub ratio_two_nu: f64,
    pub ratio_one_nu: f64,
    pub two_nu_converges: bool,
    pub one_nu_converges: bool,
    pub winner: HbarConvention,
}

/// Evolve a non-stationary benchmark with the Schrödinger oracle on two grids
/// and evaluate the Hamilton–Jacobi residual with the quantum-term coefficient
/// implied by each ħ convention. The convention whose residual falls like
/// spacing² wins; the other should plateau.
pub fn hbar_consistency(cfg: &ConsistencyConfig) -> Result<ConsistencyReport, MadelungError> {
    let t_eval = cfg.eval_fraction * cfg.benchmark.characteristic_time(cfg.units);
    let mut rows = Vec::new();
    for &n in &cfg.grids {
        let grid = cfg.benchmark.grid(n)?;
        let oracle = cfg.benchmark.params(grid, cfg.units);
        let psi0 = cfg.benchmark.initial(&oracle)?;
        let psi_t = evolve(&psi0, t_eval, cfg.dt_oracle, &oracle, usize::MAX)?
            .pop()
            .expect("evolve returns the final state");
        let psi_next = step(&psi_t, cfg.dt_residual, &oracle)?;
        for convention in [HbarConvention::TwoNu, HbarConvention::OneNu] {
            let params = cfg
                .benchmark
                .params(grid, Units { convention, ..cfg.units });
            let s0 = decompose(&psi_t, &params)?;
            let s1 = decompose(&psi_next, &params)?;
            let r = hj_residual(&s0, &s1, &params)?;
            rows.push(ConventionResidual {
                convention,
                n_nodes: n,
                spacing: grid.spacing(),
                weighted_rms: r.weighted_rms(s0.rho()),
                max_on_support: r.max_abs_on_support(s0.rho(), cfg.support_rel),
            });
        }
    }
    let pick = |conv: HbarConvention, k: usize| {
        rows.iter()
            .filter(|r| r.convention == conv)
            .nth(k)
            .expect("two grids per convention")
    };
    let h_ratio = pick(HbarConvention::TwoNu, 0).spacing / pick(HbarConvention::TwoNu, 1).spacing;
    let expected_ratio = h_ratio * h_ratio;
    let ratio = |conv| pick(conv, 0).weighted_rms / pick(conv, 1).weighted_rms;
    let ratio_two_nu = ratio(HbarConvention::TwoNu);
    let ratio_one_nu = ratio(HbarConvention::OneNu);
    // second-order convergence: gain within a factor 1.5 of (h₁/h₂)²
    let converges = |r: f64| r >= expected_ratio / 1.5 && r <= expected_ratio * 1.5;
    let two_nu_converges = converges(ratio_two_nu);
    let one_nu_converges = converges(ratio_one_nu);
    let winner = match (two_nu_converges, one_nu_converges) {
        (true, false) => HbarConvention::TwoNu,
        (false, true) => HbarConvention::OneNu,
        _ => {
            return Err(MadelungError::Inconclusive(format!(
                "refinement gains {ratio_two_nu:.3} (two_nu) and {ratio_one_nu:.3} (one_nu), expected {expected_ratio:.3}"
            )))
        }
    };
    Ok(ConsistencyReport {
        benchmark: cfg.benchmark.name().to_string(),
        eval_time: t_eval,
        rows,
        expected_ratio,
        ratio_two_nu,
        ratio_one_nu,
        two_nu_converges,
        one_nu_converges,
        winner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::{init_packet, Packet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn hbar_conventions() {
        assert_abs_diff_eq!(hbar_from(0.5, 1.0, 1.0, HbarConvention::TwoNu), 1.0);
        assert_abs_diff_eq!(hbar_from(1.0, 1.0, 1.0, HbarConvention::OneNu), 1.0);
        assert_eq!(hbar_from(3.3, 2.0, 0.0, HbarConvention::TwoNu), 0.0);
        assert_eq!(hbar_from(3.3, 2.0, 0.0, HbarConvention::OneNu), 0.0);
        for conv in [HbarConvention::TwoNu, HbarConvention::OneNu] {
            let nu = nu_from_hbar(1.7, 2.0, 0.5, conv);
            assert_abs_diff_eq!(hbar_from(nu, 2.0, 0.5, conv), 1.7, epsilon = 1e-14);
        }
    }

    #[test]
    fn plane_wave_decomposes_to_uniform_flow() {
        let grid = Grid::circle(128).unwrap();
        let p = PhysParams::natural(grid);
        let psi = init_packet(Packet::PlaneWave { w: 1.0 }, grid, &p).unwrap();
        let s = decompose(&psi, &p).unwrap();
        for i in 0..128 {
            assert_abs_diff_eq!(s.rho()[i], 1.0 / (2.0 * PI), epsilon = 1e-14);
            assert_abs_diff_eq!(s.current_velocity()[i], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(s.osmotic_velocity()[i], 0.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(s.winding(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn real_gaussian_has_no_current_and_linear_osmotic_velocity() {
        let grid = Grid::line(801, -8.0, 8.0).unwrap();
        let p = PhysParams::natural(grid);
        let sigma = 1.0;
        let psi = init_packet(Packet::Gaussian { center: 0.0, width: sigma, velocity: 0.0 }, grid, &p)
            .unwrap();
        let s = decompose(&psi, &p).unwrap();
        for i in 0..801 {
            assert_eq!(s.current_velocity()[i], 0.0);
            let x = grid.x(i);
            if x.abs() < 6.0 {
                assert_abs_diff_eq!(s.osmotic_velocity()[i], -p.nu * x / (sigma * sigma), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn osmotic_velocity_is_linear_in_nu() {
        let grid = Grid::line(64, -3.0, 3.0).unwrap();
        let rho = ScalarField::from_fn(grid, |x| (-x * x).exp() + 0.1);
        let u1 = osmotic_velocity(&rho, 0.3).unwrap();
        let u2 = osmotic_velocity(&rho, 0.6).unwrap();
        for i in 0..64 {
            assert_eq!(u2[i], 2.0 * u1[i]);
        }
        let flat = osmotic_velocity(&ScalarField::constant(grid, 0.2), 1.0).unwrap();
        assert!(flat.values().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn compose_then_decompose_recovers_action_up_to_constant() {
        let grid = Grid::line(256, -6.0, 6.0).unwrap();
        let p = PhysParams::natural(grid);
        let rho = crate::fields::normalize(&ScalarField::from_fn(grid, |x| (-x * x / 2.0).exp()))
            .unwrap();
        let action = ScalarField::from_fn(grid, |x| 0.3 * x * x - 0.7 * x + 2.0);
        let psi = compose(&rho, &action, p.hbar()).unwrap();
        let s = decompose(&psi, &p).unwrap();
        let c = s.action()[128] - action[128];
        for i in 0..256 {
            assert_abs_diff_eq!(s.rho()[i], rho[i], epsilon = 1e-15);
            assert_abs_diff_eq!(s.action()[i] - c, action[i], epsilon = 1e-10);
        }
        let zero = compose(&rho, &ScalarField::zeros(grid), 1.0).unwrap();
        assert!(zero.values().iter().all(|z| z.im == 0.0 && z.re >= 0.0));
    }

    #[test]
    fn extended_hole_in_support_is_reported() {
        let grid = Grid::line(64, -1.0, 1.0).unwrap();
        let p = PhysParams::natural(grid);
        let psi = WaveField::from_fn(grid, 0.0, |x| {
            if x.abs() < 0.1 {
                Complex64::default()
            } else {
                Complex64::from_polar(1.0, x)
            }
        })
        .normalized()
        .unwrap();
        assert!(matches!(decompose(&psi, &p), Err(MadelungError::PhaseUnwrap { .. })));
    }

    #[test]
    fn single_node_zero_is_bridged() {
        let grid = Grid::line(65, -4.0, 4.0).unwrap();
        let p = PhysParams::natural(grid);
        // first excited harmonic-like state with an exact zero at x = 0
        let psi = WaveField::from_fn(grid, 0.0, |x| Complex64::from(x * (-x * x / 2.0).exp()))
            .normalized()
            .unwrap();
        let s = decompose(&psi, &p).unwrap();
        assert!(s.floored()[32]);
        assert!(s.current_velocity().values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn energy_examples() {
        let grid = Grid::circle(64).unwrap();
        let p = PhysParams::natural(grid);
        let rho = ScalarField::constant(grid, 1.0 / (2.0 * PI));
        let w = 1.3;
        let st = HydroState::from_density_action(
            rho.clone(),
            ScalarField::from_fn(grid, |th| p.mass * w * th),
            2.0 * PI * p.mass * w,
            &p,
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(averaged_energy(&st, &p), 0.5 * w * w, epsilon = 1e-12);
        let still = HydroState::from_density_action(rho, ScalarField::zeros(grid), 0.0, &p, 0.0).unwrap();
        assert_eq!(averaged_energy(&still, &p), 0.0);
    }

    #[test]
    fn classical_limit_drops_the_quantum_term() {
        let grid = Grid::line(128, -5.0, 5.0).unwrap();
        let mut p = PhysParams::natural(grid).with_harmonic(1.0);
        let psi = init_packet(Packet::Gaussian { center: 0.5, width: 0.8, velocity: 0.4 }, grid, &p)
            .unwrap();
        let st = decompose(&psi, &p).unwrap();
        p.osmotic_coupling = 0.0;
        let parts = energy_parts(&st, &p);
        assert_eq!(parts.osmotic, 0.0);
        assert_eq!(averaged_energy(&st, &p), parts.current + parts.potential);
    }

    #[test]
    fn reversal_flips_current_only() {
        let grid = Grid::line(128, -5.0, 5.0).unwrap();
        let p = PhysParams::natural(grid);
        let psi = init_packet(Packet::Gaussian { center: 0.0, width: 0.8, velocity: 0.4 }, grid, &p)
            .unwrap();
        let st = decompose(&psi, &p).unwrap();
        let r = st.time_reversed();
        assert_eq!(r.time_reversed(), st);
        assert_eq!(averaged_energy(&r, &p), averaged_energy(&st, &p));
        for i in 0..128 {
            assert_eq!(r.forward_drift()[i], -st.backward_drift()[i]);
            assert_eq!(r.osmotic_velocity()[i], st.osmotic_velocity()[i]);
        }
    }

    #[test]
    fn residuals_need_distinct_times() {
        let grid = Grid::circle(32).unwrap();
        let p = PhysParams::natural(grid);
        let st = HydroState::from_density_action(
            ScalarField::constant(grid, 1.0 / (2.0 * PI)),
            ScalarField::zeros(grid),
            0.0,
            &p,
            0.0,
        )
        .unwrap();
        assert!(matches!(hj_residual(&st, &st, &p), Err(MadelungError::ZeroTimeStep(_))));
        assert!(matches!(continuity_residual(&st, &st), Err(MadelungError::ZeroTimeStep(_))));
    }
}
