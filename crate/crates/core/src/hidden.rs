//! Joint densities over a subsystem coordinate x and one aggregate hidden
//! coordinate y, with a velocity field ẋ(x, y).
//!
//! Averaging ẋ over y at fixed x gives a drift b(x); the y-spread of ẋ is
//! what shows up as noise. The subsystem energy splits exactly into a drift
//! part and a fluctuation part (law of total variance on the lattice).

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::fields::{integrate, FieldError, Grid, ScalarField, VectorField};
use crate::madelung::{HydroState, DENSITY_FLOOR_REL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HiddenError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("expected {expected} lattice values, got {got}")]
    Shape { got: usize, expected: usize },
    #[error("joint density must integrate to 1, got {0}")]
    NotNormalized(f64),
    #[error("non-finite velocity at lattice point ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("x or y grid differs between the inputs")]
    GridMismatch,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
}

fn check_shape(x: &Grid, y: &Grid, len: usize) -> Result<(), HiddenError> {
    let expected = x.n_nodes() * y.n_nodes();
    if len != expected {
        return Err(HiddenError::Shape { got: len, expected });
    }
    Ok(())
}

fn write_lattice(x: &Grid, y: &Grid, values: &[f64], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "x,y,value")?;
    for i in 0..x.n_nodes() {
        for j in 0..y.n_nodes() {
            writeln!(w, "{},{},{}", x.x(i), y.x(j), values[i * y.n_nodes() + j])?;
        }
    }
    Ok(())
}

/// Sum in ascending order of value, so any permutation of the inputs gives
/// the same bits.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Non-negative density on the product lattice, row-major in x.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensity {
    x: Grid,
    y: Grid,
    values: Vec<f64>,
}

impl JointDensity {
    /// Validates shape, sign and normalization (within 1e-10).
    pub fn new(x: Grid, y: Grid, values: Vec<f64>) -> Result<Self, HiddenError> {
        check_shape(&x, &y, values.len())?;
        if let Some((k, &v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(FieldError::NegativeDensity { node: k, value: v }.into());
        }
        let out = Self { x, y, values };
        let mass = out.mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(HiddenError::NotNormalized(mass));
        }
        Ok(out)
    }

    /// Samples `f` on the lattice and rescales to unit mass.
    pub fn from_fn(x: Grid, y: Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self, HiddenError> {
        let mut values: Vec<f64> = (0..x.n_nodes())
            .flat_map(|i| (0..y.n_nodes()).map(move |j| (i, j)))
            .map(|(i, j)| f(x.x(i), y.x(j)))
            .collect();
        let raw = Self {
            x,
            y,
            values: values.clone(),
        };
        let mass = raw.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(FieldError::NonPositiveMass(mass).into());
        }
        for v in &mut values {
            *v /= mass;
        }
        Self::new(x, y, values)
    }

    pub fn x_grid(&self) -> &Grid {
        &self.x
    }
    pub fn y_grid(&self) -> &Grid {
        &self.y
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.y.n_nodes() + j]
    }

    fn mass(&self) -> f64 {
        let ny = self.y.n_nodes();
        (0..self.x.n_nodes())
            .map(|i| {
                self.x.weight(i)
                    * (0..ny).map(|j| self.y.weight(j) * self.values[i * ny + j]).sum::<f64>()
            })
            .sum()
    }

    pub fn write_csv(&self, w: impl Write) -> io::Result<()> {
        write_lattice(&self.x, &self.y, &self.values, w)
    }
}

/// Subsystem velocity ẋ(x, y) on the product lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    x: Grid,
    y: Grid,
    xdot: Vec<f64>,
    pub mass: f64,
}

impl VelocityMap {
    pub fn new(x: Grid, y: Grid, xdot: Vec<f64>, mass: f64) -> Result<Self, HiddenError> {
        check_shape(&x, &y, xdot.len())?;
        let ny = y.n_nodes();
        if let Some(k) = xdot.iter().position(|v| !v.is_finite()) {
            return Err(HiddenError::NonFinite(k / ny, k % ny));
        }
        Ok(Self { x, y, xdot, mass })
    }

    pub fn from_fn(x: Grid, y: Grid, mass: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self, HiddenError> {
        let xdot = (0..x.n_nodes())
            .flat_map(|i| (0..y.n_nodes()).map(move |j| (i, j)))
            .map(|(i, j)| f(x.x(i), y.x(j)))
            .collect();
        Self::new(x, y, xdot, mass)
    }

    pub fn values(&self) -> &[f64] {
        &self.xdot
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.xdot[i * self.y.n_nodes() + j]
    }

    pub fn write_csv(&self, w: impl Write) -> io::Result<()> {
        write_lattice(&self.x, &self.y, &self.xdot, w)
    }
}

fn check_pair(rho: &JointDensity, vel: &VelocityMap) -> Result<(), HiddenError> {
    if rho.x != vel.x || rho.y != vel.y {
        return Err(HiddenError::GridMismatch);
    }
    Ok(())
}

/// `ρ(x) = ∫dy ρ̃(x, y)`.
pub fn marginal(rho: &JointDensity) -> ScalarField {
    let ny = rho.y.n_nodes();
    let values = (0..rho.x.n_nodes())
        .map(|i| sorted_sum((0..ny).map(|j| rho.y.weight(j) * rho.values[i * ny + j]).collect()))
        .collect();
    ScalarField::new(rho.x, values).expect("one value per x node")
}

/// y-average of ẋ at each x, with the conditional variance of ẋ.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDrift {
    pub marginal: ScalarField,
    pub drift: VectorField,
    pub variance: ScalarField,
    /// Nodes where the marginal is below the density floor; there the drift
    /// is set to 0 and the variance holds the raw second moment.
    pub floored: Vec<bool>,
}

/// `b(x) = ∫dy ρ̃ ẋ / ρ(x)` and `Var(ẋ | x)`.
pub fn conditional_drift(rho: &JointDensity, vel: &VelocityMap) -> Result<ConditionalDrift, HiddenError> {
    check_pair(rho, vel)?;
    let ny = rho.y.n_nodes();
    let marg = marginal(rho);
    let floor = DENSITY_FLOOR_REL * marg.max_abs();
    let nx = rho.x.n_nodes();
    let (mut drift, mut var, mut floored) = (vec![0.0; nx], vec![0.0; nx], vec![false; nx]);
    for i in 0..nx {
        let w = |j: usize| rho.y.weight(j) * rho.values[i * ny + j];
        let m = marg[i];
        let b = if m > floor && m > 0.0 {
            // offsets from the row minimum keep y-independent rows exact
            let row = &vel.xdot[i * ny..(i + 1) * ny];
            let base = row.iter().copied().fold(f64::INFINITY, f64::min);
            base + sorted_sum((0..ny).map(|j| w(j) * (row[j] - base)).collect()) / m
        } else {
            floored[i] = true;
            0.0
        };
        drift[i] = b;
        var[i] = if m > 0.0 {
            sorted_sum(
                (0..ny)
                    .map(|j| {
                        let d = vel.xdot[i * ny + j] - b;
                        w(j) * d * d
                    })
                    .collect(),
            ) / m
        } else {
            0.0
        };
    }
    Ok(ConditionalDrift {
        marginal: marg,
        drift: VectorField::new(rho.x, drift)?,
        variance: ScalarField::new(rho.x, var)?,
        floored,
    })
}

/// `∫dx dy ρ̃[(m/2)ẋ² + U(x)]`.
pub fn subsystem_energy(rho: &JointDensity, vel: &VelocityMap, potential: &ScalarField) -> Result<f64, HiddenError> {
    check_pair(rho, vel)?;
    if *potential.grid() != rho.x {
        return Err(HiddenError::GridMismatch);
    }
    let ny = rho.y.n_nodes();
    let mut total = 0.0;
    for i in 0..rho.x.n_nodes() {
        let row: f64 = (0..ny)
            .map(|j| {
                let k = i * ny + j;
                rho.y.weight(j) * rho.values[k] * (0.5 * vel.mass * vel.xdot[k] * vel.xdot[k] + potential[i])
            })
            .sum();
        total += rho.x.weight(i) * row;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySplit {
    pub total: f64,
    /// `∫ρ[(m/2)b² + U]`.
    pub drift_part: f64,
    /// `(m/2)∫ρ Var(ẋ|x)`.
    pub fluctuation_part: f64,
}

impl EnergySplit {
    pub fn identity_residual(&self) -> f64 {
        self.total - (self.drift_part + self.fluctuation_part)
    }
}

pub fn energy_split(rho: &JointDensity, vel: &VelocityMap, potential: &ScalarField) -> Result<EnergySplit, HiddenError> {
    let total = subsystem_energy(rho, vel, potential)?;
    let cd = conditional_drift(rho, vel)?;
    let m = vel.mass;
    let b = cd.drift.clone().into_scalar();
    let drift_part = integrate(&cd.marginal.zip_with(&b, |r, b| r * 0.5 * m * b * b)?)
        + integrate(&cd.marginal.zip_with(potential, |r, u| r * u)?);
    let fluctuation_part = 0.5 * m * integrate(&cd.marginal.zip_with(&cd.variance, |r, v| r * v)?);
    Ok(EnergySplit {
        total,
        drift_part,
        fluctuation_part,
    })
}

/// How closely a joint density realizes the Nelson process of `target` at
/// resolution dt: drift `v + u` and conditional variance `2ν/dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub dt: f64,
    pub target_nu: f64,
    /// `(dt/2)∫ρ Var(ẋ|x)` over unfloored nodes: the diffusion constant the
    /// hidden spread implies.
    pub implied_nu: f64,
    /// Per-node `b(x) - (v + u)(x)`.
    pub drift_residual: Vec<f64>,
    /// Per-node `Var(ẋ|x)·dt/(2ν) - 1` (or the raw variance when ν = 0).
    pub variance_residual: Vec<f64>,
    pub max_drift_residual: f64,
    pub max_variance_residual: f64,
    /// Nodes whose marginal lies below `support_rel · max` are left out of the maxima.
    pub support_rel: f64,
    pub classical: bool,
}

impl DriftReport {
    pub fn realizes(&self, tol: f64) -> bool {
        self.max_drift_residual <= tol && self.max_variance_residual <= tol
    }
}

pub fn drift_decomposition_report(
    rho: &JointDensity,
    vel: &VelocityMap,
    target: &HydroState,
    dt: f64,
) -> Result<DriftReport, HiddenError> {
    if !(dt > 0.0) {
        return Err(HiddenError::BadTimeStep(dt));
    }
    if *target.grid() != rho.x {
        return Err(HiddenError::GridMismatch);
    }
    let support_rel = 1e-8;
    let cd = conditional_drift(rho, vel)?;
    let nu = target.nu();
    let b = target.forward_drift();
    let drift_residual: Vec<f64> = (0..rho.x.n_nodes()).map(|i| cd.drift[i] - b[i]).collect();
    let variance_residual: Vec<f64> = cd
        .variance
        .values()
        .iter()
        .map(|&v| if nu > 0.0 { v * dt / (2.0 * nu) - 1.0 } else { v })
        .collect();
    let cut = support_rel * cd.marginal.max_abs();
    let on_support = |i: &usize| cd.marginal[*i] > cut && !cd.floored[*i];
    let max_of = |r: &[f64]| {
        (0..r.len())
            .filter(on_support)
            .map(|i| r[i].abs())
            .fold(0.0, f64::max)
    };
    let spread: Vec<f64> = (0..rho.x.n_nodes())
        .map(|i| if cd.floored[i] { 0.0 } else { cd.marginal[i] * cd.variance[i] })
        .collect();
    let implied_nu = 0.5 * dt * integrate(&ScalarField::new(rho.x, spread)?);
    Ok(DriftReport {
        dt,
        target_nu: nu,
        implied_nu,
        max_drift_residual: max_of(&drift_residual),
        max_variance_residual: max_of(&variance_residual),
        drift_residual,
        variance_residual,
        support_rel,
        classical: implied_nu == 0.0,
    })
}

/// A joint density and velocity map whose y-average reproduces the forward
/// drift of `target` and whose conditional variance is `2ν/dt`: the marginal
/// is ρ, y is an independent standard Gaussian on `y_grid`, and
/// `ẋ = b(x) + √(2ν/dt)·(y - ȳ)/s` with ȳ, s the lattice mean and spread.
pub fn nelson_realizing(
    target: &HydroState,
    y_grid: Grid,
    dt: f64,
) -> Result<(JointDensity, VelocityMap), HiddenError> {
    if !(dt > 0.0) {
        return Err(HiddenError::BadTimeStep(dt));
    }
    let xg = *target.grid();
    let phi = crate::fields::normalize(&ScalarField::from_fn(y_grid, |y| (-0.5 * y * y).exp()))?;
    let ys = ScalarField::from_fn(y_grid, |y| y);
    let mean = integrate(&phi.zip_with(&ys, |p, y| p * y)?);
    let var = integrate(&phi.zip_with(&ys, |p, y| p * (y - mean) * (y - mean))?);
    let amp = (2.0 * target.nu() / dt).sqrt() / var.sqrt();
    let (rho, b) = (target.rho(), target.forward_drift());
    let ny = y_grid.n_nodes();
    let mut joint = Vec::with_capacity(xg.n_nodes() * ny);
    let mut xdot = Vec::with_capacity(xg.n_nodes() * ny);
    for i in 0..xg.n_nodes() {
        for j in 0..ny {
            joint.push(rho[i] * phi[j]);
            xdot.push(b[i] + amp * (y_grid.x(j) - mean));
        }
    }
    Ok((
        JointDensity::new(xg, y_grid, joint)?,
        VelocityMap::new(xg, y_grid, xdot, target.mass())?,
    ))
}
