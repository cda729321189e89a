//! Benchmark states shared by the experiments.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::fields::{FieldError, Grid};
use crate::schrodinger::{init_packet, HbarConvention, Packet, PhysParams, SchrodingerError, WaveField};

/// A named initial state together with its potential and domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Benchmark {
    /// Free Gaussian at rest, width `width`, spreading.
    SpreadingGaussian { width: f64, half_width: f64 },
    /// Ground-state-shaped packet displaced by `displacement` in `U = mω₀²x²/2`.
    CoherentState {
        omega0: f64,
        displacement: f64,
        half_width: f64,
    },
    /// Discrete ground state of `U = mω₀²x²/2`.
    GroundState { omega0: f64, half_width: f64 },
}

/// Units shared by every benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub mass: f64,
    pub hbar: f64,
    pub osmotic_coupling: f64,
    pub convention: HbarConvention,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            mass: 1.0,
            hbar: 1.0,
            osmotic_coupling: 1.0,
            convention: HbarConvention::TwoNu,
        }
    }
}

impl Benchmark {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SpreadingGaussian { .. } => "spreading-gaussian",
            Self::CoherentState { .. } => "coherent-state",
            Self::GroundState { .. } => "ground-state",
        }
    }

    pub fn half_width(&self) -> f64 {
        match *self {
            Self::SpreadingGaussian { half_width, .. }
            | Self::CoherentState { half_width, .. }
            | Self::GroundState { half_width, .. } => half_width,
        }
    }

    pub fn grid(&self, n_nodes: usize) -> Result<Grid, FieldError> {
        Grid::line(n_nodes, -self.half_width(), self.half_width())
    }

    pub fn params(&self, grid: Grid, units: Units) -> PhysParams {
        let p = PhysParams::from_hbar(
            grid,
            units.mass,
            units.osmotic_coupling,
            units.hbar,
            units.convention,
        );
        match *self {
            Self::SpreadingGaussian { .. } => p,
            Self::CoherentState { omega0, .. } | Self::GroundState { omega0, .. } => {
                p.with_harmonic(omega0)
            }
        }
    }

    pub fn initial(&self, params: &PhysParams) -> Result<WaveField, SchrodingerError> {
        let grid = *params.grid();
        let hbar = params.hbar();
        let kind = match *self {
            Self::SpreadingGaussian { width, .. } => Packet::Gaussian {
                center: 0.0,
                width,
                velocity: 0.0,
            },
            Self::CoherentState {
                omega0,
                displacement,
                ..
            } => Packet::Gaussian {
                center: displacement,
                width: (hbar / (2.0 * params.mass * omega0)).sqrt(),
                velocity: 0.0,
            },
            Self::GroundState { .. } => Packet::Eigenstate { level: 0 },
        };
        init_packet(kind, grid, params)
    }

    /// Spreading time `2mσ₀²/ħ` for the free packet, one oscillation period otherwise.
    pub fn characteristic_time(&self, units: Units) -> f64 {
        match *self {
            Self::SpreadingGaussian { width, .. } => 2.0 * units.mass * width * width / units.hbar,
            Self::CoherentState { omega0, .. } | Self::GroundState { omega0, .. } => {
                2.0 * PI / omega0
            }
        }
    }

    /// Analytic position variance of the free packet at time `t`.
    pub fn free_variance(width: f64, t: f64, units: Units) -> f64 {
        let s = units.hbar * t / (2.0 * units.mass * width * width);
        width * width * (1.0 + s * s)
    }
}
