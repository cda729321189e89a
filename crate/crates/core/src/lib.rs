//! Numerical laboratory for Nelson's stochastic mechanics.
//!
//! * [`fields`]: grids, nodal fields, discrete calculus and quadrature.
//! * [`schrodinger`]: Crank–Nicolson reference integrator.
//! * [`madelung`]: hydrodynamic variables, energy functional, residuals.
//! * [`nelson`]: walker ensembles, Fokker–Planck propagation, time reversal.
//! * [`estimators`]: kinetic-energy estimators from path increments.
//! * [`hidden`]: joint densities over subsystem and hidden coordinates.
//! * [`circle`]: states with constant current velocity on a ring.

// `!(x > 0.0)` guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod circle;
pub mod estimators;
pub mod fields;
pub mod hidden;
pub mod madelung;
pub mod nelson;
pub mod schrodinger;
