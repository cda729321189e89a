//! Uniform one-dimensional grids, nodal fields and the discrete calculus
//! shared by every other module.
//!
//! Two topologies are supported. A periodic grid of `n` nodes closes on
//! itself (node `n` is node `0`) and integrates with the rectangle rule. A
//! reflecting grid spans `[origin, origin + (n - 1) * spacing]` and
//! integrates with the trapezoid rule, so its end nodes own half cells.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest grid accepted anywhere in the crate.
pub const MIN_NODES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid needs at least {min} nodes, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("density has negative value {value} at node {node}")]
    NegativeDensity { node: usize, value: f64 },
    #[error("density has non-positive total mass {0}")]
    NonPositiveMass(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Periodic,
    Reflecting,
}

/// A uniform grid with flat (identity) metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_nodes: usize,
    spacing: f64,
    topology: Topology,
    origin: f64,
}

impl Grid {
    pub fn new(
        n_nodes: usize,
        spacing: f64,
        topology: Topology,
        origin: f64,
    ) -> Result<Self, FieldError> {
        if n_nodes < MIN_NODES {
            return Err(FieldError::GridTooSmall {
                min: MIN_NODES,
                got: n_nodes,
            });
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(FieldError::BadSpacing(spacing));
        }
        Ok(Self {
            n_nodes,
            spacing,
            topology,
            origin,
        })
    }

    /// Periodic grid of circumference 2π starting at θ = 0.
    pub fn circle(n_nodes: usize) -> Result<Self, FieldError> {
        Self::new(n_nodes, 2.0 * PI / n_nodes as f64, Topology::Periodic, 0.0)
    }

    /// Reflecting grid with first node at `lo` and last node at `hi`.
    pub fn line(n_nodes: usize, lo: f64, hi: f64) -> Result<Self, FieldError> {
        let spacing = (hi - lo) / (n_nodes.max(2) - 1) as f64;
        Self::new(n_nodes, spacing, Topology::Reflecting, lo)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::Periodic
    }

    /// Coordinate of node `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.x(i)).collect()
    }

    /// Circumference for periodic grids, distance between end nodes otherwise.
    pub fn length(&self) -> f64 {
        match self.topology {
            Topology::Periodic => self.n_nodes as f64 * self.spacing,
            Topology::Reflecting => (self.n_nodes - 1) as f64 * self.spacing,
        }
    }

    /// Lower and upper edge of the domain.
    pub fn bounds(&self) -> (f64, f64) {
        (self.origin, self.origin + self.length())
    }

    /// Quadrature weight of node `i` (rectangle on circles, trapezoid on lines).
    pub fn weight(&self, i: usize) -> f64 {
        match self.topology {
            Topology::Reflecting if i == 0 || i + 1 == self.n_nodes => 0.5 * self.spacing,
            _ => self.spacing,
        }
    }

    /// Index of the node whose dual cell contains `x`. `x` must lie in the domain.
    pub fn cell_of(&self, x: f64) -> usize {
        let s = ((x - self.origin) / self.spacing).round();
        match self.topology {
            Topology::Periodic => (s as i64).rem_euclid(self.n_nodes as i64) as usize,
            Topology::Reflecting => s.clamp(0.0, (self.n_nodes - 1) as f64) as usize,
        }
    }

    /// Lower edge and width of the dual cell of node `i`.
    pub fn cell_extent(&self, i: usize) -> (f64, f64) {
        let lo = self.x(i) - 0.5 * self.spacing;
        match self.topology {
            Topology::Reflecting if i == 0 => (self.origin, 0.5 * self.spacing),
            Topology::Reflecting if i + 1 == self.n_nodes => (lo, 0.5 * self.spacing),
            _ => (lo, self.spacing),
        }
    }

    /// Map a periodic coordinate into `[origin, origin + length)`; identity on lines.
    pub fn wrap(&self, x: f64) -> f64 {
        match self.topology {
            Topology::Periodic => {
                let l = self.length();
                let r = (x - self.origin).rem_euclid(l);
                // rem_euclid can round up to l itself
                self.origin + if r >= l { 0.0 } else { r }
            }
            Topology::Reflecting => x,
        }
    }

    /// Shortest signed displacement from `a` to `b` (minimum image on circles).
    pub fn displacement(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        match self.topology {
            Topology::Periodic => {
                let l = self.length();
                d - l * (d / l).round()
            }
            Topology::Reflecting => d,
        }
    }

    /// Linear interpolation of nodal `values` at `x`. Beyond the end nodes of a
    /// reflecting grid the boundary value is used.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.n_nodes;
        let s = (x - self.origin) / self.spacing;
        match self.topology {
            Topology::Periodic => {
                let s = s.rem_euclid(n as f64);
                let i = (s.floor() as usize).min(n - 1);
                let t = s - i as f64;
                let j = (i + 1) % n;
                values[i] + t * (values[j] - values[i])
            }
            Topology::Reflecting => {
                if s <= 0.0 {
                    return values[0];
                }
                if s >= (n - 1) as f64 {
                    return values[n - 1];
                }
                let i = s.floor() as usize;
                let t = s - i as f64;
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn check_len(&self, len: usize) -> Result<(), FieldError> {
        if len != self.n_nodes {
            return Err(FieldError::LengthMismatch {
                expected: self.n_nodes,
                got: len,
            });
        }
        Ok(())
    }
}

macro_rules! nodal_field {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            grid: Grid,
            values: Vec<f64>,
        }

        impl $name {
            pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
                grid.check_len(values.len())?;
                Ok(Self { grid, values })
            }

            pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
                let values = (0..grid.n_nodes()).map(|i| f(grid.x(i))).collect();
                Self { grid, values }
            }

            pub fn constant(grid: Grid, c: f64) -> Self {
                Self { grid, values: vec![c; grid.n_nodes()] }
            }

            pub fn zeros(grid: Grid) -> Self {
                Self::constant(grid, 0.0)
            }

            pub fn grid(&self) -> &Grid {
                &self.grid
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
                Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
            }

            /// Node-wise combination of two fields on the same grid.
            pub fn zip_with(
                &self,
                other: &Self,
                f: impl Fn(f64, f64) -> f64,
            ) -> Result<Self, FieldError> {
                if self.grid != other.grid {
                    return Err(FieldError::GridMismatch);
                }
                let values = self
                    .values
                    .iter()
                    .zip(&other.values)
                    .map(|(&a, &b)| f(a, b))
                    .collect();
                Ok(Self { grid: self.grid, values })
            }

            pub fn scale(&self, c: f64) -> Self {
                self.map(|v| c * v)
            }

            pub fn max_abs(&self) -> f64 {
                self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
            }

            /// Write the field as `x,value` CSV with a header line.
            pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
                writeln!(w, "x,value")?;
                for (i, v) in self.values.iter().enumerate() {
                    writeln!(w, "{},{}", self.grid.x(i), v)?;
                }
                Ok(())
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.values[i]
            }
        }
    };
}

nodal_field!(
    /// One real value per node: densities, phases, potentials.
    ScalarField
);
nodal_field!(
    /// One real component per node (configuration space is one-dimensional).
    VectorField
);

impl ScalarField {
    /// Reinterpret as a vector field on the same nodes.
    pub fn into_vector(self) -> VectorField {
        VectorField {
            grid: self.grid,
            values: self.values,
        }
    }

    /// Check the density role: every value non-negative.
    pub fn check_density(&self) -> Result<(), FieldError> {
        match self.values.iter().position(|&v| v < 0.0 || v.is_nan()) {
            Some(node) => Err(FieldError::NegativeDensity {
                node,
                value: self.values[node],
            }),
            None => Ok(()),
        }
    }
}

impl VectorField {
    pub fn into_scalar(self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values,
        }
    }
}

/// Nodal derivative: central differences inside, wrap on circles, second-order
/// one-sided differences at reflecting ends. Exact for affine data.
pub fn gradient(f: &ScalarField) -> Result<VectorField, FieldError> {
    Ok(VectorField {
        grid: f.grid,
        values: derivative(&f.grid, &f.values, 0.0)?,
    })
}

/// Gradient of a multivalued function on a circle. Crossing the seam from the
/// last node to node 0 adds `seam_shift` to the value, so a branch of `S` with
/// `S(θ + 2π) = S(θ) + seam_shift` differentiates smoothly. Plain gradient on lines.
pub fn gradient_multivalued(f: &ScalarField, seam_shift: f64) -> Result<VectorField, FieldError> {
    Ok(VectorField {
        grid: f.grid,
        values: derivative(&f.grid, &f.values, seam_shift)?,
    })
}

/// Divergence in one dimension; same stencil as [`gradient`].
pub fn divergence(v: &VectorField) -> Result<ScalarField, FieldError> {
    Ok(ScalarField {
        grid: v.grid,
        values: derivative(&v.grid, &v.values, 0.0)?,
    })
}

/// Wide-stencil Laplacian `(f[i+2] - 2 f[i] + f[i-2]) / (2h)^2`, which is the
/// composition of [`divergence`] and [`gradient`]. Within two nodes of a
/// reflecting end the composition is evaluated directly.
pub fn laplacian(f: &ScalarField) -> Result<ScalarField, FieldError> {
    let g = &f.grid;
    let n = g.n_nodes;
    let inv = 1.0 / (4.0 * g.spacing * g.spacing);
    let v = &f.values;
    let mut out = vec![0.0; n];
    match g.topology {
        Topology::Periodic => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = (v[(i + 2) % n] - 2.0 * v[i] + v[(i + n - 2) % n]) * inv;
            }
        }
        Topology::Reflecting => {
            let composed = divergence(&gradient(f)?)?;
            for (i, o) in out.iter_mut().enumerate() {
                *o = if i < 2 || i + 2 >= n {
                    composed.values[i]
                } else {
                    (v[i + 2] - 2.0 * v[i] + v[i - 2]) * inv
                };
            }
        }
    }
    Ok(ScalarField {
        grid: f.grid,
        values: out,
    })
}

fn derivative(g: &Grid, v: &[f64], seam_shift: f64) -> Result<Vec<f64>, FieldError> {
    let n = g.n_nodes;
    if n < 3 {
        return Err(FieldError::GridTooSmall { min: 3, got: n });
    }
    let h = g.spacing;
    let mut out = vec![0.0; n];
    match g.topology {
        Topology::Periodic => {
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
            out[0] = (v[1] - (v[n - 1] - seam_shift)) / (2.0 * h);
            out[n - 1] = ((v[0] + seam_shift) - v[n - 2]) / (2.0 * h);
        }
        Topology::Reflecting => {
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
            out[0] = (3.0 * (v[1] - v[0]) - (v[2] - v[1])) / (2.0 * h);
            out[n - 1] = (3.0 * (v[n - 1] - v[n - 2]) - (v[n - 2] - v[n - 3])) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Quadrature with the topology's fixed rule.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values
        .iter()
        .enumerate()
        .map(|(i, v)| f.grid.weight(i) * v)
        .sum()
}

/// Rescale a non-negative field to unit integral.
pub fn normalize(rho: &ScalarField) -> Result<ScalarField, FieldError> {
    rho.check_density()?;
    let mass = integrate(rho);
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(FieldError::NonPositiveMass(mass));
    }
    Ok(rho.scale(1.0 / mass))
}

/// `∫ |a - b|`.
pub fn l1_distance(a: &ScalarField, b: &ScalarField) -> Result<f64, FieldError> {
    Ok(integrate(&a.zip_with(b, |x, y| (x - y).abs())?))
}

/// Mean and variance of a density (minimum-image moments are not used; call on
/// line grids or well-localized periodic data).
pub fn moments(rho: &ScalarField) -> (f64, f64) {
    let g = rho.grid;
    let mass = integrate(rho);
    let mean = integrate(&ScalarField::from_fn(g, |x| x).zip_with(rho, |x, r| x * r).unwrap()) / mass;
    let var = integrate(
        &ScalarField::from_fn(g, |x| (x - mean) * (x - mean))
            .zip_with(rho, |x, r| x * r)
            .unwrap(),
    ) / mass;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
        (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt()
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(matches!(
            Grid::new(4, 0.1, Topology::Periodic, 0.0),
            Err(FieldError::GridTooSmall { .. })
        ));
        assert!(matches!(
            Grid::new(16, 0.0, Topology::Periodic, 0.0),
            Err(FieldError::BadSpacing(_))
        ));
        assert!(ScalarField::new(Grid::circle(16).unwrap(), vec![0.0; 15]).is_err());
    }

    #[test]
    fn gradient_of_constant_is_exactly_zero() {
        for g in [Grid::circle(64).unwrap(), Grid::line(64, -3.0, 5.0).unwrap()] {
            let f = ScalarField::constant(g, 3.7);
            assert!(gradient(&f).unwrap().values().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn gradient_of_sine_on_circle() {
        let g = Grid::circle(256).unwrap();
        let d = gradient(&ScalarField::from_fn(g, f64::sin)).unwrap();
        let err = (0..256)
            .map(|i| (d[i] - g.x(i).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn gradient_exact_for_affine_and_second_order_for_quadratic() {
        let g = Grid::line(101, -1.0, 1.0).unwrap();
        let d = gradient(&ScalarField::from_fn(g, |x| 3.0 * x - 2.0)).unwrap();
        for i in 0..101 {
            assert_abs_diff_eq!(d[i], 3.0, epsilon = 1e-12);
        }
        let d = gradient(&ScalarField::from_fn(g, |x| x * x)).unwrap();
        // central differences are exact on quadratics; interior error is O(h^2) at worst
        for i in 1..100 {
            assert_abs_diff_eq!(d[i], 2.0 * g.x(i), epsilon = 4.0 * g.spacing().powi(2));
        }
    }

    #[test]
    fn multivalued_gradient_hides_the_seam() {
        let g = Grid::circle(64).unwrap();
        let k = 0.37;
        let s = ScalarField::from_fn(g, |th| k * th);
        let d = gradient_multivalued(&s, 2.0 * PI * k).unwrap();
        for i in 0..64 {
            assert_abs_diff_eq!(d[i], k, epsilon = 1e-12);
        }
        // plain gradient sees the jump
        assert!((gradient(&s).unwrap()[0] - k).abs() > 1.0);
    }

    #[test]
    fn quadrature_examples() {
        let c = Grid::circle(100).unwrap();
        assert_abs_diff_eq!(
            integrate(&ScalarField::constant(c, 1.0 / (2.0 * PI))),
            1.0,
            epsilon = 1e-12
        );
        let l = Grid::line(801, -8.0, 8.0).unwrap();
        let gauss = ScalarField::from_fn(l, |x| gaussian(x, 0.0, 1.0));
        assert_abs_diff_eq!(integrate(&gauss), 1.0, epsilon = 1e-6);
        assert_eq!(integrate(&ScalarField::zeros(l)), 0.0);
    }

    #[test]
    fn normalize_examples() {
        let c = Grid::circle(32).unwrap();
        let n = normalize(&ScalarField::constant(c, 2.0)).unwrap();
        for &v in n.values() {
            assert_abs_diff_eq!(v, 1.0 / (2.0 * PI), epsilon = 1e-15);
        }
        let again = normalize(&n).unwrap();
        for i in 0..32 {
            assert_abs_diff_eq!(again[i], n[i], epsilon = 1e-12);
        }
        let mixed = ScalarField::from_fn(c, f64::sin);
        assert!(matches!(normalize(&mixed), Err(FieldError::NegativeDensity { .. })));
        assert!(matches!(
            normalize(&ScalarField::zeros(c)),
            Err(FieldError::NonPositiveMass(_))
        ));
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let l = Grid::line(11, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(integrate(&ScalarField::constant(l, 1.0)), 1.0, epsilon = 1e-15);
        let total: f64 = (0..11).map(|i| l.cell_extent(i).1).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cells_and_interpolation() {
        let c = Grid::circle(16).unwrap();
        let h = c.spacing();
        assert_eq!(c.cell_of(2.0 * PI - 0.1 * h), 0);
        assert_eq!(c.cell_of(3.4 * h), 3);
        assert_abs_diff_eq!(c.displacement(0.1, 2.0 * PI - 0.1), -0.2, epsilon = 1e-12);
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_abs_diff_eq!(c.interpolate(&vals, 2.5 * h), 2.5, epsilon = 1e-12);
        // between the last node and the wrap
        assert_abs_diff_eq!(c.interpolate(&vals, 15.5 * h), 7.5, epsilon = 1e-12);
        let l = Grid::line(11, 0.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..11).map(|i| i as f64).collect();
        assert_eq!(l.interpolate(&vals, 1.5), 10.0);
        assert_eq!(l.interpolate(&vals, -0.5), 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = Grid::line(8, 0.0, 7.0).unwrap();
        let mut buf = Vec::new();
        ScalarField::from_fn(g, |x| 2.0 * x).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,value");
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[3], "2,4");
    }
}
