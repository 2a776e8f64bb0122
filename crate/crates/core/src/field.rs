//! Uniform grids on `[0, 1]` and the two field representations.
//!
//! Both field types are immutable after construction. A field is
//! *boundary-enforced* when its end nodes carry the Dirichlet data
//! `u(0) = 1`, `u(1) = e^{iα}` exactly; the flag is recorded at construction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Tolerance used to decide whether end nodes already satisfy the boundary data.
const BOUNDARY_TOL: f64 = 1e-12;

/// Uniform grid with `n` nodes `x_i = i / (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        Ok(Self {
            n,
            h: 1.0 / (n - 1) as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> usize {
        self.n - 1
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Index of the node nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        ((x * (self.n - 1) as f64).round().max(0.0) as usize).min(self.n - 1)
    }
}

/// Shorthand for [`Grid::new`].
pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Planar director `u = (u1, u2)` sampled at grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<[f64; 2]>,
    alpha: f64,
    enforced: bool,
}

pub(crate) fn boundary_value(alpha: f64) -> [f64; 2] {
    [alpha.cos(), alpha.sin()]
}

impl ComplexField {
    /// Wraps node values as given; the boundary flag records whether the end
    /// nodes already match the Dirichlet data.
    pub fn new(grid: Grid, values: Vec<[f64; 2]>, alpha: f64) -> Result<Self> {
        check_len(&grid, values.len())?;
        if values.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidField("non-finite node value".into()));
        }
        let end = boundary_value(alpha);
        let first = values[0];
        let last = values[grid.n() - 1];
        let enforced = (first[0] - 1.0).abs() <= BOUNDARY_TOL
            && first[1].abs() <= BOUNDARY_TOL
            && (last[0] - end[0]).abs() <= BOUNDARY_TOL
            && (last[1] - end[1]).abs() <= BOUNDARY_TOL;
        Ok(Self {
            grid,
            values,
            alpha,
            enforced,
        })
    }

    /// Overwrites the end nodes with the boundary data.
    pub fn with_boundary(grid: Grid, mut values: Vec<[f64; 2]>, alpha: f64) -> Result<Self> {
        check_len(&grid, values.len())?;
        values[0] = [1.0, 0.0];
        values[grid.n() - 1] = boundary_value(alpha);
        let mut f = Self::new(grid, values, alpha)?;
        f.enforced = true;
        Ok(f)
    }

    /// Samples `f(x)` on the grid and enforces the boundary data.
    pub fn from_fn(grid: Grid, alpha: f64, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Self::with_boundary(grid, values, alpha)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn into_values(self) -> Vec<[f64; 2]> {
        self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_boundary_enforced(&self) -> bool {
        self.enforced
    }

    pub fn modulus(&self, i: usize) -> f64 {
        let v = self.values[i];
        v[0].hypot(v[1])
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[0].hypot(v[1])).collect()
    }

    pub fn min_modulus(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Returns a copy with the interior node values replaced.
    pub(crate) fn with_interior(&self, interior: &[f64]) -> Self {
        let mut values = self.values.clone();
        for (i, v) in values[1..self.grid.n() - 1].iter_mut().enumerate() {
            *v = [interior[2 * i], interior[2 * i + 1]];
        }
        Self {
            grid: self.grid,
            values,
            alpha: self.alpha,
            enforced: self.enforced,
        }
    }

    pub(crate) fn interior(&self) -> Vec<f64> {
        self.values[1..self.grid.n() - 1]
            .iter()
            .flat_map(|v| [v[0], v[1]])
            .collect()
    }

    /// Discrete `L²` distance `(Σ h |u_i - v_i|²)^{1/2}`.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        let h = self.grid.h();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .mul_add(h, 0.0)
            .sqrt()
    }
}

/// Lifted representation `u = ρ e^{iθ}` with winding class `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarField {
    grid: Grid,
    rho: Vec<f64>,
    theta: Vec<f64>,
    winding: i64,
    alpha: f64,
    enforced: bool,
}

impl PolarField {
    /// The winding class is read off `θ(1) = 2πM + α`.
    pub fn new(grid: Grid, rho: Vec<f64>, theta: Vec<f64>, alpha: f64) -> Result<Self> {
        check_len(&grid, rho.len())?;
        check_len(&grid, theta.len())?;
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidField("rho must be finite and nonnegative".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidField("non-finite phase".into()));
        }
        let n = grid.n();
        let winding = ((theta[n - 1] - alpha) / (2.0 * PI)).round() as i64;
        let end = 2.0 * PI * winding as f64 + alpha;
        let enforced = (rho[0] - 1.0).abs() <= BOUNDARY_TOL
            && (rho[n - 1] - 1.0).abs() <= BOUNDARY_TOL
            && theta[0].abs() <= BOUNDARY_TOL
            && (theta[n - 1] - end).abs() <= BOUNDARY_TOL;
        Ok(Self {
            grid,
            rho,
            theta,
            winding,
            alpha,
            enforced,
        })
    }

    /// Sets `ρ(0) = ρ(1) = 1`, `θ(0) = 0`, `θ(1) = 2πM + α`.
    pub fn with_boundary(
        grid: Grid,
        mut rho: Vec<f64>,
        mut theta: Vec<f64>,
        winding: i64,
        alpha: f64,
    ) -> Result<Self> {
        check_len(&grid, rho.len())?;
        check_len(&grid, theta.len())?;
        let n = grid.n();
        rho[0] = 1.0;
        rho[n - 1] = 1.0;
        theta[0] = 0.0;
        theta[n - 1] = 2.0 * PI * winding as f64 + alpha;
        let mut p = Self::new(grid, rho, theta, alpha)?;
        p.enforced = true;
        Ok(p)
    }

    /// `ρ ≡ 1`, `θ = (2πM + α) x`.
    pub fn uniform(grid: Grid, winding: i64, alpha: f64) -> Self {
        let rate = 2.0 * PI * winding as f64 + alpha;
        let theta = grid.nodes().map(|x| rate * x).collect();
        Self::with_boundary(grid, vec![1.0; grid.n()], theta, winding, alpha)
            .expect("lengths match the grid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn winding(&self) -> i64 {
        self.winding
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_boundary_enforced(&self) -> bool {
        self.enforced
    }

    /// Cell phase slopes `(θ_{i+1} - θ_i) / h`.
    pub fn theta_slopes(&self) -> Vec<f64> {
        let h = self.grid.h();
        self.theta.windows(2).map(|w| (w[1] - w[0]) / h).collect()
    }

    pub(crate) fn with_interior(&self, interior: &[f64]) -> Self {
        let mut rho = self.rho.clone();
        let mut theta = self.theta.clone();
        let n = self.grid.n();
        for i in 1..n - 1 {
            rho[i] = interior[2 * (i - 1)];
            theta[i] = interior[2 * (i - 1) + 1];
        }
        Self {
            grid: self.grid,
            rho,
            theta,
            winding: self.winding,
            alpha: self.alpha,
            enforced: self.enforced,
        }
    }

    pub(crate) fn interior(&self) -> Vec<f64> {
        let n = self.grid.n();
        (1..n - 1).flat_map(|i| [self.rho[i], self.theta[i]]).collect()
    }
}

fn check_len(grid: &Grid, len: usize) -> Result<()> {
    if len != grid.n() {
        return Err(Error::InvalidField(format!(
            "expected {} node values, got {len}",
            grid.n()
        )));
    }
    Ok(())
}

/// `u_i = (ρ_i cos θ_i, ρ_i sin θ_i)`; the boundary flag carries over.
pub fn to_cartesian(p: &PolarField) -> ComplexField {
    let values: Vec<[f64; 2]> = p
        .rho
        .iter()
        .zip(&p.theta)
        .map(|(&r, &t)| [r * t.cos(), r * t.sin()])
        .collect();
    if p.enforced {
        ComplexField::with_boundary(p.grid, values, p.alpha).expect("lengths match")
    } else {
        ComplexField::new(p.grid, values, p.alpha).expect("finite values")
    }
}

/// `u(x) = e^{i(2πM + α)x}`.
pub fn uniform_twist_field(winding: i64, params: &ModelParams, grid: Grid) -> ComplexField {
    twist_field(2.0 * PI * winding as f64 + params.alpha, params.alpha, grid)
}

/// `u(x) = e^{i·rate·x}` with the boundary data for `alpha` enforced.
pub fn twist_field(rate: f64, alpha: f64, grid: Grid) -> ComplexField {
    ComplexField::from_fn(grid, alpha, |x| {
        let t = rate * x;
        [t.cos(), t.sin()]
    })
    .expect("lengths match")
}
