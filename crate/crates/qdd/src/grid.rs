//! Uniform periodic grid on the unit torus [0,1) and discrete calculus.
//!
//! The discrete inner product is (u,v) = h·Σᵢ uᵢvᵢ with h = 1/N.
//! The forward difference ∇⁺ with periodic wrap is the only gradient
//! used anywhere in the crate; it pairs with the divergence-form flux
//! operator by exact summation by parts,
//!
//!   h·Σᵢ uᵢ (D_n v)ᵢ = −h·Σᵢ n_{i+1/2} (∇⁺u)ᵢ (∇⁺v)ᵢ,
//!
//! which turns the continuum energy identities into floating-point
//! equalities.

use crate::error::QddError;

/// Uniform periodic mesh of [0,1) with N nodes, h = 1/N, xᵢ = i·h.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    /// N must be even and at least 8.
    pub fn new(n_points: usize) -> Result<Self, QddError> {
        if n_points < 8 || !n_points.is_multiple_of(2) {
            return Err(QddError::InvalidInput(format!(
                "n_points must be even, >= 8 (got {n_points})"
            )));
        }
        Ok(Grid { n_points })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Mesh spacing h = 1/N.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n_points as f64
    }

    /// Node coordinate xᵢ = i/N.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_points as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }
}

/// Real-valued grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, QddError> {
        if values.len() != grid.len() {
            return Err(QddError::GridMismatch(format!(
                "field has {} values on a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QddError::InvalidInput(
                "field contains non-finite values".into(),
            ));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Sample f at the grid nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L² norm √(h·Σ fᵢ²).
    pub fn norm_l2(&self) -> f64 {
        (self.grid.spacing() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// Rectangle-rule quadrature h·Σᵢ fᵢ; exact pairing with the
    /// discrete trace by construction.
    pub fn integrate(&self) -> f64 {
        self.grid.spacing() * self.values.iter().sum::<f64>()
    }

    /// Forward difference with periodic wrap: (∇⁺f)ᵢ = (f_{i+1 mod N} − fᵢ)/h.
    pub fn gradient(&self) -> Field {
        let n = self.len();
        let h = self.grid.spacing();
        let mut g = vec![0.0; n];
        for i in 0..n {
            g[i] = (self.values[(i + 1) % n] - self.values[i]) / h;
        }
        Field {
            grid: self.grid,
            values: g,
        }
    }

    /// 3-point periodic Laplacian (Δ_h f)ᵢ = (f_{i+1} − 2fᵢ + f_{i−1})/h².
    pub fn laplacian(&self) -> Field {
        let n = self.len();
        let h2 = self.grid.spacing() * self.grid.spacing();
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = (self.values[(i + 1) % n] - 2.0 * self.values[i]
                + self.values[(i + n - 1) % n])
                / h2;
        }
        Field {
            grid: self.grid,
            values: out,
        }
    }

    /// Pointwise a·self + b·other.
    pub fn lin_comb(&self, a: f64, other: &Field, b: f64) -> Result<Field, QddError> {
        same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Field {
            grid: self.grid,
            values,
        })
    }

    pub fn scale(&self, a: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn shift(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// Discrete inner product (self, other) = h·Σ selfᵢ·otherᵢ.
    pub fn inner(&self, other: &Field) -> Result<f64, QddError> {
        same_grid(self, other)?;
        Ok(self.grid.spacing()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>())
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

pub(crate) fn same_grid(a: &Field, b: &Field) -> Result<(), QddError> {
    if a.grid != b.grid {
        return Err(QddError::GridMismatch(format!(
            "fields live on different grids ({} vs {} nodes)",
            a.grid.len(),
            b.grid.len()
        )));
    }
    Ok(())
}

/// Divergence-form flux operator (D_n u)ᵢ = [n_{i+1/2}(u_{i+1}−uᵢ) − n_{i−1/2}(uᵢ−u_{i−1})]/h²
/// with periodic indices and half-point weights n_{i+1/2} = (nᵢ + n_{i+1})/2.
///
/// Symmetric and negative semidefinite in the discrete inner product;
/// Σᵢ (D_n u)ᵢ telescopes to zero.
pub fn divergence_flux(n: &Field, u: &Field) -> Result<Field, QddError> {
    same_grid(n, u)?;
    if !n.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "divergence_flux weight (min {:.3e})",
            n.min()
        )));
    }
    let len = n.len();
    let h2 = n.grid.spacing() * n.grid.spacing();
    let half = half_weights(n);
    let mut out = vec![0.0; len];
    for i in 0..len {
        let prev = (i + len - 1) % len;
        let next = (i + 1) % len;
        out[i] = (half[i] * (u.values[next] - u.values[i])
            - half[prev] * (u.values[i] - u.values[prev]))
            / h2;
    }
    Ok(Field {
        grid: n.grid,
        values: out,
    })
}

/// Half-point averages n_{i+1/2} = (nᵢ + n_{i+1 mod N})/2.
pub(crate) fn half_weights(n: &Field) -> Vec<f64> {
    let len = n.len();
    (0..len)
        .map(|i| 0.5 * (n.values[i] + n.values[(i + 1) % len]))
        .collect()
}
