//! Poisson solve −ΔV = n with the pinned-node convention V(0) = V(1) = 0.
//!
//! The Hamiltonian lives on the torus but the electrostatic potential is
//! pinned at the node x = 0 (identified with x = 1), so the solve is a
//! standard interval Dirichlet problem for nodes 1..N−1. The resulting V
//! is not periodic — ∇⁺V jumps across the pinned node — and every
//! downstream gradient of V uses the same wrap convention with V_N = V₀ = 0.

use crate::grid::Field;

/// Solve −(V_{i+1} − 2Vᵢ + V_{i−1})/h² = nᵢ for i = 1..N−1 with V₀ = V_N = 0.
///
/// Thomas algorithm on the (N−1)×(N−1) tridiagonal system; the 3-point
/// stencil is exact on quadratics.
pub fn solve_poisson(n: &Field) -> Field {
    let len = n.len();
    let h2 = n.grid().spacing() * n.grid().spacing();
    let m = len - 1;

    // rows scaled by h²: diag 2, off-diag -1, rhs h²·n_i
    let mut c = vec![0.0; m]; // superdiagonal after elimination
    let mut d = vec![0.0; m]; // rhs after elimination
    let mut denom = 2.0;
    c[0] = -1.0 / denom;
    d[0] = h2 * n[1] / denom;
    for j in 1..m {
        denom = 2.0 + c[j - 1];
        if j < m - 1 {
            c[j] = -1.0 / denom;
        }
        d[j] = (h2 * n[j + 1] + d[j - 1]) / denom;
    }
    let mut v = vec![0.0; len];
    v[m] = d[m - 1];
    for j in (1..m).rev() {
        v[j] = d[j - 1] - c[j - 1] * v[j + 1];
    }
    v[0] = 0.0;
    Field::new(n.grid(), v).expect("poisson output on input grid")
}

/// Electrostatic energy ½·h·Σᵢ (∇⁺V)ᵢ² with the wrap using V_N = V₀ = 0.
pub fn poisson_energy(v: &Field) -> f64 {
    let g = v.gradient();
    0.5 * v.grid().spacing() * g.values().iter().map(|x| x * x).sum::<f64>()
}
