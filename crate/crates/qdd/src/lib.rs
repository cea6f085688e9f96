//! Numerical laboratory for the 1D periodic quantum drift-diffusion model.
//!
//! The state of the system is a density operator of Gibbs form
//! ϱ = e^{−(H+A)} on the unit torus, where H = −Δ + V₀ is a fixed
//! Hamiltonian and A is the quantum chemical potential. The density
//! n(x) = Σ_p e^{−λ_p}|φ_p(x)|² evolves by the fully implicit scheme
//!
//!   (n_{k+1} − n_k)/Δt + ∇·(n_k ∇(A_{k+1} − V_{k+1})) = 0,
//!   −ΔV_{k+1} = n_{k+1},      n_{k+1} = n[e^{−(H+A_{k+1})}],
//!
//! and the crate verifies its structural properties at machine level:
//! mass conservation, monotone decay of the free energy and of the
//! relative entropy to the self-consistent equilibrium, strict
//! positivity of the density, and exponential convergence with a
//! measurable rate.
//!
//! Everything is discretized on a uniform periodic grid with the
//! forward-difference gradient as *the* gradient, so the energy
//! identities hold as floating-point equalities rather than O(h²)
//! approximations.

// float guards are written !(x > 0.0) so NaN is rejected too; stencil
// loops index by node because of the periodic wrap
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod closure;
pub mod config;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod output;
pub mod poisson;
pub mod spectral;

#[cfg(test)]
pub(crate) mod test_oracles;

pub use closure::{chemical_potential, representation_residual};
pub use config::{load_config, SimConfig};
pub use equilibrium::{solve_equilibrium, Equilibrium};
pub use error::QddError;
pub use evolution::{run, step, StepResult, TimeSeries};
pub use grid::{divergence_flux, Field, Grid};
pub use poisson::{poisson_energy, solve_poisson};
pub use spectral::{assemble_hamiltonian, gibbs_state, GibbsState, Hamiltonian};
