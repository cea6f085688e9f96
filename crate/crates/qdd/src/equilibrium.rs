//! Self-consistent Schrödinger–Poisson equilibrium.
//!
//! The stationary state is the Gibbs operator ϱ∞ = e^{−(H+A∞)} with
//! A∞ = V∞ − ε_F, −ΔV∞ = n∞ and prescribed total mass Tr ϱ∞ = N.
//! Because the occupations are pure exponentials, the mass constraint is
//! analytically eliminable: with (μ_p, ψ_p) the spectral elements of
//! H₀ + V₀ + V, the Fermi level is ε_F = ln(N / Σ_p e^{−μ_p}) and
//! λ_p = μ_p − ε_F, so every Gummel iterate carries the exact mass.

use crate::error::QddError;
use crate::grid::Field;
use crate::poisson::solve_poisson;
use crate::spectral::{assemble_hamiltonian, gibbs_state, GibbsState};

/// The stationary triple (n∞, A∞, V∞) plus the Fermi level.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub n_inf: Field,
    pub a_inf: Field,
    pub v_inf: Field,
    pub fermi_level: f64,
    pub state: GibbsState,
    /// min n∞: the Krein–Rutman lower bound, checked not assumed.
    pub min_density: f64,
    pub poisson_on: bool,
    /// Gummel iterations consumed (0 in Poisson-off mode).
    pub iterations: usize,
}

/// Options for the damped Gummel fixed point.
#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    pub poisson_on: bool,
    /// Damping α ∈ (0,1]; halved automatically up to 4 times on residual increase.
    pub mix: f64,
    /// Stop when ‖V⁽ᵐ⁺¹⁾ − V⁽ᵐ⁾‖_∞ ≤ tol.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            poisson_on: true,
            mix: 0.5,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// Solve the global minimization problem: damped alternation between the
/// eigenproblem for H₀ + V₀ + V and the Poisson solve, with the Fermi
/// level eliminated in closed form each pass. With `poisson_on = false`
/// a single pass suffices (V∞ ≡ 0).
pub fn solve_equilibrium(
    v0: &Field,
    n_mass: f64,
    opts: EquilibriumOptions,
) -> Result<Equilibrium, QddError> {
    if !(n_mass > 0.0) {
        return Err(QddError::InvalidInput(format!(
            "target mass must be positive (got {n_mass})"
        )));
    }
    if !(opts.mix > 0.0 && opts.mix <= 1.0) {
        return Err(QddError::InvalidInput(format!(
            "mix must lie in (0,1] (got {})",
            opts.mix
        )));
    }
    let grid = v0.grid();
    let mut v = Field::zeros(grid);
    let mut iterations = 0;

    if opts.poisson_on {
        let mut mix = opts.mix;
        let mut halvings = 0;
        let mut prev_res = f64::INFINITY;
        let mut converged = false;
        let mut res = f64::INFINITY;
        for it in 0..opts.max_iter {
            let state = decompose(&v, v0)?;
            let eps_f = fermi_level(&state, n_mass);
            let n = state.density().scale(eps_f.exp());
            let v_new = v.lin_comb(1.0 - mix, &solve_poisson(&n), mix)?;
            res = v_new.lin_comb(1.0, &v, -1.0)?.norm_inf();
            if res > prev_res && halvings < 4 {
                mix *= 0.5;
                halvings += 1;
            }
            prev_res = res;
            v = v_new;
            iterations = it + 1;
            if res <= opts.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(QddError::MaxIterations {
                what: "gummel fixed point".into(),
                iters: iterations,
                residual: res,
                hint: "reduce mix (damping) or loosen tol".into(),
            });
        }
    }

    // Final consistent decomposition at the converged V: shift the spectrum
    // by −ε_F so the stored state is exactly e^{−(H+A∞)} with the exact mass.
    let state = decompose(&v, v0)?;
    let eps_f = fermi_level(&state, n_mass);
    let a_inf = v.shift(-eps_f);
    let shifted = GibbsState::from_parts(
        grid,
        state.eigenvalues().iter().map(|m| m - eps_f).collect(),
        state.eigenvectors().clone(),
        a_inf.clone(),
        v0.clone(),
    );
    let n_inf = shifted.density();
    let min_density = n_inf.min();
    if !(min_density > 0.0) {
        return Err(QddError::NonPositiveField(format!(
            "equilibrium density (min {min_density:.3e})"
        )));
    }
    Ok(Equilibrium {
        n_inf,
        a_inf,
        v_inf: v,
        fermi_level: eps_f,
        state: shifted,
        min_density,
        poisson_on: opts.poisson_on,
        iterations,
    })
}

fn decompose(v: &Field, v0: &Field) -> Result<GibbsState, QddError> {
    gibbs_state(&assemble_hamiltonian(v, v0)?)
}

/// ε_F = ln(N / Σ_p e^{−μ_p}).
fn fermi_level(state: &GibbsState, n_mass: f64) -> f64 {
    n_mass.ln() - state.mass().ln()
}
