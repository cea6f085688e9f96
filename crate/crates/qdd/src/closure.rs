//! Inverse of the closure relation: the quantum chemical potential A[n].
//!
//! Given a strictly positive target density n, the unique potential with
//! n[e^{−(H+A)}] = n is found by minimizing the strictly convex dual
//!
//!   G(A) = Tr e^{−(H+A)} + (n, A),
//!
//! whose gradient is n − n[A] and whose Hessian is the negated density
//! response. Newton steps are globalized by Armijo backtracking on G with
//! a roundoff allowance so that the quadratic regime near the optimum is
//! not rejected by floating-point noise.
//!
//! The module also evaluates the pointwise residual of the representation
//! formula A[n] = −V₀ + (1/n)(½Δn + kinetic density − entropy density),
//! a continuum identity whose discrete residual shrinks under mesh
//! refinement.

use nalgebra::DVector;

use crate::error::QddError;
use crate::grid::{same_grid, Field};
use crate::spectral::{
    assemble_hamiltonian, density_response, gibbs_state, log_partition, GibbsState,
};

/// Targets whose min/max ratio falls below this are outside the strict
/// positivity regime the closure requires.
const POSITIVITY_RATIO_FLOOR: f64 = 1e-8;

/// Result of a closure inversion.
#[derive(Debug, Clone)]
pub struct ClosureResult {
    pub a: Field,
    pub state: GibbsState,
    pub iterations: usize,
    /// Final ‖n[A] − n_target‖_∞ / ‖n_target‖_∞.
    pub residual: f64,
    /// Dual objective at each accepted iterate (strictly decreasing).
    pub objective_history: Vec<f64>,
}

/// Constant warm start ln(Tr e^{−(H₀+V₀)} / ∫n_target): exact when the
/// target is a constant density.
pub fn default_initial_potential(n_target: &Field, v0: &Field) -> Result<Field, QddError> {
    let mass = n_target.integrate();
    if !(mass > 0.0) {
        return Err(QddError::NonPositiveField("target density mass".into()));
    }
    Ok(Field::constant(
        n_target.grid(),
        log_partition(v0)? - mass.ln(),
    ))
}

/// Solve n[e^{−(H+A)}] = n_target for A by damped Newton on the dual.
///
/// Converged when ‖n[A] − n_target‖_∞ ≤ tol·‖n_target‖_∞.
pub fn chemical_potential(
    n_target: &Field,
    v0: &Field,
    a_init: &Field,
    tol: f64,
    max_iter: usize,
) -> Result<ClosureResult, QddError> {
    same_grid(n_target, v0)?;
    same_grid(n_target, a_init)?;
    if !n_target.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "target density (min {:.3e})",
            n_target.min()
        )));
    }
    if n_target.min() / n_target.max() < POSITIVITY_RATIO_FLOOR {
        return Err(QddError::InvalidInput(format!(
            "target density min/max ratio {:.3e} below positivity floor {POSITIVITY_RATIO_FLOOR:.1e}",
            n_target.min() / n_target.max()
        )));
    }

    let scale = n_target.norm_inf();
    let mut a = a_init.clone();
    let mut state = gibbs_state(&assemble_hamiltonian(&a, v0)?)?;
    let mut objective = dual_objective(&state, n_target, &a)?;
    let mut history = vec![objective];

    for it in 0..max_iter {
        let n = state.density();
        let g = n_target.lin_comb(1.0, &n, -1.0)?;
        let residual = g.norm_inf() / scale;
        if residual <= tol {
            return Ok(ClosureResult {
                a,
                state,
                iterations: it,
                residual,
                objective_history: history,
            });
        }

        let j = density_response(&state);
        let s = solve_response(&j, &g)?;
        let slope = g.inner(&s)?; // dG[s] < 0 for a descent direction

        // The objective is evaluated through an eigensolve, so comparisons
        // are only meaningful above eps·‖H‖·mass. Once the predicted
        // decrease sinks below that, skip the search: full Newton steps in
        // the quadratic endgame.
        let noise = objective_noise(&state);
        let mut t = 1.0;
        let (accepted_a, accepted_state, accepted_obj) = if slope.abs() <= noise {
            let trial = a.lin_comb(1.0, &s, 1.0)?;
            let trial_state = gibbs_state(&assemble_hamiltonian(&trial, v0)?)?;
            let trial_obj = dual_objective(&trial_state, n_target, &trial)?;
            (trial, trial_state, trial_obj)
        } else {
            loop {
                let trial = a.lin_comb(1.0, &s, t)?;
                let trial_state = gibbs_state(&assemble_hamiltonian(&trial, v0)?)?;
                let trial_obj = dual_objective(&trial_state, n_target, &trial)?;
                if trial_obj <= objective + 1e-4 * t * slope + noise || t < 1e-8 {
                    break (trial, trial_state, trial_obj);
                }
                t *= 0.5;
            }
        };
        a = accepted_a;
        state = accepted_state;
        objective = accepted_obj;
        history.push(objective);
    }

    let residual = n_target.lin_comb(1.0, &state.density(), -1.0)?.norm_inf() / scale;
    Err(QddError::MaxIterations {
        what: "closure inversion".into(),
        iters: max_iter,
        residual,
        hint: "loosen tol or provide a warm start closer to the solution".into(),
    })
}

fn dual_objective(state: &GibbsState, n_target: &Field, a: &Field) -> Result<f64, QddError> {
    Ok(state.mass() + n_target.inner(a)?)
}

/// Resolution of the dual objective: eigenvalue roundoff eps·‖H‖ carried
/// through the Boltzmann weights.
fn objective_noise(state: &GibbsState) -> f64 {
    let lam_max = state
        .eigenvalues()
        .iter()
        .fold(0.0f64, |m, l| m.max(l.abs()));
    f64::EPSILON * (1.0 + lam_max) * (1.0 + state.mass())
}

/// Solve J·s = g by spectral pseudo-inverse of −J (symmetric positive
/// semidefinite). High-frequency response modes carry exponentially small
/// eigenvalues — occupations of distant spectral pairs underflow — so a
/// direct factorization would amplify roundoff in those directions into
/// large spurious potential components; the relative cutoff drops them.
fn solve_response(j: &nalgebra::DMatrix<f64>, g: &Field) -> Result<Field, QddError> {
    let n = g.len();
    let eig = nalgebra_lapack::SymmetricEigen::try_new(-j.clone())
        .ok_or_else(|| QddError::LinearSolve("response eigensolve failed".into()))?;
    let sigma_max = eig.eigenvalues.iter().fold(0.0f64, |m, s| m.max(*s));
    if !(sigma_max > 0.0) {
        return Err(QddError::LinearSolve("density response is zero".into()));
    }
    let cutoff = 1e-12 * sigma_max;
    let rhs = DVector::from_column_slice(g.values());
    let coeffs = eig.eigenvectors.tr_mul(&rhs);
    let mut s = DVector::zeros(n);
    for p in 0..n {
        let sigma = eig.eigenvalues[p];
        if sigma > cutoff {
            s.axpy(-coeffs[p] / sigma, &eig.eigenvectors.column(p), 1.0);
        }
    }
    Field::new(g.grid(), s.as_slice().to_vec()).map_err(|e| QddError::LinearSolve(e.to_string()))
}

/// Pointwise defect of the representation formula and its L² norm.
#[derive(Debug, Clone)]
pub struct RepresentationResidual {
    pub residual: Field,
    pub norm: f64,
}

/// rᵢ = Aᵢ + V₀ᵢ − (1/nᵢ)(½(Δ_h n)ᵢ + kinetic_densityᵢ − entropy_densityᵢ),
/// with A and V₀ taken from the state that produced n.
pub fn representation_residual(
    state: &GibbsState,
    n: &Field,
) -> Result<RepresentationResidual, QddError> {
    same_grid(n, state.potential())?;
    if !n.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "density (min {:.3e})",
            n.min()
        )));
    }
    let lap = n.laplacian();
    let d = state.densities();
    let a = state.potential();
    let v0 = state.external();
    let mut values = vec![0.0; n.len()];
    for i in 0..n.len() {
        values[i] =
            a[i] + v0[i] - (0.5 * lap[i] + d.kinetic_density[i] - d.entropy_density[i]) / n[i];
    }
    let residual = Field::new(n.grid(), values)?;
    let norm = residual.norm_l2();
    Ok(RepresentationResidual { residual, norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::spectral::laplacian_matrix;
    use crate::test_oracles::{matrix_exp, random_smooth_field};
    use rand_chacha::rand_core::SeedableRng;
    use std::f64::consts::PI;

    fn forward(a: &Field, v0: &Field) -> (GibbsState, Field) {
        let s = gibbs_state(&assemble_hamiltonian(a, v0).unwrap()).unwrap();
        let n = s.density();
        (s, n)
    }

    #[test]
    fn round_trip_recovers_smooth_potential() {
        let g = Grid::new(32).unwrap();
        let v0 = Field::zeros(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..5 {
            let a_star = random_smooth_field(g, &mut rng, 0.5);
            let (_, n_star) = forward(&a_star, &v0);
            let a0 = default_initial_potential(&n_star, &v0).unwrap();
            let out = chemical_potential(&n_star, &v0, &a0, 1e-10, 60).unwrap();
            let err = out.a.lin_comb(1.0, &a_star, -1.0).unwrap().norm_inf();
            assert!(err <= 1e-8, "sup error {err:.3e}");
        }
    }

    #[test]
    fn scaled_target_shifts_potential_by_constant() {
        let g = Grid::new(32).unwrap();
        let v0 = Field::zeros(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let a_star = random_smooth_field(g, &mut rng, 0.4);
        let (_, n_star) = forward(&a_star, &v0);
        let c = 0.9f64;
        let scaled = n_star.scale((-c).exp());
        let a0 = default_initial_potential(&scaled, &v0).unwrap();
        let out = chemical_potential(&scaled, &v0, &a0, 1e-10, 60).unwrap();
        let expected = a_star.shift(c);
        let err = out.a.lin_comb(1.0, &expected, -1.0).unwrap().norm_inf();
        assert!(err <= 1e-8, "sup error {err:.3e}");
    }

    #[test]
    fn constant_target_gives_log_partition_offset() {
        let g = Grid::new(32).unwrap();
        let v0 = Field::zeros(g);
        let m = 0.7;
        let target = Field::constant(g, m);
        let a0 = Field::zeros(g);
        let out = chemical_potential(&target, &v0, &a0, 1e-11, 60).unwrap();
        // Oracle: Θ_h from the matrix-exponential trace.
        let theta = matrix_exp(&(-laplacian_matrix(g))).trace();
        let expected = (theta / m).ln();
        for i in 0..32 {
            assert!((out.a[i] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_objective_strictly_decreases() {
        let g = Grid::new(24).unwrap();
        let v0 = Field::zeros(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let a_star = random_smooth_field(g, &mut rng, 0.8);
        let (_, n_star) = forward(&a_star, &v0);
        let a0 = default_initial_potential(&n_star, &v0).unwrap();
        let out = chemical_potential(&n_star, &v0, &a0, 1e-10, 60).unwrap();
        for pair in out.objective_history.windows(2) {
            assert!(pair[1] < pair[0] + 1e-13 * (1.0 + pair[0].abs()));
        }
    }

    #[test]
    fn forward_map_is_monotone() {
        let g = Grid::new(24).unwrap();
        let v0 = Field::zeros(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        for _ in 0..10 {
            let a1 = random_smooth_field(g, &mut rng, 1.0);
            let a2 = random_smooth_field(g, &mut rng, 1.0);
            let (_, n1) = forward(&a1, &v0);
            let (_, n2) = forward(&a2, &v0);
            let da = a1.lin_comb(1.0, &a2, -1.0).unwrap();
            let dn = n1.lin_comb(1.0, &n2, -1.0).unwrap();
            assert!(da.inner(&dn).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn different_starts_converge_to_same_potential() {
        let g = Grid::new(24).unwrap();
        let v0 = Field::zeros(g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        let a_star = random_smooth_field(g, &mut rng, 0.5);
        let (_, n_star) = forward(&a_star, &v0);
        let tol = 1e-10;
        let r1 = chemical_potential(
            &n_star,
            &v0,
            &default_initial_potential(&n_star, &v0).unwrap(),
            tol,
            60,
        )
        .unwrap();
        let r2 = chemical_potential(&n_star, &v0, &Field::constant(g, 2.0), tol, 60).unwrap();
        let gap = r1.a.lin_comb(1.0, &r2.a, -1.0).unwrap().norm_inf();
        assert!(
            gap <= 10.0 * tol * (1.0 + a_star.norm_inf()),
            "gap {gap:.3e}"
        );
    }

    #[test]
    fn rejects_degenerate_targets() {
        let g = Grid::new(16).unwrap();
        let v0 = Field::zeros(g);
        let a0 = Field::zeros(g);
        let mut flat = vec![1.0; 16];
        flat[3] = -0.1;
        let negative = Field::new(g, flat).unwrap();
        assert!(chemical_potential(&negative, &v0, &a0, 1e-8, 10).is_err());
        let mut ratio = vec![1.0; 16];
        ratio[7] = 1e-12;
        let tiny = Field::new(g, ratio).unwrap();
        assert!(matches!(
            chemical_potential(&tiny, &v0, &a0, 1e-8, 10),
            Err(QddError::InvalidInput(_))
        ));
    }

    #[test]
    fn representation_residual_shrinks_under_refinement() {
        let smooth = |x: f64| 0.3 * (2.0 * PI * x).cos() + 0.1 * (4.0 * PI * x).sin();
        let mut norms = Vec::new();
        for n_pts in [32, 64, 128] {
            let g = Grid::new(n_pts).unwrap();
            let a = Field::from_fn(g, smooth);
            let v0 = Field::zeros(g);
            let (state, n) = forward(&a, &v0);
            norms.push(representation_residual(&state, &n).unwrap().norm);
        }
        assert!(norms[1] < norms[0], "norms {norms:?}");
        assert!(norms[2] < norms[1], "norms {norms:?}");
    }

    #[test]
    fn constant_potential_residual_matches_spectral_sum() {
        // With A ≡ c and V₀ = 0 the density is constant, Δ_h n = 0, and the
        // residual reduces to c + (entropy − kinetic)/n with both densities
        // given by the free circulant sums.
        let c = 0.25;
        let n_pts = 16usize;
        let g = Grid::new(n_pts).unwrap();
        let h = g.spacing();
        let a = Field::constant(g, c);
        let v0 = Field::zeros(g);
        let (state, n) = forward(&a, &v0);
        let rr = representation_residual(&state, &n).unwrap();
        let mut kin = 0.0;
        let mut ent = 0.0;
        let mut dens = 0.0;
        for k in 0..n_pts {
            let gamma = 2.0 * (1.0 - (2.0 * PI * k as f64 / n_pts as f64).cos()) / (h * h);
            let lam = gamma + c;
            kin -= (-lam).exp() * gamma;
            ent += -lam * (-lam).exp();
            dens += (-lam).exp();
        }
        let expected = c - (kin - ent) / dens;
        for i in 0..n_pts {
            assert!((rr.residual[i] - expected).abs() < 1e-10 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn residual_invariant_under_degenerate_relabeling() {
        // Rotate an orthonormal basis inside a degenerate eigenspace of the
        // free Hamiltonian; all spectral densities must be unchanged.
        let g = Grid::new(16).unwrap();
        let v0 = Field::zeros(g);
        let a = Field::constant(g, 0.1);
        let state = gibbs_state(&assemble_hamiltonian(&a, &v0).unwrap()).unwrap();
        let lam = state.eigenvalues().to_vec();
        assert!((lam[1] - lam[2]).abs() < 1e-8 * (1.0 + lam[1].abs()));
        let mut vecs = state.eigenvectors().clone();
        let (th_c, th_s) = (0.6f64.cos(), 0.6f64.sin());
        for i in 0..16 {
            let u = vecs[(i, 1)];
            let w = vecs[(i, 2)];
            vecs[(i, 1)] = th_c * u + th_s * w;
            vecs[(i, 2)] = -th_s * u + th_c * w;
        }
        let rotated = GibbsState::from_parts(g, lam, vecs, a.clone(), v0.clone());
        let n1 = state.density();
        let n2 = rotated.density();
        for i in 0..16 {
            assert!((n1[i] - n2[i]).abs() < 1e-11);
        }
        let r1 = representation_residual(&state, &n1).unwrap();
        let r2 = representation_residual(&rotated, &n2).unwrap();
        assert!((r1.norm - r2.norm).abs() < 1e-9 * (1.0 + r1.norm));
    }
}
