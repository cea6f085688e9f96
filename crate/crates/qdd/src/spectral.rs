//! Periodic Hamiltonian assembly, Gibbs states and spectral functionals.
//!
//! The discrete Hamiltonian is H = L_per + diag(V₀ + A) where L_per is the
//! 3-point periodic Laplacian (−∇⁻∇⁺); its full dense eigendecomposition
//! defines the Gibbs state ϱ = e^{−(H)} through Boltzmann occupations
//! w_p = e^{−λ_p}. No spectral truncation is applied: the discrete operator
//! is finite-dimensional, so operator traces are full matrix traces and the
//! functional-calculus identities (log ϱ = −H, β(w) = −(λ+1)w, ...) are
//! exact at the discrete level.
//!
//! Eigenvectors are orthonormalized in the discrete inner product
//! ⟨u,v⟩ = h·Σ uᵢvᵢ, and kinetic quantities are always evaluated through
//! the quadratic form ⟨φ, L_per φ⟩ = ‖∇⁺φ‖².

use nalgebra::{DMatrix, DVector};

use crate::error::QddError;
use crate::grid::{same_grid, Field, Grid};

/// Threshold below which the divided difference of exp switches to its
/// series form; the free Laplacian spectrum is doubly degenerate, so the
/// direct quotient would divide by (near-)zero.
const DEGENERACY_THRESHOLD: f64 = 1e-6;

/// Orthonormality defect allowed on a spectral decomposition.
const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Relative eigen-residual allowed per eigenpair.
const EIGEN_RESIDUAL_TOL: f64 = 1e-9;

/// Dense symmetric operator on grid functions, with its potentials kept
/// alongside the matrix.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grid: Grid,
    matrix: DMatrix<f64>,
    potential: Field,
    external: Field,
}

impl Hamiltonian {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The chemical potential A used in H = −Δ + V₀ + A.
    pub fn potential(&self) -> &Field {
        &self.potential
    }

    /// The external potential V₀.
    pub fn external(&self) -> &Field {
        &self.external
    }
}

/// Dense matrix of the 3-point periodic Laplacian L_per = −∇⁻∇⁺.
pub fn laplacian_matrix(grid: Grid) -> DMatrix<f64> {
    let n = grid.len();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 * inv_h2;
        m[(i, (i + 1) % n)] -= inv_h2;
        m[(i, (i + n - 1) % n)] -= inv_h2;
    }
    m
}

/// H = L_per + diag(V₀ + A); symmetric by construction.
pub fn assemble_hamiltonian(a: &Field, v0: &Field) -> Result<Hamiltonian, QddError> {
    same_grid(a, v0)?;
    let grid = a.grid();
    let mut matrix = laplacian_matrix(grid);
    for i in 0..grid.len() {
        matrix[(i, i)] += v0[i] + a[i];
    }
    Ok(Hamiltonian {
        grid,
        matrix,
        potential: a.clone(),
        external: v0.clone(),
    })
}

/// Spectral decomposition {λ_p, φ_p} of H + A with Boltzmann occupations
/// w_p = e^{−λ_p}; eigenvalues ascending, eigenvectors h-orthonormal.
#[derive(Debug, Clone)]
pub struct GibbsState {
    grid: Grid,
    eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, orthonormal in ⟨u,v⟩ = h·Σ uᵢvᵢ.
    eigenvectors: DMatrix<f64>,
    occupations: Vec<f64>,
    potential: Field,
    external: Field,
}

/// Traces of the state against the free-energy ingredients.
#[derive(Debug, Clone, Copy)]
pub struct SpectralTraces {
    /// Tr ϱ = Σ w_p.
    pub mass: f64,
    /// Tr √H₀ ϱ √H₀ = Σ w_p‖∇⁺φ_p‖².
    pub kinetic: f64,
    /// Tr β(ϱ) = Σ (w_p ln w_p − w_p).
    pub entropy: f64,
    /// Tr V₀ϱ = (V₀, n).
    pub potential: f64,
}

/// Pointwise spectral densities, in the sign convention of the
/// representation formula: the kinetic density −Σ w_p|(∇⁺φ_p)ᵢ|² is
/// nonpositive (see `closure::representation_residual`).
#[derive(Debug, Clone)]
pub struct SpectralDensities {
    pub kinetic_density: Field,
    pub entropy_density: Field,
}

/// Entropy term β(e^{−λ}) = w ln w − w evaluated stably as −(λ+1)e^{−λ};
/// exact in the discrete functional calculus and free of 0·ln 0.
pub(crate) fn beta_term(lambda: f64, w: f64) -> f64 {
    -(lambda + 1.0) * w
}

/// Stable divided difference of x ↦ e^{−x}:
/// G(a,b) = (e^{−a} − e^{−b})/(b − a), G(a,a) = e^{−a}.
pub fn exp_divided_difference(a: f64, b: f64) -> f64 {
    let d = b - a;
    if d.abs() < DEGENERACY_THRESHOLD {
        // e^{−(a+b)/2}·sinh(d/2)/(d/2), series to O(d⁴)
        (-0.5 * (a + b)).exp() * (1.0 + d * d / 24.0)
    } else {
        ((-a).exp() - (-b).exp()) / d
    }
}

/// Full eigendecomposition of H with occupations w_p = e^{−λ_p}.
///
/// Non-convergence of the eigensolver and contract violations
/// (orthonormality, eigen-residuals) are hard errors.
pub fn gibbs_state(h: &Hamiltonian) -> Result<GibbsState, QddError> {
    let n = h.grid.len();
    let eig = nalgebra_lapack::SymmetricEigen::try_new(h.matrix.clone())
        .ok_or(QddError::Eigensolver { size: n })?;

    // LAPACK returns ascending eigenvalues; sort anyway to pin the contract
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    // rescale to h-orthonormality
    let scale = 1.0 / h.grid.spacing().sqrt();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = eig.eigenvectors[(row, src)] * scale;
        }
    }

    let state = GibbsState {
        grid: h.grid,
        occupations: eigenvalues.iter().map(|l| (-l).exp()).collect(),
        eigenvalues,
        eigenvectors,
        potential: h.potential.clone(),
        external: h.external.clone(),
    };
    state.check_contracts(&h.matrix)?;
    Ok(state)
}

impl GibbsState {
    fn check_contracts(&self, matrix: &DMatrix<f64>) -> Result<(), QddError> {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let gram = self.eigenvectors.tr_mul(&self.eigenvectors) * h;
        let mut defect = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                let target = if p == q { 1.0 } else { 0.0 };
                defect = defect.max((gram[(p, q)] - target).abs());
            }
        }
        if defect > ORTHONORMALITY_TOL {
            return Err(QddError::SpectralContract(format!(
                "orthonormality defect {defect:.3e} exceeds {ORTHONORMALITY_TOL:.1e}"
            )));
        }
        let image = matrix * &self.eigenvectors;
        for p in 0..n {
            let lam = self.eigenvalues[p];
            let mut sq = 0.0;
            for i in 0..n {
                let r = image[(i, p)] - lam * self.eigenvectors[(i, p)];
                sq += r * r;
            }
            let res = (h * sq).sqrt();
            if res > EIGEN_RESIDUAL_TOL * (1.0 + lam.abs()) {
                return Err(QddError::SpectralContract(format!(
                    "eigen residual {res:.3e} at λ_{p} = {lam:.6e}"
                )));
            }
        }
        Ok(())
    }

    /// Rebuild from known spectral data (used for exact spectral shifts,
    /// where eigenvectors are reused and eigenvalues move by a constant).
    pub(crate) fn from_parts(
        grid: Grid,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<f64>,
        potential: Field,
        external: Field,
    ) -> Self {
        GibbsState {
            grid,
            occupations: eigenvalues.iter().map(|l| (-l).exp()).collect(),
            eigenvalues,
            eigenvectors,
            potential,
            external,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn occupations(&self) -> &[f64] {
        &self.occupations
    }

    /// The chemical potential A this state was built with.
    pub fn potential(&self) -> &Field {
        &self.potential
    }

    /// The external potential V₀ of the underlying Hamiltonian.
    pub fn external(&self) -> &Field {
        &self.external
    }

    /// Tr ϱ = Σ_p w_p.
    pub fn mass(&self) -> f64 {
        self.occupations.iter().sum()
    }

    /// Local density nᵢ = Σ_p w_p φ_{p,i}²; strictly positive, and
    /// integrate(n) = Σ_p w_p by quadrature pairing.
    pub fn density(&self) -> Field {
        let n = self.grid.len();
        let mut values = vec![0.0; n];
        for p in 0..n {
            let w = self.occupations[p];
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let v = self.eigenvectors[(i, p)];
                values[i] += w * v * v;
            }
        }
        Field::new(self.grid, values).expect("density on state grid")
    }

    /// Mass, kinetic, entropy and external-potential traces.
    pub fn traces(&self) -> SpectralTraces {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let mut kinetic = 0.0;
        let mut entropy = 0.0;
        for p in 0..n {
            let w = self.occupations[p];
            entropy += beta_term(self.eigenvalues[p], w);
            if w == 0.0 {
                continue;
            }
            let mut grad_sq = 0.0;
            for i in 0..n {
                let d = (self.eigenvectors[((i + 1) % n, p)] - self.eigenvectors[(i, p)]) / h;
                grad_sq += d * d;
            }
            kinetic += w * h * grad_sq;
        }
        let density = self.density();
        let potential = self
            .external
            .inner(&density)
            .expect("external potential on state grid");
        SpectralTraces {
            mass: self.mass(),
            kinetic,
            entropy,
            potential,
        }
    }

    /// Pointwise kinetic and entropy densities,
    /// −Σ_p w_p|(∇⁺φ_p)ᵢ|² and Σ_p (w_p ln w_p)|φ_{p,i}|².
    pub fn densities(&self) -> SpectralDensities {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let mut kin = vec![0.0; n];
        let mut ent = vec![0.0; n];
        for p in 0..n {
            let w = self.occupations[p];
            if w == 0.0 {
                continue;
            }
            let wlnw = -self.eigenvalues[p] * w; // w ln w, exactly
            for i in 0..n {
                let v = self.eigenvectors[(i, p)];
                let d = (self.eigenvectors[((i + 1) % n, p)] - v) / h;
                kin[i] -= w * d * d;
                ent[i] += wlnw * v * v;
            }
        }
        SpectralDensities {
            kinetic_density: Field::new(self.grid, kin).expect("kinetic density"),
            entropy_density: Field::new(self.grid, ent).expect("entropy density"),
        }
    }

    /// Dense matrix of ϱ = h·Φ·diag(w)·Φᵀ (operator representation in the
    /// coordinate basis; matrix trace equals Σ w_p).
    pub fn rho_matrix(&self) -> DMatrix<f64> {
        self.weighted_matrix(&self.occupations)
    }

    /// Dense matrix of log ϱ = h·Φ·diag(−λ)·Φᵀ, using ln w_p = −λ_p exactly.
    pub fn log_rho_matrix(&self) -> DMatrix<f64> {
        let weights: Vec<f64> = self.eigenvalues.iter().map(|l| -l).collect();
        self.weighted_matrix(&weights)
    }

    /// Dense matrix of h·Φ·diag(weights)·Φᵀ.
    pub fn weighted_matrix(&self, weights: &[f64]) -> DMatrix<f64> {
        let n = self.grid.len();
        let h = self.grid.spacing();
        let mut scaled = self.eigenvectors.clone();
        for p in 0..n {
            let w = weights[p] * h;
            for i in 0..n {
                scaled[(i, p)] *= w;
            }
        }
        let vt = self.eigenvectors.transpose();
        scaled * vt
    }
}

/// Fréchet derivative of A ↦ n[e^{−(H+A)}] as a dense N×N map
/// (Daleckii–Krein divided differences):
///
///   J_{ij} = −h·Σ_{p,q} G(λ_p,λ_q)·φ_{p,i}φ_{q,i}·φ_{p,j}φ_{q,j},
///
/// symmetric negative semidefinite; J·1 = −n.
pub fn density_response(state: &GibbsState) -> DMatrix<f64> {
    let n = state.grid.len();
    let h = state.grid.spacing();
    // J = −sᵀs with rows √(w_pq·h·G_pq)·(φ_p∘φ_q). Only pairs whose
    // divided difference survives underflow contribute (λ ascending, so
    // that means λ_p below the exp underflow edge), and the (p,q)/(q,p)
    // symmetry folds into a weight of 2.
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for p in 0..n {
        if state.occupations[p] == 0.0 {
            break;
        }
        for q in p..n {
            let g = exp_divided_difference(state.eigenvalues[p], state.eigenvalues[q]);
            if g > 0.0 {
                let mult = if p == q { 1.0 } else { 2.0 };
                pairs.push((p, q, (mult * h * g).sqrt()));
            }
        }
    }
    let mut s = DMatrix::zeros(pairs.len(), n);
    for (row, (p, q, scale)) in pairs.iter().enumerate() {
        for j in 0..n {
            s[(row, j)] = scale * state.eigenvectors[(j, *p)] * state.eigenvectors[(j, *q)];
        }
    }
    -(s.tr_mul(&s))
}

/// ln Tr e^{−(L_per + V₀)}: log-partition function of the A = 0 Hamiltonian,
/// the natural constant offset for warm starts.
pub fn log_partition(v0: &Field) -> Result<f64, QddError> {
    let h = assemble_hamiltonian(&Field::zeros(v0.grid()), v0)?;
    let state = gibbs_state(&h)?;
    Ok(state.mass().ln())
}

/// Apply a dense linear map to a field.
pub fn apply_matrix(m: &DMatrix<f64>, f: &Field) -> Field {
    let v = DVector::from_column_slice(f.values());
    let out = m * v;
    Field::new(f.grid(), out.as_slice().to_vec()).expect("matrix apply keeps grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_oracles::{matrix_exp, random_smooth_field};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use std::f64::consts::PI;

    fn free_state(n: usize) -> GibbsState {
        let g = Grid::new(n).unwrap();
        let h = assemble_hamiltonian(&Field::zeros(g), &Field::zeros(g)).unwrap();
        gibbs_state(&h).unwrap()
    }

    #[test]
    fn free_laplacian_spectrum_is_circulant() {
        let n = 16;
        let state = free_state(n);
        let g = Grid::new(n).unwrap();
        let h = g.spacing();
        let mut expected: Vec<f64> = (0..n)
            .map(|k| 2.0 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()) / (h * h))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in state.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
        // interior eigenvalues are doubly degenerate
        let sorted = state.eigenvalues();
        for k in (1..n - 1).step_by(2) {
            assert!((sorted[k] - sorted[k + 1]).abs() < 1e-8 * (1.0 + sorted[k].abs()));
        }
    }

    #[test]
    fn ground_state_of_free_hamiltonian_is_constant() {
        let state = free_state(16);
        assert!(state.eigenvalues()[0].abs() < 1e-10);
        assert!((state.occupations()[0] - 1.0).abs() < 1e-10);
        let phi0: Vec<f64> = (0..16).map(|i| state.eigenvectors()[(i, 0)]).collect();
        let mean = phi0.iter().sum::<f64>() / 16.0;
        for v in &phi0 {
            assert!((v - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_shift_moves_spectrum_not_vectors() {
        let g = Grid::new(16).unwrap();
        let c = 0.8;
        let h0 = assemble_hamiltonian(&Field::zeros(g), &Field::zeros(g)).unwrap();
        let hc = assemble_hamiltonian(&Field::constant(g, c), &Field::zeros(g)).unwrap();
        let s0 = gibbs_state(&h0).unwrap();
        let sc = gibbs_state(&hc).unwrap();
        for (a, b) in s0.eigenvalues().iter().zip(sc.eigenvalues()) {
            assert!((a + c - b).abs() < 1e-8 * (1.0 + b.abs()));
        }
        // ground states are nondegenerate: same vector up to sign
        let dot: f64 = (0..16)
            .map(|i| s0.eigenvectors()[(i, 0)] * sc.eigenvectors()[(i, 0)])
            .sum::<f64>()
            * g.spacing();
        assert!((dot.abs() - 1.0).abs() < 1e-9);
        // densities scale by e^{-c} (basis-independent form of the shift)
        let n0 = s0.density();
        let nc = sc.density();
        for i in 0..16 {
            assert!((nc[i] - (-c).exp() * n0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn matrix_trace_is_diagonal_sum() {
        let g = Grid::new(32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = random_smooth_field(g, &mut rng, 1.0);
        let v0 = random_smooth_field(g, &mut rng, 1.0);
        let h = assemble_hamiltonian(&a, &v0).unwrap();
        let expected: f64 = (0..32)
            .map(|i| 2.0 / (g.spacing() * g.spacing()) + v0[i] + a[i])
            .sum();
        assert!((h.matrix().trace() - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn orthonormality_contract_on_random_potential() {
        let g = Grid::new(64).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = random_smooth_field(g, &mut rng, 1.0);
        let h = assemble_hamiltonian(&a, &Field::zeros(g)).unwrap();
        let state = gibbs_state(&h).unwrap(); // contract checked inside
        let gram = state.eigenvectors().tr_mul(state.eigenvectors()) * g.spacing();
        let mut defect = 0.0f64;
        for p in 0..64 {
            for q in 0..64 {
                let t = if p == q { 1.0 } else { 0.0 };
                defect = defect.max((gram[(p, q)] - t).abs());
            }
        }
        assert!(defect <= 1e-10);
    }

    #[test]
    fn partition_matches_matrix_exponential_trace() {
        // Oracle: scaling-and-squaring matrix exponential of the same H.
        let g = Grid::new(16).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = random_smooth_field(g, &mut rng, 0.8);
        let h = assemble_hamiltonian(&a, &Field::zeros(g)).unwrap();
        let state = gibbs_state(&h).unwrap();
        let expm = matrix_exp(&(-h.matrix().clone()));
        let rel = (state.mass() - expm.trace()).abs() / expm.trace();
        assert!(rel < 1e-9, "rel err {rel:.3e}");
    }

    #[test]
    fn density_is_positive_and_integrates_to_mass() {
        let g = Grid::new(32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let a = random_smooth_field(g, &mut rng, 1.0);
        let h = assemble_hamiltonian(&a, &Field::zeros(g)).unwrap();
        let state = gibbs_state(&h).unwrap();
        let n = state.density();
        assert!(n.is_positive());
        assert!((n.integrate() - state.mass()).abs() < 1e-12 * (1.0 + state.mass()));
    }

    #[test]
    fn constant_potential_density_matches_free_trace() {
        let c = 0.4;
        let g = Grid::new(16).unwrap();
        let h = assemble_hamiltonian(&Field::constant(g, c), &Field::zeros(g)).unwrap();
        let state = gibbs_state(&h).unwrap();
        let n = state.density();
        let theta = matrix_exp(&(-laplacian_matrix(g))).trace();
        for i in 0..16 {
            assert!((n[i] - (-c).exp() * theta).abs() < 1e-10);
        }
    }

    #[test]
    fn beta_of_unit_occupation_is_minus_one() {
        assert_eq!(beta_term(0.0, 1.0), -1.0);
    }

    #[test]
    fn free_ground_mode_has_zero_kinetic_trace() {
        let state = free_state(16);
        // constant mode contributes nothing; total kinetic equals the
        // direct Fourier sum over the remaining modes
        let g = Grid::new(16).unwrap();
        let h = g.spacing();
        let tr = state.traces();
        let oracle: f64 = (1..16)
            .map(|k| {
                let gamma = 2.0 * (1.0 - (2.0 * PI * k as f64 / 16.0).cos()) / (h * h);
                gamma * (-gamma).exp()
            })
            .sum();
        assert!((tr.kinetic - oracle).abs() < 1e-10 * (1.0 + oracle));
    }

    #[test]
    fn shifting_potential_scales_mass() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let a = random_smooth_field(g, &mut rng, 0.7);
        let c = 0.7;
        let s1 = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
        let s2 =
            gibbs_state(&assemble_hamiltonian(&a.shift(c), &Field::zeros(g)).unwrap()).unwrap();
        let rel = (s2.mass() - (-c).exp() * s1.mass()).abs() / s2.mass();
        assert!(rel < 1e-9);
    }

    #[test]
    fn spectral_densities_pair_with_traces() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let a = random_smooth_field(g, &mut rng, 0.9);
        let state = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
        let d = state.densities();
        let tr = state.traces();
        assert!((d.kinetic_density.integrate() + tr.kinetic).abs() < 1e-11 * (1.0 + tr.kinetic));
        let wlnw: f64 = state
            .eigenvalues()
            .iter()
            .zip(state.occupations())
            .map(|(l, w)| -l * w)
            .sum();
        assert!((d.entropy_density.integrate() - wlnw).abs() < 1e-11 * (1.0 + wlnw.abs()));
    }

    #[test]
    fn constant_potential_densities_match_fourier_oracle() {
        // Direct summation over the free circulant modes, independent of
        // the eigensolver path.
        let c = 0.3;
        let n = 16usize;
        let g = Grid::new(n).unwrap();
        let h = g.spacing();
        let state =
            gibbs_state(&assemble_hamiltonian(&Field::constant(g, c), &Field::zeros(g)).unwrap())
                .unwrap();
        let d = state.densities();
        let mut kin_oracle = 0.0;
        let mut ent_oracle = 0.0;
        for k in 0..n {
            let gamma = 2.0 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()) / (h * h);
            let lam = gamma + c;
            kin_oracle -= (-lam).exp() * gamma;
            ent_oracle += -lam * (-lam).exp();
        }
        for i in 0..n {
            assert!((d.kinetic_density[i] - kin_oracle).abs() < 1e-10 * (1.0 + kin_oracle.abs()));
            assert!((d.entropy_density[i] - ent_oracle).abs() < 1e-10 * (1.0 + ent_oracle.abs()));
        }
    }

    #[test]
    fn response_applied_to_constants_gives_minus_density() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let a = random_smooth_field(g, &mut rng, 0.8);
        let state = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
        let j = density_response(&state);
        let out = apply_matrix(&j, &Field::constant(g, 1.0));
        let n = state.density();
        for i in 0..24 {
            assert!((out[i] + n[i]).abs() < 1e-9 * (1.0 + n[i]));
        }
    }

    #[test]
    fn response_is_symmetric() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let a = random_smooth_field(g, &mut rng, 1.0);
        let state = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
        let j = density_response(&state);
        let mut asym = 0.0f64;
        for p in 0..24 {
            for q in 0..24 {
                asym = asym.max((j[(p, q)] - j[(q, p)]).abs());
            }
        }
        assert!(asym < 1e-13);
    }

    #[test]
    fn response_matches_central_differences() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let a = random_smooth_field(g, &mut rng, 0.6);
        let v0 = Field::zeros(g);
        let state = gibbs_state(&assemble_hamiltonian(&a, &v0).unwrap()).unwrap();
        let j = density_response(&state);
        let eps = 1e-5;
        for _ in 0..3 {
            let dir: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = Field::new(g, dir).unwrap();
            let np = gibbs_state(
                &assemble_hamiltonian(&a.lin_comb(1.0, &d, eps).unwrap(), &v0).unwrap(),
            )
            .unwrap()
            .density();
            let nm = gibbs_state(
                &assemble_hamiltonian(&a.lin_comb(1.0, &d, -eps).unwrap(), &v0).unwrap(),
            )
            .unwrap()
            .density();
            let fd = np
                .lin_comb(1.0 / (2.0 * eps), &nm, -1.0 / (2.0 * eps))
                .unwrap();
            let jd = apply_matrix(&j, &d);
            let err = fd.lin_comb(1.0, &jd, -1.0).unwrap().norm_l2() / fd.norm_l2();
            assert!(err <= 1e-5, "fd mismatch {err:.3e}");
        }
    }

    #[test]
    fn response_quadratic_form_is_nonpositive() {
        let g = Grid::new(24).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let a = random_smooth_field(g, &mut rng, 1.0);
        let state = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
        let j = density_response(&state);
        for _ in 0..10 {
            let d: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = Field::new(g, d).unwrap();
            let q = d.inner(&apply_matrix(&j, &d)).unwrap();
            assert!(q <= 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn shift_covariance_holds_for_any_constant(c in -2.0f64..2.0) {
            let g = Grid::new(16).unwrap();
            let a = Field::from_fn(g, |x| 0.4 * (2.0 * PI * x).cos());
            let s1 = gibbs_state(&assemble_hamiltonian(&a, &Field::zeros(g)).unwrap()).unwrap();
            let s2 = gibbs_state(&assemble_hamiltonian(&a.shift(c), &Field::zeros(g)).unwrap())
                .unwrap();
            let rel = (s2.mass() - (-c).exp() * s1.mass()).abs() / s2.mass();
            proptest::prop_assert!(rel < 1e-9);
        }

        #[test]
        fn divided_difference_within_derivative_bound(
            a in -1.0f64..5.0,
            d in -1e-8f64..1e-8,
        ) {
            // |G(a,b) − e^{−a}| ≤ |b−a|·sup|∂G| on the segment
            let g = exp_divided_difference(a, a + d);
            let bound = d.abs() * (-a + d.abs()).exp();
            proptest::prop_assert!((g - (-a).exp()).abs() <= bound + 1e-18);
        }
    }

    #[test]
    fn divided_difference_is_stable_near_degeneracy() {
        let a = 1.3;
        for delta in [1e-12, 1e-9, 1e-7, 9.9e-7, 1.01e-6, 1e-5] {
            let g = exp_divided_difference(a, a + delta);
            assert!((g - (-a).exp()).abs() <= delta * (-a).exp() * 1.01 + 1e-16);
        }
        // just above the threshold the direct quotient must agree with the
        // series form; its cancellation noise is ~eps/d relative
        let d = 1.1e-6;
        let direct = exp_divided_difference(a, a + d);
        let series = (-(a + 0.5 * d)).exp() * (1.0 + d * d / 24.0);
        assert!((direct - series).abs() < 1e-9 * series);
        // large separation: no overflow, exact quotient
        let g = exp_divided_difference(0.0, 1e6);
        assert!((g - 1e-6).abs() < 1e-18);
    }
}
