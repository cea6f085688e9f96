//! The invariant suite behind the `check` subcommand: every structural
//! identity the solver relies on, evaluated on deterministic synthetic
//! ensembles, emitted as a JSON verdict.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::closure::{chemical_potential, default_initial_potential, representation_residual};
use crate::diagnostics::{
    commutator_check, dissipation, free_energy, inequality_panel, relative_entropy,
    sigma_functional,
};
use crate::equilibrium::{solve_equilibrium, EquilibriumOptions};
use crate::error::QddError;
use crate::grid::{divergence_flux, half_weights, Field, Grid};
use crate::poisson::{poisson_energy, solve_poisson};
use crate::spectral::{
    apply_matrix, assemble_hamiltonian, density_response, gibbs_state, GibbsState,
};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

const SEED: u64 = 0x0d_15_ea_5e;

/// Band-limited random potential (low Fourier modes, bounded amplitude).
fn smooth(grid: Grid, rng: &mut ChaCha8Rng, amp: f64) -> Field {
    let c1 = rng.gen_range(-amp..amp);
    let s1 = rng.gen_range(-amp..amp);
    let c2 = rng.gen_range(-amp..amp) * 0.5;
    let s2 = rng.gen_range(-amp..amp) * 0.5;
    Field::from_fn(grid, |x| {
        let t = 2.0 * std::f64::consts::PI * x;
        c1 * t.cos() + s1 * t.sin() + c2 * (2.0 * t).cos() + s2 * (2.0 * t).sin()
    })
}

fn state_of(a: &Field, v0: &Field) -> Result<GibbsState, QddError> {
    gibbs_state(&assemble_hamiltonian(a, v0)?)
}

/// Shift A by the exact constant that renormalizes the state's mass.
fn normalized(a: &Field, v0: &Field, mass: f64) -> Result<(Field, GibbsState), QddError> {
    let s = state_of(a, v0)?;
    let a2 = a.shift((s.mass() / mass).ln());
    Ok((a2.clone(), state_of(&a2, v0)?))
}

/// Run every invariant check; deterministic (fixed seed).
pub fn run_invariant_suite() -> Result<CheckReport, QddError> {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    // summation-by-parts structure
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let n = smooth(grid, &mut rng, 0.4).shift(1.5);
            let u = smooth(grid, &mut rng, 1.0);
            let v = smooth(grid, &mut rng, 1.0);
            let lhs = u.inner(&divergence_flux(&n, &v)?)?;
            let gu = u.gradient();
            let gv = v.gradient();
            let half = half_weights(&n);
            let rhs: f64 = -grid.spacing()
                * (0..grid.len())
                    .map(|i| half[i] * gu[i] * gv[i])
                    .sum::<f64>();
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        push(
            "summation_by_parts",
            worst <= 1e-10,
            format!("max defect {worst:.3e}"),
        );
    }

    // Poisson exactness on quadratics and the discrete sine eigenvector
    {
        let grid = Grid::new(64)?;
        let v = solve_poisson(&Field::constant(grid, 1.0));
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            let x = grid.node(i);
            worst = worst.max((v[i] - 0.5 * x * (1.0 - x)).abs());
        }
        let h = grid.spacing();
        let mu = 2.0 * (1.0 - (std::f64::consts::PI * h).cos()) / (h * h);
        let ns = Field::from_fn(grid, |x| (std::f64::consts::PI * x).sin());
        let vs = solve_poisson(&ns);
        for i in 0..grid.len() {
            worst = worst.max((vs[i] - ns[i] / mu).abs());
        }
        push(
            "poisson_exactness",
            worst <= 1e-12,
            format!("max node error {worst:.3e}"),
        );
    }

    // the two free-energy forms agree
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
        let v0 = smooth(grid, &mut rng, 0.5);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let a = smooth(grid, &mut rng, 1.0);
            let s = state_of(&a, &v0)?;
            let v = solve_poisson(&s.density());
            let fe = free_energy(&s, &v)?;
            worst = worst.max(fe.gap / (1.0 + fe.f_spectral.abs()));
        }
        push(
            "free_energy_identity",
            worst <= 1e-10,
            format!("max relative gap {worst:.3e}"),
        );
    }

    // entropy: zero on the diagonal, two routes agree, nonnegative at equal mass
    {
        let grid = Grid::new(24)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
        let v0 = smooth(grid, &mut rng, 0.3);
        let mut worst_gap = 0.0f64;
        let mut min_s = f64::INFINITY;
        let a0 = smooth(grid, &mut rng, 0.5);
        let s0 = state_of(&a0, &v0)?;
        let self_entropy = relative_entropy(&s0, &s0)?.s_linear.abs();
        for _ in 0..20 {
            let (_, s1) = normalized(&smooth(grid, &mut rng, 0.7), &v0, 1.0)?;
            let (_, s2) = normalized(&smooth(grid, &mut rng, 0.7), &v0, 1.0)?;
            let re = relative_entropy(&s1, &s2)?;
            worst_gap = worst_gap.max((re.s_linear - re.s_matrix).abs());
            min_s = min_s.min(re.s_linear);
        }
        push(
            "relative_entropy",
            self_entropy <= 1e-12 && worst_gap <= 1e-9 && min_s >= -1e-12,
            format!("S(r,r) = {self_entropy:.2e}, route gap {worst_gap:.2e}, min S {min_s:.3e}"),
        );
    }

    // Σ identity against the entropy route, and Σ[n∞] = 0
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
        let v0 = smooth(grid, &mut rng, 0.4);
        let eq = solve_equilibrium(&v0, 1.0, EquilibriumOptions::default())?;
        let sigma_eq = sigma_functional(&eq.n_inf, &eq.a_inf, &eq)?.abs();
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let bump = smooth(grid, &mut rng, 0.3);
            let (a, s) = normalized(&eq.a_inf.lin_comb(1.0, &bump, 1.0)?, &v0, 1.0)?;
            let n = s.density();
            let sigma = sigma_functional(&n, &a, &eq)?;
            let re = relative_entropy(&s, &eq.state)?.s_linear;
            let dv = solve_poisson(&n).lin_comb(1.0, &eq.v_inf, -1.0)?;
            worst = worst.max((sigma - re - poisson_energy(&dv)).abs());
        }
        push(
            "sigma_identity",
            sigma_eq <= 1e-10 && worst <= 1e-9,
            format!("sigma at equilibrium {sigma_eq:.2e}, route gap {worst:.2e}"),
        );
    }

    // density response vs central differences
    {
        let grid = Grid::new(24)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
        let v0 = Field::zeros(grid);
        let a = smooth(grid, &mut rng, 0.6);
        let s = state_of(&a, &v0)?;
        let j = density_response(&s);
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let dir: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = Field::new(grid, dir)?;
            let np = state_of(&a.lin_comb(1.0, &d, eps)?, &v0)?.density();
            let nm = state_of(&a.lin_comb(1.0, &d, -eps)?, &v0)?.density();
            let fd = np.lin_comb(1.0 / (2.0 * eps), &nm, -1.0 / (2.0 * eps))?;
            let jd = apply_matrix(&j, &d);
            worst = worst.max(fd.lin_comb(1.0, &jd, -1.0)?.norm_l2() / fd.norm_l2());
        }
        push(
            "jacobian_fd",
            worst <= 1e-5,
            format!("max relative error {worst:.3e}"),
        );
    }

    // shift covariance of the Gibbs map
    {
        let grid = Grid::new(24)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
        let a = smooth(grid, &mut rng, 0.8);
        let v0 = Field::zeros(grid);
        let c = 0.7;
        let s1 = state_of(&a, &v0)?;
        let s2 = state_of(&a.shift(c), &v0)?;
        let rel = (s2.mass() - (-c).exp() * s1.mass()).abs() / s2.mass();
        push(
            "shift_covariance",
            rel <= 1e-9,
            format!("mass scaling error {rel:.3e}"),
        );
    }

    // Klein and Lieb–Thirring panel over a 50-state equal-mass ensemble
    {
        let grid = Grid::new(24)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
        let v0 = smooth(grid, &mut rng, 0.3);
        let eq = solve_equilibrium(&v0, 1.0, EquilibriumOptions::default())?;
        let mut min_ratio = f64::INFINITY;
        let mut max_lt_sup: f64 = 0.0;
        let mut max_lt_grad: f64 = 0.0;
        let mut min_s = f64::INFINITY;
        let mut ok = true;
        for _ in 0..50 {
            let bump = smooth(grid, &mut rng, 0.4);
            let (_, s) = normalized(&eq.a_inf.lin_comb(1.0, &bump, 1.0)?, &v0, 1.0)?;
            let v = solve_poisson(&s.density());
            let p = inequality_panel(&s, &eq, &v)?;
            ok &= p.klein_numerator >= 0.0;
            ok &= p.lt_sup_ratio.is_finite() && p.lt_grad_ratio.is_finite();
            max_lt_sup = max_lt_sup.max(p.lt_sup_ratio);
            max_lt_grad = max_lt_grad.max(p.lt_grad_ratio);
            let s_lin = relative_entropy(&s, &eq.state)?.s_linear;
            min_s = min_s.min(s_lin);
            if let Some(r) = p.klein_ratio {
                min_ratio = min_ratio.min(r);
            }
        }
        ok &= min_s >= -1e-12 && min_ratio.is_finite() && min_ratio > 0.0;
        push(
            "klein_lieb_thirring_panel",
            ok,
            format!(
                "min S {min_s:.3e}, min klein ratio {min_ratio:.4}, max LT sup {max_lt_sup:.4}, max LT grad {max_lt_grad:.4}"
            ),
        );
    }

    // monotonicity of the forward map A ↦ n
    {
        let grid = Grid::new(24)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
        let v0 = Field::zeros(grid);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..10 {
            let a1 = smooth(grid, &mut rng, 1.0);
            let a2 = smooth(grid, &mut rng, 1.0);
            let n1 = state_of(&a1, &v0)?.density();
            let n2 = state_of(&a2, &v0)?.density();
            let da = a1.lin_comb(1.0, &a2, -1.0)?;
            let dn = n1.lin_comb(1.0, &n2, -1.0)?;
            worst = worst.max(da.inner(&dn)?);
        }
        push(
            "monotone_forward_map",
            worst <= 1e-12,
            format!("max pairing {worst:.3e}"),
        );
    }

    // closure inversion round trip
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
        let v0 = Field::zeros(grid);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let a_star = smooth(grid, &mut rng, 0.5);
            let n_star = state_of(&a_star, &v0)?.density();
            let out = chemical_potential(
                &n_star,
                &v0,
                &default_initial_potential(&n_star, &v0)?,
                1e-10,
                60,
            )?;
            worst = worst.max(out.a.lin_comb(1.0, &a_star, -1.0)?.norm_inf());
        }
        push(
            "closure_round_trip",
            worst <= 1e-8,
            format!("max sup error {worst:.3e}"),
        );
    }

    // the equilibrium minimizes F among same-mass perturbations
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
        let v0 = smooth(grid, &mut rng, 0.4);
        let eq = solve_equilibrium(&v0, 1.0, EquilibriumOptions::default())?;
        let f_eq = free_energy(&eq.state, &eq.v_inf)?.f_dual;
        let mut min_excess = f64::INFINITY;
        for _ in 0..5 {
            let bump = smooth(grid, &mut rng, 0.3);
            let (_, s) = normalized(&eq.a_inf.lin_comb(1.0, &bump, 1.0)?, &v0, 1.0)?;
            let v = solve_poisson(&s.density());
            min_excess = min_excess.min(free_energy(&s, &v)?.f_dual - f_eq);
        }
        push(
            "equilibrium_minimality",
            min_excess >= -1e-12,
            format!("min F excess over ensemble {min_excess:.3e}"),
        );
    }

    // representation formula and commutator identity under refinement
    {
        let smooth_fn = |x: f64| {
            0.3 * (2.0 * std::f64::consts::PI * x).cos()
                + 0.1 * (4.0 * std::f64::consts::PI * x).sin()
        };
        let mut rep_norms = Vec::new();
        let mut comm_gaps = Vec::new();
        for n_pts in [32usize, 64, 128] {
            let grid = Grid::new(n_pts)?;
            let v0 = Field::zeros(grid);
            let a = Field::from_fn(grid, smooth_fn);
            let s = state_of(&a, &v0)?;
            let n = s.density();
            rep_norms.push(representation_residual(&s, &n)?.norm);
            let eq = solve_equilibrium(
                &v0,
                s.mass(),
                EquilibriumOptions {
                    poisson_on: false,
                    ..Default::default()
                },
            )?;
            comm_gaps.push(commutator_check(&s, &eq)?.gap);
        }
        let rep_ok = rep_norms[1] < rep_norms[0] && rep_norms[2] < rep_norms[1];
        let comm_ok = comm_gaps[1] < comm_gaps[0] && comm_gaps[2] < comm_gaps[1];
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.3e}"))
                .collect::<Vec<_>>()
                .join(" > ")
        };
        push(
            "continuum_consistency",
            rep_ok && comm_ok,
            format!(
                "representation norms {}, commutator gaps {}",
                fmt(&rep_norms),
                fmt(&comm_gaps)
            ),
        );
    }

    // dissipation is the exact flux pairing
    {
        let grid = Grid::new(32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
        let n = smooth(grid, &mut rng, 0.4).shift(1.5);
        let a = smooth(grid, &mut rng, 0.8);
        let v = smooth(grid, &mut rng, 0.3);
        let u = a.lin_comb(1.0, &v, -1.0)?;
        let d = dissipation(&n, &a, &v)?;
        let pairing = -u.inner(&divergence_flux(&n, &u)?)?;
        let gap = (d - pairing).abs() / (1.0 + d);
        push(
            "dissipation_pairing",
            gap <= 1e-12,
            format!("relative gap {gap:.3e}"),
        );
    }

    let all_passed = checks.iter().all(|c| c.passed);
    Ok(CheckReport { checks, all_passed })
}
