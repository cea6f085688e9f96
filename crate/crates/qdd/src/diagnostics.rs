//! Scalar functionals and inequality monitors.
//!
//! Free energy in its two algebraically equal forms, relative entropy by
//! two routes, the Σ functional relative to the equilibrium, the
//! dissipation integrand, Klein / Lieb–Thirring / log-Sobolev ratios, the
//! exponential-rate fit and the double-commutator cross-check. Operator
//! traces are taken on dense matrices in the discrete functional calculus,
//! where cyclicity is exact.

use serde::Serialize;

use crate::equilibrium::Equilibrium;
use crate::error::QddError;
use crate::grid::{half_weights, same_grid, Field};
use crate::poisson::{poisson_energy, solve_poisson};
use crate::spectral::{laplacian_matrix, GibbsState};

/// Free energy of a Gibbs state, twice.
///
/// The spectral form sums Tr β(ϱ) + Tr √H₀ϱ√H₀ + Tr V₀ϱ + ½‖∇V‖²; the
/// dual form is −(A+1, n) + ½‖∇V‖². They agree identically because
/// Σβ(w_p) = −Σλ_p w_p − Σw_p in the discrete functional calculus.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FreeEnergy {
    pub f_spectral: f64,
    pub f_dual: f64,
    pub gap: f64,
}

/// Both forms of F for a state and its Poisson potential (pass a zero
/// field when electrostatics are off).
pub fn free_energy(state: &GibbsState, v: &Field) -> Result<FreeEnergy, QddError> {
    same_grid(state.potential(), v)?;
    let tr = state.traces();
    let e_v = poisson_energy(v);
    let f_spectral = tr.entropy + tr.kinetic + tr.potential + e_v;
    let n = state.density();
    let f_dual = -state.potential().shift(1.0).inner(&n)? + e_v;
    Ok(FreeEnergy {
        f_spectral,
        f_dual,
        gap: (f_spectral - f_dual).abs(),
    })
}

/// Relative entropy S(ϱ₁,ϱ₂) by two routes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RelativeEntropy {
    /// (n₁, A₂ − A₁): exact because log ϱᵢ = −(H + Aᵢ) discretely.
    pub s_linear: f64,
    /// Tr(ϱ₁ log ϱ₁) − Tr(ϱ₁ log ϱ₂) on dense matrices.
    pub s_matrix: f64,
}

/// Requires both states on the same grid with the same external potential.
/// Nonnegativity of S holds for equal-mass pairs.
pub fn relative_entropy(s1: &GibbsState, s2: &GibbsState) -> Result<RelativeEntropy, QddError> {
    same_grid(s1.potential(), s2.potential())?;
    let v0_gap = s1.external().lin_comb(1.0, s2.external(), -1.0)?.norm_inf();
    if v0_gap > 0.0 {
        return Err(QddError::InvalidInput(format!(
            "relative entropy requires a shared external potential (dev {v0_gap:.3e})"
        )));
    }
    let n1 = s1.density();
    let da = s2.potential().lin_comb(1.0, s1.potential(), -1.0)?;
    let s_linear = n1.inner(&da)?;

    let rho1 = s1.rho_matrix();
    let s_matrix = (&rho1 * s1.log_rho_matrix()).trace() - (&rho1 * s2.log_rho_matrix()).trace();
    Ok(RelativeEntropy { s_linear, s_matrix })
}

/// Σ[n] = −∫(n(A − A∞) + n − n∞) + ½‖∇⁺(V − V∞)‖², the relative entropy
/// to the equilibrium plus the electrostatic-difference energy.
///
/// V is derived from n by the equilibrium's own Poisson setting, so the
/// two agree on whether electrostatics exist.
pub fn sigma_functional(n: &Field, a: &Field, eq: &Equilibrium) -> Result<f64, QddError> {
    same_grid(n, &eq.n_inf)?;
    same_grid(a, &eq.a_inf)?;
    let mass_gap = (n.integrate() - eq.n_inf.integrate()).abs();
    if mass_gap > 1e-8 {
        return Err(QddError::MassMismatch(format!(
            "sigma requires equal masses (gap {mass_gap:.3e})"
        )));
    }
    let v = if eq.poisson_on {
        solve_poisson(n)
    } else {
        Field::zeros(n.grid())
    };
    let da = a.lin_comb(1.0, &eq.a_inf, -1.0)?;
    let linear = n.inner(&da)? + (n.integrate() - eq.n_inf.integrate());
    let dv = v.lin_comb(1.0, &eq.v_inf, -1.0)?;
    Ok(-linear + poisson_energy(&dv))
}

/// h·Σᵢ n_{i+1/2}((∇⁺(A − V))ᵢ)², the instantaneous free-energy decay
/// rate, with the same half-point weights as the flux operator.
pub fn dissipation(n: &Field, a: &Field, v: &Field) -> Result<f64, QddError> {
    same_grid(n, a)?;
    same_grid(n, v)?;
    if !n.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "dissipation weight (min {:.3e})",
            n.min()
        )));
    }
    let u = a.lin_comb(1.0, v, -1.0)?;
    let grad = u.gradient();
    let half = half_weights(n);
    let h = n.grid().spacing();
    Ok(h * grad
        .values()
        .iter()
        .zip(&half)
        .map(|(g, w)| w * g * g)
        .sum::<f64>())
}

/// Ratios may be absent when their denominators vanish; degenerate cases
/// are data, not errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InequalityPanel {
    /// Tr((1+|log ϱ∞|)(ϱ−ϱ∞)²) on dense matrices.
    pub klein_numerator: f64,
    /// S(ϱ,ϱ∞)/klein_numerator.
    pub klein_ratio: Option<f64>,
    /// ‖n‖_∞ / (‖ϱ‖_{J₂}^{1/4}‖ϱ‖_E^{3/4}).
    pub lt_sup_ratio: f64,
    /// ‖∇⁺n‖_{L²} / (‖ϱ‖_{J₁}^{1/4}‖ϱ‖_E^{3/4}).
    pub lt_grad_ratio: f64,
    /// (F − F∞)/dissipation.
    pub logsob_ratio: Option<f64>,
    /// Tr(H₀ϱH₀) = Σ w_p‖L_per φ_p‖²: reported as a finiteness witness
    /// for the regularity of Gibbs states.
    pub h0_rho_h0_trace: f64,
}

const RATIO_DENOMINATOR_FLOOR: f64 = 1e-14;

/// Evaluate the Klein, Lieb–Thirring and log-Sobolev ratios of a state
/// against the matching-mass equilibrium. `v` is the state's Poisson
/// potential (zero field when electrostatics are off).
pub fn inequality_panel(
    state: &GibbsState,
    eq: &Equilibrium,
    v: &Field,
) -> Result<InequalityPanel, QddError> {
    same_grid(state.potential(), &eq.a_inf)?;
    let n = state.density();

    let delta = state.rho_matrix() - eq.state.rho_matrix();
    let delta_sq = &delta * &delta;
    let abs_log: Vec<f64> = eq.state.eigenvalues().iter().map(|l| l.abs()).collect();
    let weighted = eq.state.weighted_matrix(&abs_log);
    let klein_numerator = delta_sq.trace() + (&weighted * &delta_sq).trace();

    let s = relative_entropy(state, &eq.state)?.s_linear;
    let klein_ratio = (klein_numerator > RATIO_DENOMINATOR_FLOOR).then(|| s / klein_numerator);

    let tr = state.traces();
    let j2: f64 = state
        .occupations()
        .iter()
        .map(|w| w * w)
        .sum::<f64>()
        .sqrt();
    let j1 = tr.mass;
    let energy_norm = tr.mass + tr.kinetic;
    let lt_sup_ratio = n.norm_inf() / (j2.powf(0.25) * energy_norm.powf(0.75));
    let lt_grad_ratio = n.gradient().norm_l2() / (j1.powf(0.25) * energy_norm.powf(0.75));

    let f = free_energy(state, v)?.f_dual;
    let f_inf = free_energy(&eq.state, &eq.v_inf)?.f_dual;
    let diss = dissipation(&n, state.potential(), v)?;
    let logsob_ratio = (diss > RATIO_DENOMINATOR_FLOOR).then(|| (f - f_inf) / diss);

    let lap = laplacian_matrix(state.grid());
    let image = &lap * state.eigenvectors();
    let h = state.grid().spacing();
    let mut h0_rho_h0_trace = 0.0;
    for (p, w) in state.occupations().iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let col = image.column(p);
        h0_rho_h0_trace += w * h * col.iter().map(|x| x * x).sum::<f64>();
    }

    Ok(InequalityPanel {
        klein_numerator,
        klein_ratio,
        lt_sup_ratio,
        lt_grad_ratio,
        logsob_ratio,
        h0_rho_h0_trace,
    })
}

/// Least-squares exponential rate of a positive decaying series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExponentialFit {
    /// Decay rate: minus the slope of the log-linear fit (positive for
    /// decaying data).
    pub mu: f64,
    /// Goodness of fit; 0 when the log-values are constant.
    pub r_squared: f64,
    /// Fitted ln(value) at t = 0 (used to draw the fit line).
    pub ln_intercept: f64,
}

/// Fit ln(value) = c − μ·t by least squares over the supplied window.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<ExponentialFit, QddError> {
    if times.len() != values.len() {
        return Err(QddError::InvalidInput(format!(
            "fit needs matching lengths ({} vs {})",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 10 {
        return Err(QddError::InvalidInput(format!(
            "fit needs at least 10 samples (got {})",
            times.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(QddError::InvalidInput(format!(
            "fit requires strictly positive values (got {bad})"
        )));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let t_mean = times.iter().sum::<f64>() / n;
    let y_mean = logs.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, y) in times.iter().zip(&logs) {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
    }
    if stt == 0.0 {
        return Err(QddError::InvalidInput(
            "fit requires distinct time samples".into(),
        ));
    }
    let slope = sty / stt;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (t, y) in times.iter().zip(&logs) {
        let pred = y_mean + slope * (t - t_mean);
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    };
    Ok(ExponentialFit {
        mu: -slope,
        r_squared,
        ln_intercept: y_mean - slope * t_mean,
    })
}

/// Both sides of the dissipation/double-commutator identity.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CommutatorCheck {
    /// ‖√n ∇⁺(A − A∞)‖² (the dissipation with V = 0).
    pub lhs: f64,
    /// ½·Tr((A − A∞)·ℒϱ) with ℒ = −[H,[H,·]] and H = −Δ + V₀ dense.
    pub rhs: f64,
    pub gap: f64,
}

/// Cross-check the dissipation against the double-commutator trace form.
///
/// The identity is a continuum statement evaluated with all operators as
/// dense matrices built from the same discrete H; the gap shrinks under
/// mesh refinement. Stated with electrostatics off, so Poisson-on
/// equilibria are rejected. Note the trace form carries a factor ½:
/// on the diagonal, [H,[H,ϱ]](x,x) = 2(nA′)′, so
/// ∫ n|∇A|² = ½·Tr((A−A∞)(−[H,[H,ϱ]])); any ϱ = f(H) zeroes the trace.
pub fn commutator_check(state: &GibbsState, eq: &Equilibrium) -> Result<CommutatorCheck, QddError> {
    if eq.poisson_on {
        return Err(QddError::PoissonOn(
            "commutator check is defined in the zero-electrostatics setting".into(),
        ));
    }
    same_grid(state.potential(), &eq.a_inf)?;
    let v0_gap = state
        .external()
        .lin_comb(1.0, eq.state.external(), -1.0)?
        .norm_inf();
    if v0_gap > 0.0 {
        return Err(QddError::InvalidInput(
            "state and equilibrium use different external potentials".into(),
        ));
    }

    let n = state.density();
    let zero = Field::zeros(n.grid());
    let da = state.potential().lin_comb(1.0, &eq.a_inf, -1.0)?;
    let lhs = dissipation(&n, &da, &zero)?;

    let grid = n.grid();
    let mut h_m = laplacian_matrix(grid);
    for i in 0..grid.len() {
        h_m[(i, i)] += state.external()[i];
    }
    let rho = state.rho_matrix();
    let comm1 = &h_m * &rho - &rho * &h_m;
    let comm2 = &h_m * &comm1 - &comm1 * &h_m;
    // ℒϱ = −[H,[H,ϱ]]; only the diagonal enters the trace against da
    let mut rhs = 0.0;
    for i in 0..grid.len() {
        rhs += da[i] * (-comm2[(i, i)]);
    }
    rhs *= 0.5;
    Ok(CommutatorCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}
