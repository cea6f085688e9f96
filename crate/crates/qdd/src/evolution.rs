//! The semi-discrete evolution: one fully implicit step in the chemical
//! potential and the multi-step driver with its monotonicity monitors.
//!
//! A step solves the root problem
//!
//!   R(A) = n[A] − n_k + Δt·D_{n_k}(A − V[n[A]]) = 0,
//!
//! by damped Newton with the exact Fréchet Jacobian
//! J + Δt·D_{n_k}(I − P·J), where J is the density response and P the
//! linear Poisson solve. On Newton failure the time step is halved and
//! retried. The driver enforces, per accepted step: mass conservation,
//! monotone decay of the free energy inclusive of the dissipated amount,
//! monotone decay of Σ, and strict positivity of the density; monotone
//! violations beyond the solver allowance εₛ = 1e−8·(1+|F₀|) also trigger
//! Δt halving rather than being masked.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::closure::{chemical_potential, default_initial_potential};
use crate::config::{InitialSpec, SimConfig};
use crate::diagnostics::{
    dissipation, fit_exponential, free_energy, sigma_functional, ExponentialFit,
};
use crate::equilibrium::{solve_equilibrium, Equilibrium, EquilibriumOptions};
use crate::error::QddError;
use crate::grid::{same_grid, Field, Grid};
use crate::output::read_density_csv;
use crate::poisson::solve_poisson;
use crate::spectral::{assemble_hamiltonian, density_response, gibbs_state, GibbsState};

/// Relative floor (on 1+|F∞|) below which the free-energy gap is treated
/// as unresolved by floating point; the rate fit runs above it.
const GAP_RESOLUTION_FLOOR: f64 = 1e-10;

/// Minimum samples for the exponential-rate fit.
const FIT_MIN_SAMPLES: usize = 10;

/// Options for a single implicit step.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions<'a> {
    pub v0: &'a Field,
    pub poisson_on: bool,
    /// Absolute tolerance on ‖R‖_∞.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub dt_halving_limit: usize,
}

/// One accepted implicit step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub n_next: Field,
    pub a_next: Field,
    pub v_next: Field,
    pub state: GibbsState,
    pub newton_iters: usize,
    pub residual: f64,
    /// Δt actually taken (nominal Δt divided by 2^halvings).
    pub dt_used: f64,
}

/// Advance the density by one implicit step of size `dt`, halving the
/// step on Newton failure up to the configured limit.
pub fn step(
    n_k: &Field,
    dt: f64,
    opts: &StepOptions,
    warm: Option<&Field>,
) -> Result<StepResult, QddError> {
    same_grid(n_k, opts.v0)?;
    if !(dt > 0.0) {
        return Err(QddError::InvalidInput(format!(
            "dt must be positive (got {dt})"
        )));
    }
    if !n_k.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "step input density (min {:.3e})",
            n_k.min()
        )));
    }

    let warm_field;
    let a_start = match warm {
        Some(a) => a,
        None => {
            warm_field = default_initial_potential(n_k, opts.v0)?;
            &warm_field
        }
    };

    let mut last_err = None;
    for halving in 0..=opts.dt_halving_limit {
        let dt_try = dt / f64::powi(2.0, halving as i32);
        match newton_step(n_k, dt_try, opts, a_start) {
            Ok(mut result) => {
                result.dt_used = dt_try;
                return Ok(result);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn newton_step(
    n_k: &Field,
    dt: f64,
    opts: &StepOptions,
    a_start: &Field,
) -> Result<StepResult, QddError> {
    let grid = n_k.grid();
    let n = grid.len();
    let d = flux_matrix(n_k);
    let identity = DMatrix::<f64>::identity(n, n);

    let evaluate = |a: &Field| -> Result<(Field, GibbsState, Field, Field), QddError> {
        let state = gibbs_state(&assemble_hamiltonian(a, opts.v0)?)?;
        let n_a = state.density();
        let v = if opts.poisson_on {
            solve_poisson(&n_a)
        } else {
            Field::zeros(grid)
        };
        let drift = a.lin_comb(1.0, &v, -1.0)?;
        let flux = crate::grid::divergence_flux(n_k, &drift)?;
        let residual = n_a.lin_comb(1.0, n_k, -1.0)?.lin_comb(1.0, &flux, dt)?;
        Ok((residual, state, n_a, v))
    };

    let mut a = a_start.clone();
    let (mut residual, mut state, mut n_a, mut v) = evaluate(&a)?;

    for it in 0..=opts.newton_max_iter {
        let res_inf = residual.norm_inf();
        if res_inf <= opts.newton_tol {
            return Ok(StepResult {
                n_next: n_a,
                a_next: a,
                v_next: v,
                state,
                newton_iters: it,
                residual: res_inf,
                dt_used: dt,
            });
        }
        if it == opts.newton_max_iter {
            break;
        }

        let j = density_response(&state);
        // dR = J + Δt·D·(I − P·J)
        let inner = if opts.poisson_on {
            &identity - poisson_apply_columns(&j)
        } else {
            identity.clone()
        };
        let jacobian = &j + (&d * inner) * dt;
        let rhs = -DVector::from_column_slice(residual.values());
        let s = jacobian
            .lu()
            .solve(&rhs)
            .ok_or_else(|| QddError::LinearSolve("singular step Jacobian".into()))?;
        let s = Field::new(grid, s.as_slice().to_vec())?;

        let merit0: f64 = residual.values().iter().map(|r| r * r).sum::<f64>();
        // residual evaluations inherit eigensolve roundoff; below that the
        // merit comparison is noise, so take the full Newton step
        let lam_max = state
            .eigenvalues()
            .iter()
            .fold(0.0f64, |m, l| m.max(l.abs()));
        let eps_r = f64::EPSILON * (1.0 + lam_max) * (1.0 + state.mass());
        let merit_allowance = eps_r * (eps_r + 2.0 * merit0.sqrt());
        let skip_search = 2e-4 * merit0 <= merit_allowance;
        let mut t = 1.0;
        loop {
            let trial = a.lin_comb(1.0, &s, t)?;
            let (r_t, s_t, n_t, v_t) = evaluate(&trial)?;
            let merit: f64 = r_t.values().iter().map(|r| r * r).sum::<f64>();
            if skip_search || merit <= merit0 * (1.0 - 2e-4 * t) + merit_allowance || t < 1e-8 {
                a = trial;
                residual = r_t;
                state = s_t;
                n_a = n_t;
                v = v_t;
                break;
            }
            t *= 0.5;
        }
    }

    Err(QddError::MaxIterations {
        what: format!("implicit step (dt = {dt:.3e})"),
        iters: opts.newton_max_iter,
        residual: residual.norm_inf(),
        hint: "halving dt; if this persists loosen newton_tol".into(),
    })
}

/// Dense matrix of u ↦ D_{n}u.
fn flux_matrix(n: &Field) -> DMatrix<f64> {
    let len = n.len();
    let h2 = n.grid().spacing() * n.grid().spacing();
    let half = crate::grid::half_weights(n);
    let mut m = DMatrix::zeros(len, len);
    for i in 0..len {
        let prev = (i + len - 1) % len;
        let next = (i + 1) % len;
        m[(i, next)] += half[i] / h2;
        m[(i, i)] -= (half[i] + half[prev]) / h2;
        m[(i, prev)] += half[prev] / h2;
    }
    m
}

/// Apply the Dirichlet Poisson solve to every column: P·J.
fn poisson_apply_columns(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.nrows();
    let grid = Grid::new(n).expect("response matrix size is a valid grid");
    let mut out = DMatrix::zeros(n, n);
    for col in 0..n {
        let f = Field::new(grid, j.column(col).as_slice().to_vec()).expect("column as field");
        let v = solve_poisson(&f);
        for row in 0..n {
            out[(row, col)] = v[row];
        }
    }
    out
}

/// One row of the per-step diagnostics record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub mass: f64,
    pub free_energy: f64,
    pub free_energy_gap: f64,
    pub sigma: f64,
    pub rel_entropy: f64,
    pub dissipation: f64,
    pub min_density: f64,
    pub newton_iters: usize,
}

/// Per-step diagnostics along a run; `t` strictly increasing.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TimeSeries {
    pub rows: Vec<SeriesRow>,
}

/// Grid functions captured at one step.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step_index: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub n: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Clean,
    /// A per-step monitor failed beyond the solver allowance even after
    /// Δt halving; the label names the violated relation.
    InvariantViolation {
        step: usize,
        label: String,
    },
    /// The step solver gave out; partial data retained.
    SolverFailure {
        step: usize,
        message: String,
    },
}

/// Everything a run produces, including partial data on abort.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: TimeSeries,
    pub snapshots: Vec<Snapshot>,
    pub equilibrium: Equilibrium,
    pub fit: Option<ExponentialFit>,
    pub status: RunStatus,
    /// Σ[n₀]: how far from equilibrium the run started.
    pub sigma_initial: f64,
    /// Free energy of the initial state (dual form).
    pub f_initial: f64,
    /// Free energy of the equilibrium (dual form).
    pub f_equilibrium: f64,
    /// Solver allowance εₛ = 1e−8·(1+|F₀|) used by the monotone checks.
    pub eps_solver: f64,
    /// Smallest density value seen along the run.
    pub min_density_seen: f64,
    /// Σ_{j<k} Δt_j·∫n_j|∇⁺(A_{j+1}−V_{j+1})|², aligned with rows[1..]:
    /// the dissipated free energy entering the cumulative decay estimate.
    pub cumulative_consumed: Vec<f64>,
}

/// Run the scheme to T_final, recording diagnostics and enforcing the
/// per-step monitors. The equilibrium is computed once at the start.
pub fn run(cfg: &SimConfig) -> Result<RunOutput, QddError> {
    let grid = Grid::new(cfg.n_points)?;
    let v0 = cfg.v0.build(grid);

    let eq = solve_equilibrium(
        &v0,
        cfg.mass,
        EquilibriumOptions {
            poisson_on: cfg.poisson_on,
            mix: cfg.solver.gummel_mix,
            tol: cfg.solver.gummel_tol,
            max_iter: cfg.solver.gummel_max_iter,
        },
    )?;

    let n0 = initial_density(cfg, grid, &eq)?;
    let inversion = chemical_potential(
        &n0,
        &v0,
        &default_initial_potential(&n0, &v0)?,
        cfg.solver.invert_tol,
        cfg.solver.invert_max_iter,
    )?;
    let mut a = inversion.a;
    let mut n = n0.clone();
    let mut v = if cfg.poisson_on {
        solve_poisson(&n)
    } else {
        Field::zeros(grid)
    };

    let f_equilibrium = free_energy(&eq.state, &eq.v_inf)?.f_dual;
    let f_initial = free_energy(&inversion.state, &v)?.f_dual;
    let eps_solver = 1e-8 * (1.0 + f_initial.abs());
    let sigma_initial = sigma_functional(&n, &a, &eq)?;
    let mass0 = n.integrate();

    let step_opts = StepOptions {
        v0: &v0,
        poisson_on: cfg.poisson_on,
        newton_tol: cfg.solver.newton_tol,
        newton_max_iter: cfg.solver.newton_max_iter,
        dt_halving_limit: cfg.solver.dt_halving_limit,
    };

    let mut series = TimeSeries::default();
    let mut snapshots = Vec::new();
    let mut status = RunStatus::Clean;
    let mut min_density_seen = n.min();
    let mut cumulative_consumed = Vec::new();
    let mut consumed_total = 0.0;

    let mut t = 0.0;
    let mut f_prev = f_initial;
    let mut sigma_prev = sigma_initial;
    series.rows.push(SeriesRow {
        t,
        mass: mass0,
        free_energy: f_initial,
        free_energy_gap: f_initial - f_equilibrium,
        sigma: sigma_initial,
        rel_entropy: rel_entropy_linear(&n, &a, &eq)?,
        dissipation: dissipation(&n, &a, &v)?,
        min_density: n.min(),
        newton_iters: inversion.iterations,
    });
    snapshots.push(make_snapshot(0, t, grid, &n, &a, &v));

    let n_steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
    'time: for k in 1..=n_steps {
        // Monotone violations retry at smaller dt, like Newton failures.
        let mut accepted = None;
        let mut violation: Option<String> = None;
        for halving in 0..=cfg.solver.dt_halving_limit {
            let dt_try = cfg.dt / f64::powi(2.0, halving as i32);
            let result = match step(&n, dt_try, &step_opts, Some(&a)) {
                Ok(r) => r,
                Err(e) => {
                    if halving == cfg.solver.dt_halving_limit {
                        status = RunStatus::SolverFailure {
                            step: k,
                            message: e.to_string(),
                        };
                        break 'time;
                    }
                    continue;
                }
            };
            let f_next = free_energy(&result.state, &result.v_next)?.f_dual;
            let consumed = dissipation(&n, &result.a_next, &result.v_next)?;
            let sigma_next = sigma_functional(&result.n_next, &result.a_next, &eq)?;
            let free_energy_ok = f_next + result.dt_used * consumed <= f_prev + eps_solver;
            let sigma_ok = sigma_next <= sigma_prev + eps_solver;
            if free_energy_ok && sigma_ok {
                accepted = Some((result, f_next, sigma_next, consumed));
                violation = None;
                break;
            }
            violation = Some(if !free_energy_ok {
                format!(
                    "free-energy decay violated at step {k}: F + dt*dissipation - F_prev = {:.3e} > eps = {:.3e}",
                    f_next + result.dt_used * consumed - f_prev,
                    eps_solver
                )
            } else {
                format!(
                    "relative-entropy decay violated at step {k}: sigma increment {:.3e} > eps = {:.3e}",
                    sigma_next - sigma_prev,
                    eps_solver
                )
            });
        }
        let Some((result, f_next, sigma_next, consumed)) = accepted else {
            status = RunStatus::InvariantViolation {
                step: k,
                label: violation.unwrap_or_else(|| "step rejected".into()),
            };
            break 'time;
        };

        t += result.dt_used;
        consumed_total += result.dt_used * consumed;
        cumulative_consumed.push(consumed_total);
        n = result.n_next;
        a = result.a_next;
        v = result.v_next;
        min_density_seen = min_density_seen.min(n.min());

        let mass_now = n.integrate();
        // the violating row stays in the series for post-mortem reading
        series.rows.push(SeriesRow {
            t,
            mass: mass_now,
            free_energy: f_next,
            free_energy_gap: f_next - f_equilibrium,
            sigma: sigma_next,
            rel_entropy: rel_entropy_linear(&n, &a, &eq)?,
            dissipation: dissipation(&n, &a, &v)?,
            min_density: n.min(),
            newton_iters: result.newton_iters,
        });

        let mass_budget = k as f64 * cfg.solver.newton_tol + 1e-12;
        if (mass_now - mass0).abs() > mass_budget {
            status = RunStatus::InvariantViolation {
                step: k,
                label: format!(
                    "mass conservation violated at step {k}: drift {:.3e} > budget {:.3e}",
                    (mass_now - mass0).abs(),
                    mass_budget
                ),
            };
            break 'time;
        }
        if !(n.min() > 0.0) {
            status = RunStatus::InvariantViolation {
                step: k,
                label: format!(
                    "density lower bound lost at step {k} (min {:.3e}); outside the near-equilibrium regime",
                    n.min()
                ),
            };
            break 'time;
        }

        if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 && k != n_steps {
            snapshots.push(make_snapshot(k, t, grid, &n, &a, &v));
        }
        if k == n_steps {
            snapshots.push(make_snapshot(k, t, grid, &n, &a, &v));
        }
        f_prev = f_next;
        sigma_prev = sigma_next;
    }
    if status != RunStatus::Clean {
        // keep the last computed fields for post-mortem output
        snapshots.push(make_snapshot(series.rows.len() - 1, t, grid, &n, &a, &v));
    }

    let fit = fit_decay_tail(&series, f_equilibrium);
    Ok(RunOutput {
        series,
        snapshots,
        equilibrium: eq,
        fit,
        status,
        sigma_initial,
        f_initial,
        f_equilibrium,
        eps_solver,
        min_density_seen,
        cumulative_consumed,
    })
}

/// S(ϱ, ϱ∞) by the linear route (n, A∞ − A).
fn rel_entropy_linear(n: &Field, a: &Field, eq: &Equilibrium) -> Result<f64, QddError> {
    n.inner(&eq.a_inf.lin_comb(1.0, a, -1.0)?)
}

fn make_snapshot(
    step_index: usize,
    t: f64,
    grid: Grid,
    n: &Field,
    a: &Field,
    v: &Field,
) -> Snapshot {
    Snapshot {
        step_index,
        t,
        x: grid.nodes(),
        n: n.values().to_vec(),
        a: a.values().to_vec(),
        v: v.values().to_vec(),
    }
}

/// Fit μ on the still-resolvable tail of F(t) − F∞: rows whose gap
/// exceeds 1e−10·(1+|F∞|), final half of them, at least 10 samples.
fn fit_decay_tail(series: &TimeSeries, f_equilibrium: f64) -> Option<ExponentialFit> {
    let floor = GAP_RESOLUTION_FLOOR * (1.0 + f_equilibrium.abs());
    let resolvable: Vec<(f64, f64)> = series
        .rows
        .iter()
        .skip(1) // k = 0 row is the initial condition, not a step
        .take_while(|r| r.free_energy_gap > floor)
        .map(|r| (r.t, r.free_energy_gap))
        .collect();
    if resolvable.len() < FIT_MIN_SAMPLES {
        return None;
    }
    let window = (resolvable.len() / 2)
        .max(FIT_MIN_SAMPLES)
        .min(resolvable.len());
    let tail = &resolvable[resolvable.len() - window..];
    let times: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let values: Vec<f64> = tail.iter().map(|p| p.1).collect();
    fit_exponential(&times, &values).ok()
}

fn initial_density(cfg: &SimConfig, grid: Grid, eq: &Equilibrium) -> Result<Field, QddError> {
    let raw = match &cfg.init {
        InitialSpec::EquilibriumPerturbation { amplitude, mode } => {
            let bump = Field::from_fn(grid, |x| {
                1.0 + amplitude * (2.0 * std::f64::consts::PI * *mode as f64 * x).cos()
            });
            let mut values = Vec::with_capacity(grid.len());
            for i in 0..grid.len() {
                values.push(eq.n_inf[i] * bump[i]);
            }
            Field::new(grid, values)?
        }
        InitialSpec::File { path } => read_density_csv(path, grid)?,
    };
    if !raw.is_positive() {
        return Err(QddError::NonPositiveField(format!(
            "initial density (min {:.3e})",
            raw.min()
        )));
    }
    // the scheme conserves mass, so the initial mass must match the
    // equilibrium constraint
    Ok(raw.scale(cfg.mass / raw.integrate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PotentialSpec, SolverConfig};

    fn quick_cfg() -> SimConfig {
        SimConfig {
            n_points: 32,
            dt: 1e-3,
            t_final: 0.05,
            poisson_on: false,
            v0: PotentialSpec::Zero,
            mass: 1.0,
            init: InitialSpec::EquilibriumPerturbation {
                amplitude: 0.05,
                mode: 1,
            },
            solver: SolverConfig::default(),
            snapshot_every: 0,
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_the_step() {
        let grid = Grid::new(32).unwrap();
        let v0 = Field::from_fn(grid, |x| 0.3 * (2.0 * std::f64::consts::PI * x).cos());
        let eq = solve_equilibrium(&v0, 1.0, EquilibriumOptions::default()).unwrap();
        let opts = StepOptions {
            v0: &v0,
            poisson_on: true,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            dt_halving_limit: 4,
        };
        let r = step(&eq.n_inf, 1e-3, &opts, Some(&eq.a_inf)).unwrap();
        let drift = r.n_next.lin_comb(1.0, &eq.n_inf, -1.0).unwrap().norm_inf();
        assert!(drift <= 1e-9, "density drift {drift:.3e}");
        // A moves only by a constant
        let da = r.a_next.lin_comb(1.0, &eq.a_inf, -1.0).unwrap();
        let spread = da.max() - da.min();
        assert!(spread <= 1e-9, "potential spread {spread:.3e}");
    }

    #[test]
    fn step_conserves_mass_to_solver_residual() {
        let out = run(&quick_cfg()).unwrap();
        assert_eq!(out.status, RunStatus::Clean);
        let mass0 = out.series.rows[0].mass;
        for row in &out.series.rows {
            assert!(
                (row.mass - mass0).abs() <= 1e-10,
                "drift {:.3e}",
                (row.mass - mass0).abs()
            );
        }
    }

    #[test]
    fn per_step_free_energy_inequality_holds() {
        let out = run(&quick_cfg()).unwrap();
        let rows = &out.series.rows;
        for pair in rows.windows(2) {
            assert!(
                pair[1].free_energy <= pair[0].free_energy + out.eps_solver,
                "free energy rose: {} -> {}",
                pair[0].free_energy,
                pair[1].free_energy
            );
            assert!(pair[1].sigma <= pair[0].sigma + out.eps_solver);
            assert!(pair[1].t > pair[0].t);
            assert!(pair[1].min_density > 0.0);
        }
    }

    #[test]
    fn stationary_run_stays_flat() {
        let mut cfg = quick_cfg();
        cfg.init = InitialSpec::EquilibriumPerturbation {
            amplitude: 0.0,
            mode: 1,
        };
        cfg.t_final = 0.02;
        let out = run(&cfg).unwrap();
        assert_eq!(out.status, RunStatus::Clean);
        for row in &out.series.rows {
            assert!(
                row.free_energy_gap.abs() <= 1e-9,
                "gap {:.3e}",
                row.free_energy_gap
            );
            assert!(row.sigma.abs() <= 1e-9);
            assert!(row.dissipation.abs() <= 1e-9);
        }
    }

    #[test]
    fn decay_ratio_approaches_one_as_dt_shrinks() {
        // (F_k − F_{k+1})/(Δt·dissipation) → 1; first step from a fixed
        // perturbed state, decreasing Δt.
        let grid = Grid::new(32).unwrap();
        let v0 = Field::zeros(grid);
        let eq = solve_equilibrium(
            &v0,
            1.0,
            EquilibriumOptions {
                poisson_on: false,
                ..Default::default()
            },
        )
        .unwrap();
        let bump = Field::from_fn(grid, |x| {
            1.0 + 0.03 * (2.0 * std::f64::consts::PI * x).cos()
        });
        let mut vals = Vec::new();
        for i in 0..32 {
            vals.push(eq.n_inf[i] * bump[i]);
        }
        let n0 = Field::new(grid, vals).unwrap();
        let n0 = n0.scale(1.0 / n0.integrate());
        let inv = chemical_potential(
            &n0,
            &v0,
            &default_initial_potential(&n0, &v0).unwrap(),
            1e-11,
            60,
        )
        .unwrap();
        let zero = Field::zeros(grid);
        let f0 = free_energy(&inv.state, &zero).unwrap().f_dual;
        let opts = StepOptions {
            v0: &v0,
            poisson_on: false,
            newton_tol: 1e-12,
            newton_max_iter: 60,
            dt_halving_limit: 2,
        };
        let mut gaps = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4, 1e-5] {
            let r = step(&n0, dt, &opts, Some(&inv.a)).unwrap();
            let f1 = free_energy(&r.state, &r.v_next).unwrap().f_dual;
            let consumed = dissipation(&n0, &r.a_next, &r.v_next).unwrap();
            let ratio = (f0 - f1) / (r.dt_used * consumed);
            gaps.push((ratio - 1.0).abs());
        }
        for pair in gaps.windows(2) {
            assert!(pair[1] < pair[0], "ratio gaps not decreasing: {gaps:?}");
        }
        assert!(gaps[3] < 1e-2, "final ratio gap {:.3e}", gaps[3]);
    }

    #[test]
    fn run_fits_a_positive_rate_on_the_default_experiment_shape() {
        let mut cfg = quick_cfg();
        cfg.t_final = 0.1;
        let out = run(&cfg).unwrap();
        let fit = out.fit.expect("enough resolvable rows");
        assert!(fit.mu > 0.0);
        assert!(fit.r_squared >= 0.99, "r2 = {}", fit.r_squared);

        // the per-row gap/dissipation quotient stays bounded on the
        // resolvable segment and its reciprocal tracks the fitted rate
        let floor = 1e-10 * (1.0 + out.f_equilibrium.abs());
        let mut sup_ratio = 0.0f64;
        for row in out.series.rows.iter().skip(1) {
            if row.free_energy_gap > floor && row.dissipation > 1e-14 {
                let ratio = row.free_energy_gap / row.dissipation;
                assert!(ratio.is_finite() && ratio > 0.0);
                sup_ratio = sup_ratio.max(ratio);
            }
        }
        assert!(sup_ratio > 0.0);
        let c = fit.mu * sup_ratio;
        println!("log-Sobolev trajectory constant: mu*sup(gap/dissipation) = {c:.4}");
        assert!(
            fit.mu >= 0.1 * (1.0 / sup_ratio),
            "mu {} vs 1/sup_ratio {}",
            fit.mu,
            1.0 / sup_ratio
        );
    }

    #[test]
    fn unreachable_tolerance_aborts_with_partial_data() {
        let mut cfg = quick_cfg();
        cfg.t_final = 0.01;
        cfg.solver.newton_tol = 1e-16; // below the eigensolve noise floor
        cfg.solver.dt_halving_limit = 1;
        let out = run(&cfg).unwrap();
        match &out.status {
            RunStatus::SolverFailure { step, message } => {
                assert_eq!(*step, 1);
                assert!(message.contains("implicit step"), "{message}");
            }
            other => panic!("expected solver failure, got {other:?}"),
        }
        // partial data retained for post-mortem output
        assert_eq!(out.series.rows.len(), 1);
        assert!(!out.snapshots.is_empty());
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let grid = Grid::new(8).unwrap();
        let v0 = Field::zeros(grid);
        let opts = StepOptions {
            v0: &v0,
            poisson_on: false,
            newton_tol: 1e-10,
            newton_max_iter: 10,
            dt_halving_limit: 2,
        };
        let n = Field::constant(grid, 1.0);
        assert!(step(&n, 0.0, &opts, None).is_err());
        assert!(step(&n, -1e-3, &opts, None).is_err());
        let mut bad = Field::constant(grid, 1.0);
        bad.values_mut()[2] = -0.5;
        assert!(step(&bad, 1e-3, &opts, None).is_err());
    }

    #[test]
    fn rejects_nonpositive_initial_file_density() {
        let grid = Grid::new(8).unwrap();
        let eq = solve_equilibrium(
            &Field::zeros(grid),
            1.0,
            EquilibriumOptions {
                poisson_on: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mut cfg = quick_cfg();
        cfg.n_points = 8;
        cfg.init = InitialSpec::EquilibriumPerturbation {
            amplitude: 0.0,
            mode: 1,
        };
        let ok = initial_density(&cfg, grid, &eq).unwrap();
        assert!((ok.integrate() - 1.0).abs() < 1e-12);
    }
}
