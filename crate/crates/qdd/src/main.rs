//! Command-line driver: `equilibrium`, `invert`, `evolve`, `check`.
//!
//! Exit codes: 0 clean, 2 invariant violation, 1 solver or input failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qdd::checks::run_invariant_suite;
use qdd::closure::{chemical_potential, default_initial_potential};
use qdd::config::SimConfig;
use qdd::diagnostics::free_energy;
use qdd::equilibrium::{solve_equilibrium, EquilibriumOptions};
use qdd::evolution::{RunStatus, Snapshot};
use qdd::grid::{Field, Grid};
use qdd::output::{read_density_csv, write_outputs, write_snapshot_csv, RunSummary};
use qdd::poisson::solve_poisson;

#[derive(Parser)]
#[command(
    name = "qdd",
    about = "1D periodic quantum drift-diffusion laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file; defaults to the built-in default experiment when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Also emit SVG plots.
    #[arg(long, global = true)]
    svg: bool,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the self-consistent equilibrium and write its snapshot.
    Equilibrium,
    /// Read a density CSV and emit the chemical potential A[n].
    Invert {
        /// Density CSV (header `x,n`); defaults to the config's init_path.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Run the full evolution and write series, snapshots and summary.
    Evolve,
    /// Run the invariant suite on synthetic ensembles; emit check.json.
    Check,
}

const EXIT_CLEAN: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2 on usage errors; 2 is reserved for
            // invariant violations here
            let _ = e.print();
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, String> {
    let cfg = match &cli.config {
        Some(path) => qdd::config::load_config(path).map_err(|e| e.to_string())?,
        None => SimConfig::default(),
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| format!("cannot create {}: {e}", cli.out.display()))?;

    match &cli.command {
        Command::Equilibrium => cmd_equilibrium(cli, &cfg),
        Command::Invert { density } => cmd_invert(cli, &cfg, density.as_deref()),
        Command::Evolve => cmd_evolve(cli, &cfg),
        Command::Check => cmd_check(cli),
    }
}

fn cmd_equilibrium(cli: &Cli, cfg: &SimConfig) -> Result<u8, String> {
    let grid = Grid::new(cfg.n_points).map_err(|e| e.to_string())?;
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
    )
    .map_err(|e| e.to_string())?;
    let f_inf = free_energy(&eq.state, &eq.v_inf).map_err(|e| e.to_string())?;

    let snap = Snapshot {
        step_index: 0,
        t: 0.0,
        x: grid.nodes(),
        n: eq.n_inf.values().to_vec(),
        a: eq.a_inf.values().to_vec(),
        v: eq.v_inf.values().to_vec(),
    };
    write_snapshot_csv(&cli.out.join("equilibrium.csv"), &snap).map_err(|e| e.to_string())?;
    let scalars = serde_json::json!({
        "fermi_level": eq.fermi_level,
        "free_energy": f_inf.f_dual,
        "free_energy_gap_forms": f_inf.gap,
        "min_density": eq.min_density,
        "mass": eq.n_inf.integrate(),
        "gummel_iterations": eq.iterations,
    });
    std::fs::write(
        cli.out.join("equilibrium.json"),
        format!("{}\n", serde_json::to_string_pretty(&scalars).unwrap()),
    )
    .map_err(|e| e.to_string())?;

    if !cli.quiet {
        println!(
            "equilibrium: fermi_level = {:.12e}, F = {:.12e}, min density = {:.6e} ({} gummel iterations)",
            eq.fermi_level, f_inf.f_dual, eq.min_density, eq.iterations
        );
        println!("wrote {}", cli.out.join("equilibrium.csv").display());
    }
    Ok(EXIT_CLEAN)
}

fn cmd_invert(cli: &Cli, cfg: &SimConfig, density: Option<&std::path::Path>) -> Result<u8, String> {
    let grid = Grid::new(cfg.n_points).map_err(|e| e.to_string())?;
    let v0 = cfg.v0.build(grid);
    let path = match density {
        Some(p) => p.to_path_buf(),
        None => match &cfg.init {
            qdd::config::InitialSpec::File { path } => path.clone(),
            _ => {
                return Err("invert needs --density <csv> or a config with init = file".to_string())
            }
        },
    };
    let n_target = read_density_csv(&path, grid).map_err(|e| e.to_string())?;
    let a0 = default_initial_potential(&n_target, &v0).map_err(|e| e.to_string())?;
    let result = chemical_potential(
        &n_target,
        &v0,
        &a0,
        cfg.solver.invert_tol,
        cfg.solver.invert_max_iter,
    )
    .map_err(|e| e.to_string())?;

    let v = if cfg.poisson_on {
        solve_poisson(&n_target)
    } else {
        Field::zeros(grid)
    };
    let snap = Snapshot {
        step_index: 0,
        t: 0.0,
        x: grid.nodes(),
        n: n_target.values().to_vec(),
        a: result.a.values().to_vec(),
        v: v.values().to_vec(),
    };
    write_snapshot_csv(&cli.out.join("potential.csv"), &snap).map_err(|e| e.to_string())?;
    if !cli.quiet {
        println!(
            "invert: converged in {} newton iterations, relative residual {:.3e}",
            result.iterations, result.residual
        );
        println!("wrote {}", cli.out.join("potential.csv").display());
    }
    Ok(EXIT_CLEAN)
}

fn cmd_evolve(cli: &Cli, cfg: &SimConfig) -> Result<u8, String> {
    let started = std::time::Instant::now();
    let out = qdd::evolution::run(cfg).map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_secs_f64();
    let summary = RunSummary::from_run(cfg, &out, wall);
    write_outputs(&cli.out, &out, &summary, cli.svg).map_err(|e| e.to_string())?;

    if !cli.quiet {
        println!(
            "evolve: {} steps, mass drift {:.3e}, final free-energy gap {:.3e}",
            summary.steps_completed,
            out.series
                .rows
                .last()
                .map(|r| (r.mass - out.series.rows[0].mass).abs())
                .unwrap_or(0.0),
            out.series
                .rows
                .last()
                .map(|r| r.free_energy_gap)
                .unwrap_or(0.0),
        );
        match &out.fit {
            Some(f) => println!("evolve: fitted mu = {:.4} (R^2 = {:.6})", f.mu, f.r_squared),
            None => println!("evolve: decay tail too short for a rate fit"),
        }
        println!("wrote {}", cli.out.join("series.csv").display());
    }
    match &out.status {
        RunStatus::Clean => Ok(EXIT_CLEAN),
        RunStatus::InvariantViolation { label, .. } => {
            eprintln!("invariant violation: {label}");
            Ok(EXIT_VIOLATION)
        }
        RunStatus::SolverFailure { message, .. } => {
            eprintln!("solver failure: {message}");
            Ok(EXIT_FAILURE)
        }
    }
}

fn cmd_check(cli: &Cli) -> Result<u8, String> {
    let report = run_invariant_suite().map_err(|e| e.to_string())?;
    let path = cli.out.join("check.json");
    std::fs::write(
        &path,
        format!("{}\n", serde_json::to_string_pretty(&report).unwrap()),
    )
    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    if !cli.quiet {
        for c in &report.checks {
            println!(
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        println!("wrote {}", path.display());
    }
    Ok(if report.all_passed {
        EXIT_CLEAN
    } else {
        EXIT_VIOLATION
    })
}
