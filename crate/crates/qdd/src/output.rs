//! Bit-stable run outputs: series.csv, snapshots, summary.json and an
//! optional SVG decay plot drawn by a minimal internal plotter.
//!
//! Floats are written as decimal text with 17 significant digits, so a
//! rerun of an identical config reproduces series.csv byte for byte.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::SimConfig;
use crate::diagnostics::ExponentialFit;
use crate::error::QddError;
use crate::evolution::{RunOutput, RunStatus, Snapshot, TimeSeries};
use crate::grid::{Field, Grid};

pub const SERIES_HEADER: &str =
    "t,mass,free_energy,free_energy_gap,sigma,rel_entropy,dissipation,min_density,newton_iters";

pub const SNAPSHOT_HEADER: &str = "x,n,A,V";

/// 17 significant digits, scientific; stable across runs.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Equilibrium scalars echoed into the summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquilibriumSummary {
    pub fermi_level: f64,
    pub free_energy: f64,
    pub min_density: f64,
    pub gummel_iterations: usize,
}

/// Serializable mirror of a finished (or aborted) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: SimConfig,
    pub equilibrium: EquilibriumSummary,
    pub fit: Option<ExponentialFit>,
    pub sigma_initial: f64,
    pub f_initial: f64,
    pub eps_solver: f64,
    pub min_density_seen: f64,
    pub steps_completed: usize,
    pub status: RunStatus,
    /// Empty on a clean run.
    pub violations: Vec<String>,
    pub wall_time_seconds: f64,
}

impl RunSummary {
    pub fn from_run(cfg: &SimConfig, out: &RunOutput, wall_time_seconds: f64) -> Self {
        let violations = match &out.status {
            RunStatus::Clean => Vec::new(),
            RunStatus::InvariantViolation { label, .. } => vec![label.clone()],
            RunStatus::SolverFailure { message, .. } => vec![message.clone()],
        };
        RunSummary {
            config: cfg.clone(),
            equilibrium: EquilibriumSummary {
                fermi_level: out.equilibrium.fermi_level,
                free_energy: out.f_equilibrium,
                min_density: out.equilibrium.min_density,
                gummel_iterations: out.equilibrium.iterations,
            },
            fit: out.fit,
            sigma_initial: out.sigma_initial,
            f_initial: out.f_initial,
            eps_solver: out.eps_solver,
            min_density_seen: out.min_density_seen,
            steps_completed: out.series.rows.len().saturating_sub(1),
            status: out.status.clone(),
            violations,
            wall_time_seconds,
        }
    }
}

fn create(path: &Path) -> Result<std::fs::File, QddError> {
    std::fs::File::create(path).map_err(|source| QddError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> QddError + '_ {
    move |source| QddError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<(), QddError> {
    let mut f = std::io::BufWriter::new(create(path)?);
    let e = io_err(path);
    writeln!(f, "{SERIES_HEADER}").map_err(&e)?;
    for r in &series.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            fmt_float(r.t),
            fmt_float(r.mass),
            fmt_float(r.free_energy),
            fmt_float(r.free_energy_gap),
            fmt_float(r.sigma),
            fmt_float(r.rel_entropy),
            fmt_float(r.dissipation),
            fmt_float(r.min_density),
            r.newton_iters
        )
        .map_err(&e)?;
    }
    Ok(())
}

pub fn write_snapshot_csv(path: &Path, snap: &Snapshot) -> Result<(), QddError> {
    let mut f = std::io::BufWriter::new(create(path)?);
    let e = io_err(path);
    writeln!(f, "{SNAPSHOT_HEADER}").map_err(&e)?;
    for i in 0..snap.x.len() {
        writeln!(
            f,
            "{},{},{},{}",
            fmt_float(snap.x[i]),
            fmt_float(snap.n[i]),
            fmt_float(snap.a[i]),
            fmt_float(snap.v[i])
        )
        .map_err(&e)?;
    }
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<(), QddError> {
    let mut f = create(path)?;
    let text = serde_json::to_string_pretty(summary)
        .map_err(|err| QddError::InvalidInput(format!("summary serialization: {err}")))?;
    writeln!(f, "{text}").map_err(io_err(path))
}

/// Write every run artifact into `dir`: series.csv, snapshot_<k>.csv per
/// snapshot, summary.json and optionally decay.svg.
pub fn write_outputs(
    dir: &Path,
    out: &RunOutput,
    summary: &RunSummary,
    svg: bool,
) -> Result<(), QddError> {
    std::fs::create_dir_all(dir).map_err(|source| QddError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_series_csv(&dir.join("series.csv"), &out.series)?;
    for snap in &out.snapshots {
        write_snapshot_csv(&dir.join(format!("snapshot_{}.csv", snap.step_index)), snap)?;
    }
    write_summary_json(&dir.join("summary.json"), summary)?;
    if svg {
        write_decay_svg(&dir.join("decay.svg"), &out.series, out.fit.as_ref())?;
    }
    Ok(())
}

/// Tabulated density: CSV with header `x,n`, one row per grid node.
pub fn read_density_csv(path: &Path, grid: Grid) -> Result<Field, QddError> {
    let text = std::fs::read_to_string(path).map_err(|source| QddError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "x,n" => {}
        other => {
            return Err(QddError::InvalidInput(format!(
                "density CSV must start with header `x,n` (got {:?})",
                other.unwrap_or("")
            )))
        }
    }
    let mut values = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(_x), Some(n), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(QddError::InvalidInput(format!(
                "density CSV row {} must be `x,n`",
                idx + 2
            )));
        };
        let v: f64 = n
            .trim()
            .parse()
            .map_err(|e| QddError::InvalidInput(format!("density CSV row {}: {e}", idx + 2)))?;
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(QddError::InvalidInput(format!(
            "density CSV has {} rows but the grid has {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Field::new(grid, values)
}

/// Log-linear plot of the free-energy gap with the fitted rate line;
/// plain polylines and axes, no external plotting dependency.
pub fn write_decay_svg(
    path: &Path,
    series: &TimeSeries,
    fit: Option<&ExponentialFit>,
) -> Result<(), QddError> {
    let pts: Vec<(f64, f64)> = series
        .rows
        .iter()
        .filter(|r| r.free_energy_gap > 0.0)
        .map(|r| (r.t, r.free_energy_gap.log10()))
        .collect();

    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 20.0, 50.0);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    if pts.len() >= 2 {
        let (t0, t1) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.0), b.max(p.0))
            });
        let (y0, y1) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.1), b.max(p.1))
            });
        let (t0, t1) = if t1 > t0 { (t0, t1) } else { (t0, t0 + 1.0) };
        let (y0, y1) = if y1 > y0 {
            (y0, y1)
        } else {
            (y0 - 1.0, y0 + 1.0)
        };
        let sx = |t: f64| ml + (t - t0) / (t1 - t0) * (w - ml - mr);
        let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

        let line: String = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect::<Vec<_>>()
            .join(" ");
        svg.push_str(&format!(
            "<polyline points=\"{line}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n"
        ));

        if let Some(f) = fit {
            // ln v = ln_intercept − μt, drawn across the data window
            let ya = (f.ln_intercept - f.mu * t0) / std::f64::consts::LN_10;
            let yb = (f.ln_intercept - f.mu * t1) / std::f64::consts::LN_10;
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-width=\"1.0\" stroke-dasharray=\"6,4\"/>\n",
                sx(t0), sy(ya), sx(t1), sy(yb)
            ));
            svg.push_str(&format!(
                "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\">mu = {:.4}, R^2 = {:.4}</text>\n",
                ml + 10.0, mt + 15.0, f.mu, f.r_squared
            ));
        }

        // axes
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - mb,
            w - mr,
            h - mb
        ));
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - mb
        ));
        for (t, label_y) in [(t0, h - mb + 20.0), (t1, h - mb + 20.0)] {
            svg.push_str(&format!(
                "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{t:.3}</text>\n",
                sx(t), label_y
            ));
        }
        for y in [y0, y1] {
            svg.push_str(&format!(
                "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"end\">1e{y:.1}</text>\n",
                ml - 6.0,
                sy(y) + 4.0
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">t</text>\n",
            (ml + w - mr) / 2.0,
            h - 10.0
        ));
        svg.push_str(&format!(
            "<text x=\"15\" y=\"{:.0}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 15 {:.0})\" text-anchor=\"middle\">free energy gap</text>\n",
            (mt + h - mb) / 2.0,
            (mt + h - mb) / 2.0
        ));
    } else {
        svg.push_str(
            "<text x=\"50%\" y=\"50%\" text-anchor=\"middle\">no resolvable decay data</text>\n",
        );
    }
    svg.push_str("</svg>\n");

    let mut f = create(path)?;
    f.write_all(svg.as_bytes()).map_err(io_err(path))
}
