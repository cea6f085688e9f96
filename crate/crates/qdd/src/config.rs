//! Run configuration: a flat, sectioned key = value text format.
//!
//! Sections are `[grid]`, `[time]`, `[model]`, `[solver]`, `[output]`.
//! Every key has a default, so an empty file is the default experiment
//! (N = 64, Δt = 1e−3, T = 1, Poisson off, V₀ = 0, 5% cosine perturbation
//! of the equilibrium). Unknown sections or keys, duplicate keys, type
//! mismatches and constraint violations are hard errors carrying the
//! offending line number.
//!
//! ```text
//! [grid]
//! n_points = 64          # even, >= 8
//!
//! [time]
//! dt = 1e-3
//! t_final = 1.0
//!
//! [model]
//! poisson = off          # on | off
//! v0 = zero              # zero | constant | cosine
//! v0_value = 0.0         # for v0 = constant
//! v0_amplitude = 0.0     # for v0 = cosine
//! v0_mode = 1
//! mass = 1.0
//! init = equilibrium_perturbation   # equilibrium_perturbation | file
//! amplitude = 0.05
//! init_mode = 1
//! init_path =            # density CSV for init = file
//!
//! [solver]
//! newton_tol = 1e-12     # absolute, on the implicit-step residual
//! newton_max_iter = 50
//! invert_tol = 1e-10     # relative, on the closure inversion
//! invert_max_iter = 60
//! gummel_tol = 1e-10
//! gummel_max_iter = 500
//! gummel_mix = 0.5
//! dt_halving_limit = 8
//!
//! [output]
//! snapshot_every = 0     # 0: initial and final only
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config: {message}")]
    Invalid { message: String },
}

/// External potential V₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    Cosine { amplitude: f64, mode: usize },
}

impl PotentialSpec {
    pub fn build(&self, grid: crate::grid::Grid) -> crate::grid::Field {
        use crate::grid::Field;
        match *self {
            PotentialSpec::Zero => Field::zeros(grid),
            PotentialSpec::Constant { value } => Field::constant(grid, value),
            PotentialSpec::Cosine { amplitude, mode } => Field::from_fn(grid, |x| {
                amplitude * (2.0 * std::f64::consts::PI * mode as f64 * x).cos()
            }),
        }
    }
}

/// Initial density specification; the result is always renormalized to
/// the target mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// n₀ = n∞·(1 + amplitude·cos(2π·mode·x)).
    EquilibriumPerturbation { amplitude: f64, mode: usize },
    /// Tabulated density read from a CSV with header `x,n`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Absolute tolerance on ‖R‖_∞ for the implicit step.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative tolerance on ‖n[A] − n_target‖_∞ for closure inversions.
    pub invert_tol: f64,
    pub invert_max_iter: usize,
    pub gummel_tol: f64,
    pub gummel_max_iter: usize,
    pub gummel_mix: f64,
    pub dt_halving_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            invert_tol: 1e-10,
            invert_max_iter: 60,
            gummel_tol: 1e-10,
            gummel_max_iter: 500,
            gummel_mix: 0.5,
            dt_halving_limit: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_points: usize,
    pub dt: f64,
    pub t_final: f64,
    pub poisson_on: bool,
    pub v0: PotentialSpec,
    pub mass: f64,
    pub init: InitialSpec,
    pub solver: SolverConfig,
    /// 0 means snapshots at the initial and final step only.
    pub snapshot_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_points: 64,
            dt: 1e-3,
            t_final: 1.0,
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
}

/// Raw v0/init selectors before assembly, with the line each value came from.
#[derive(Default)]
struct Raw {
    values: std::collections::BTreeMap<&'static str, (String, usize)>,
}

impl Raw {
    fn set(&mut self, key: &'static str, value: &str, line: usize) -> Result<(), ConfigError> {
        if self.values.contains_key(key) {
            return Err(ConfigError::Line {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        self.values.insert(key, (value.to_string(), line));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.values.remove(key)
    }
}

const KEYS: &[(&str, &str)] = &[
    ("grid", "n_points"),
    ("time", "dt"),
    ("time", "t_final"),
    ("model", "poisson"),
    ("model", "v0"),
    ("model", "v0_value"),
    ("model", "v0_amplitude"),
    ("model", "v0_mode"),
    ("model", "mass"),
    ("model", "init"),
    ("model", "amplitude"),
    ("model", "init_mode"),
    ("model", "init_path"),
    ("solver", "newton_tol"),
    ("solver", "newton_max_iter"),
    ("solver", "invert_tol"),
    ("solver", "invert_max_iter"),
    ("solver", "gummel_tol"),
    ("solver", "gummel_max_iter"),
    ("solver", "gummel_mix"),
    ("solver", "dt_halving_limit"),
    ("output", "snapshot_every"),
];

const SECTIONS: &[&str] = &["grid", "time", "model", "solver", "output"];

/// Parse a config file.
pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Parse config text; every key defaults when absent.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut raw = Raw::default();
    let mut section: Option<String> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::Line {
                    line: line_no,
                    message: format!(
                        "unknown section `[{name}]` (expected one of {})",
                        SECTIONS
                            .iter()
                            .map(|s| format!("[{s}]"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Line {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let Some(section) = section.as_deref() else {
            return Err(ConfigError::Line {
                line: line_no,
                message: format!("key `{key}` appears before any [section]"),
            });
        };
        let Some((_, canonical)) = KEYS.iter().find(|(s, k)| *s == section && *k == key) else {
            return Err(ConfigError::Line {
                line: line_no,
                message: format!("unknown key `{key}` in section [{section}]"),
            });
        };
        raw.set(canonical, value, line_no)?;
    }

    build(raw)
}

type Lines = std::collections::BTreeMap<&'static str, usize>;

fn build(mut raw: Raw) -> Result<SimConfig, ConfigError> {
    let defaults = SimConfig::default();
    let solver_defaults = SolverConfig::default();
    let mut lines = Lines::new();
    let ln = &mut lines;

    let n_points = take_parse(&mut raw, ln, "n_points", defaults.n_points)?;
    let dt = take_parse(&mut raw, ln, "dt", defaults.dt)?;
    let t_final = take_parse(&mut raw, ln, "t_final", defaults.t_final)?;
    let poisson_on = take_switch(&mut raw, ln, "poisson", defaults.poisson_on)?;
    let mass = take_parse(&mut raw, ln, "mass", defaults.mass)?;

    let (v0_kind, v0_line) = raw
        .take("v0")
        .map(|(v, l)| (v, Some(l)))
        .unwrap_or_else(|| ("zero".into(), None));
    let v0_value = take_parse(&mut raw, ln, "v0_value", 0.0)?;
    let v0_amplitude = take_parse(&mut raw, ln, "v0_amplitude", 0.0)?;
    let v0_mode = take_parse(&mut raw, ln, "v0_mode", 1usize)?;
    let v0 = match v0_kind.as_str() {
        "zero" => PotentialSpec::Zero,
        "constant" => PotentialSpec::Constant { value: v0_value },
        "cosine" => PotentialSpec::Cosine {
            amplitude: v0_amplitude,
            mode: v0_mode,
        },
        other => {
            return Err(at(
                v0_line,
                format!("v0 must be zero | constant | cosine (got `{other}`)"),
            ))
        }
    };

    let (init_kind, init_line) = raw
        .take("init")
        .map(|(v, l)| (v, Some(l)))
        .unwrap_or_else(|| ("equilibrium_perturbation".into(), None));
    let amplitude = take_parse(&mut raw, ln, "amplitude", 0.05)?;
    let init_mode = take_parse(&mut raw, ln, "init_mode", 1usize)?;
    let init_path = raw.take("init_path");
    let init = match init_kind.as_str() {
        "equilibrium_perturbation" => InitialSpec::EquilibriumPerturbation {
            amplitude,
            mode: init_mode,
        },
        "file" => {
            let Some((p, _)) = init_path else {
                return Err(at(init_line, "init = file requires init_path".to_string()));
            };
            InitialSpec::File {
                path: PathBuf::from(p),
            }
        }
        other => {
            return Err(at(
                init_line,
                format!("init must be equilibrium_perturbation | file (got `{other}`)"),
            ))
        }
    };

    let solver = SolverConfig {
        newton_tol: take_parse(&mut raw, ln, "newton_tol", solver_defaults.newton_tol)?,
        newton_max_iter: take_parse(
            &mut raw,
            ln,
            "newton_max_iter",
            solver_defaults.newton_max_iter,
        )?,
        invert_tol: take_parse(&mut raw, ln, "invert_tol", solver_defaults.invert_tol)?,
        invert_max_iter: take_parse(
            &mut raw,
            ln,
            "invert_max_iter",
            solver_defaults.invert_max_iter,
        )?,
        gummel_tol: take_parse(&mut raw, ln, "gummel_tol", solver_defaults.gummel_tol)?,
        gummel_max_iter: take_parse(
            &mut raw,
            ln,
            "gummel_max_iter",
            solver_defaults.gummel_max_iter,
        )?,
        gummel_mix: take_parse(&mut raw, ln, "gummel_mix", solver_defaults.gummel_mix)?,
        dt_halving_limit: take_parse(
            &mut raw,
            ln,
            "dt_halving_limit",
            solver_defaults.dt_halving_limit,
        )?,
    };
    let snapshot_every = take_parse(&mut raw, ln, "snapshot_every", defaults.snapshot_every)?;

    let cfg = SimConfig {
        n_points,
        dt,
        t_final,
        poisson_on,
        v0,
        mass,
        init,
        solver,
        snapshot_every,
    };
    validate(&cfg, &lines)?;
    Ok(cfg)
}

fn at(line: Option<usize>, message: String) -> ConfigError {
    match line {
        Some(line) => ConfigError::Line { line, message },
        None => ConfigError::Invalid { message },
    }
}

fn take_parse<T>(
    raw: &mut Raw,
    lines: &mut Lines,
    key: &'static str,
    default: T,
) -> Result<T, ConfigError>
where
    T: std::str::FromStr + Copy,
    T::Err: fmt::Display,
{
    match raw.take(key) {
        None => Ok(default),
        Some((value, line)) => {
            let parsed = value.parse::<T>().map_err(|e| ConfigError::Line {
                line,
                message: format!("cannot parse `{key} = {value}`: {e}"),
            })?;
            lines.insert(key, line);
            Ok(parsed)
        }
    }
}

fn take_switch(
    raw: &mut Raw,
    lines: &mut Lines,
    key: &'static str,
    default: bool,
) -> Result<bool, ConfigError> {
    match raw.take(key) {
        None => Ok(default),
        Some((value, line)) => {
            lines.insert(key, line);
            match value.as_str() {
                "on" => Ok(true),
                "off" => Ok(false),
                other => Err(ConfigError::Line {
                    line,
                    message: format!("`{key}` must be on | off (got `{other}`)"),
                }),
            }
        }
    }
}

fn validate(cfg: &SimConfig, lines: &Lines) -> Result<(), ConfigError> {
    let check = |ok: bool, key: &'static str, message: String| -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(at(lines.get(key).copied(), message))
        }
    };
    check(
        cfg.n_points >= 8 && cfg.n_points.is_multiple_of(2),
        "n_points",
        format!("n_points must be even, >= 8 (got {})", cfg.n_points),
    )?;
    check(
        cfg.dt > 0.0,
        "dt",
        format!("dt must be positive (got {})", cfg.dt),
    )?;
    check(
        cfg.t_final >= cfg.dt,
        "t_final",
        format!(
            "t_final must be at least dt (got {} < {})",
            cfg.t_final, cfg.dt
        ),
    )?;
    check(
        cfg.mass > 0.0,
        "mass",
        format!("mass must be positive (got {})", cfg.mass),
    )?;
    if let InitialSpec::EquilibriumPerturbation { amplitude, mode } = cfg.init {
        check(
            amplitude.abs() < 1.0,
            "amplitude",
            format!("perturbation amplitude must satisfy |a| < 1 (got {amplitude})"),
        )?;
        check(
            mode >= 1,
            "init_mode",
            format!("init_mode must be >= 1 (got {mode})"),
        )?;
    }
    if let PotentialSpec::Cosine { mode, .. } = cfg.v0 {
        check(
            mode >= 1,
            "v0_mode",
            format!("v0_mode must be >= 1 (got {mode})"),
        )?;
    }
    let s = &cfg.solver;
    check(
        s.newton_tol > 0.0,
        "newton_tol",
        "newton_tol must be positive".into(),
    )?;
    check(
        s.invert_tol > 0.0,
        "invert_tol",
        "invert_tol must be positive".into(),
    )?;
    check(
        s.gummel_tol > 0.0,
        "gummel_tol",
        "gummel_tol must be positive".into(),
    )?;
    check(
        s.gummel_mix > 0.0 && s.gummel_mix <= 1.0,
        "gummel_mix",
        format!("gummel_mix must lie in (0,1] (got {})", s.gummel_mix),
    )?;
    check(
        s.newton_max_iter >= 1,
        "newton_max_iter",
        "newton_max_iter must be >= 1".into(),
    )?;
    check(
        s.invert_max_iter >= 1,
        "invert_max_iter",
        "invert_max_iter must be >= 1".into(),
    )?;
    check(
        s.gummel_max_iter >= 1,
        "gummel_max_iter",
        "gummel_max_iter must be >= 1".into(),
    )?;
    Ok(())
}
