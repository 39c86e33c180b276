//! Command-line driver: `wfrflow <experiment> [--config file.toml] [--key value]...`
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver infeasibility,
//! 4 non-convergence beyond tolerance. `WFRFLOW_THREADS` caps the worker
//! count.

use std::path::PathBuf;

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod pgm;

use config::{Experiment, RunConfig};
use wfr_core::WfrError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Infeasible(String),
    NonConvergence(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Infeasible(m) => write!(f, "solver infeasibility: {m}"),
            CliError::NonConvergence(m) => write!(f, "non-convergence: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<WfrError> for CliError {
    fn from(e: WfrError) -> Self {
        match e {
            WfrError::InfeasibleMarginal(m) => CliError::Infeasible(m),
            WfrError::InvalidArgument(m) | WfrError::Domain(m) | WfrError::Parse(m) => {
                CliError::Config(m)
            }
            WfrError::Io(e) => CliError::Runtime(e.to_string()),
        }
    }
}

const USAGE: &str = "\
usage: wfrflow <experiment> [--config FILE] [--KEY VALUE]...

experiments:
  flow1d       gradient flow on [0,1]
  flow2d       gradient flow on [0,1]^2 (obstacles supported)
  split-flow   projection/growth splitting scheme
  sphere-test  convergence against the exact expanding ball
  eps-study    one-step discretization / regularization sweep
  distance     transport-growth distance between two densities
  geodesic     geodesic interpolation frames between two densities

Every configuration field can be overridden: --tau 0.005, --sweep.ref_n 512,
--initial.0.density 0.5, ... Flags: --paper-scale restores the full-size
experiment settings. WFRFLOW_THREADS caps the worker count.
";

pub struct ParsedArgs {
    pub experiment: Experiment,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

pub fn parse_args(args: &[String]) -> Result<ParsedArgs, CliError> {
    let mut it = args.iter().peekable();
    let first = it.next().ok_or_else(|| CliError::Config(format!("missing experiment\n{USAGE}")))?;
    if first == "--help" || first == "-h" {
        return Err(CliError::Config(USAGE.to_string()));
    }
    let experiment = Experiment::parse(first)
        .ok_or_else(|| CliError::Config(format!("unknown experiment {first:?}\n{USAGE}")))?;
    let mut config_path = None;
    let mut overrides = Vec::new();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("expected --key, got {tok:?}")))?;
        if key == "help" {
            return Err(CliError::Config(USAGE.to_string()));
        }
        let key = key.replace('-', "_");
        if key == "config" {
            let v = it.next().ok_or_else(|| CliError::Config("--config needs a path".into()))?;
            config_path = Some(PathBuf::from(v));
            continue;
        }
        // bare boolean flags are allowed for paper-scale and trace
        let bare_bool = matches!(key.as_str(), "paper_scale" | "trace")
            && it.peek().map_or(true, |next| next.starts_with("--"));
        let value = if bare_bool {
            "true".to_string()
        } else {
            it.next()
                .ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?
                .clone()
        };
        overrides.push((key, value));
    }
    Ok(ParsedArgs { experiment, config_path, overrides })
}

fn init_threads(cfg: &RunConfig) {
    let cap = std::env::var("WFRFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .or(if cfg.threads > 0 { Some(cfg.threads) } else { None });
    if let Some(n) = cap {
        // ignore the error if a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(args: &[String]) -> i32 {
    let parsed = match parse_args(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let cfg = match RunConfig::load(parsed.experiment, parsed.config_path.as_deref(), &parsed.overrides)
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    init_threads(&cfg);
    match experiments::run_experiment(parsed.experiment, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
