//! Run configuration: per-experiment defaults, a single TOML file on top,
//! then `--key value` command-line overrides, merged in that order.

use serde::{Deserialize, Serialize};
use std::path::Path;

use wfr_core::FlowParams;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Flow1d,
    Flow2d,
    SphereTest,
    EpsStudy,
    SplitFlow,
    Distance,
    Geodesic,
}

impl Experiment {
    pub fn parse(name: &str) -> Option<Experiment> {
        Some(match name {
            "flow1d" => Experiment::Flow1d,
            "flow2d" => Experiment::Flow2d,
            "sphere-test" => Experiment::SphereTest,
            "eps-study" => Experiment::EpsStudy,
            "split-flow" => Experiment::SplitFlow,
            "distance" => Experiment::Distance,
            "geodesic" => Experiment::Geodesic,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Flow1d => "flow1d",
            Experiment::Flow2d => "flow2d",
            Experiment::SphereTest => "sphere-test",
            Experiment::EpsStudy => "eps-study",
            Experiment::SplitFlow => "split-flow",
            Experiment::Distance => "distance",
            Experiment::Geodesic => "geodesic",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: String,
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub min: Vec<f64>,
    #[serde(default)]
    pub max: Vec<f64>,
    #[serde(default = "one")]
    pub density: f64,
    #[serde(default)]
    pub path: String,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub kind: String,
    #[serde(default)]
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub taus: Vec<f64>,
    pub ns: Vec<usize>,
    pub epss: Vec<f64>,
    pub ref_n: usize,
    pub ref_eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    pub n: usize,
    pub tau: f64,
    pub lambda: f64,
    pub eps: f64,
    pub eps_schedule: Option<Vec<f64>>,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub prestage_max_iters: usize,
    pub absorb_threshold: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub kappa: f64,
    pub r0: f64,
    pub out_dir: String,
    pub threads: usize,
    pub paper_scale: bool,
    pub trace: bool,
    pub frames: usize,
    pub initial: Vec<ShapeSpec>,
    pub second: Vec<ShapeSpec>,
    pub obstacles: ObstacleSpec,
    pub sweep: SweepSpec,
}

impl RunConfig {
    pub fn default_for(exp: Experiment, paper_scale: bool) -> RunConfig {
        let interval = |a: f64, b: f64, density: f64| ShapeSpec {
            kind: "interval".into(),
            center: vec![],
            radius: 0.0,
            a,
            b,
            min: vec![],
            max: vec![],
            density,
            path: String::new(),
        };
        let ball = |center: Vec<f64>, radius: f64| ShapeSpec {
            kind: "ball".into(),
            center,
            radius,
            a: 0.0,
            b: 0.0,
            min: vec![],
            max: vec![],
            density: 1.0,
            path: String::new(),
        };
        let mut cfg = RunConfig {
            dim: 1,
            n: 1024,
            tau: 1e-2,
            lambda: 1.0,
            eps: 1e-6,
            eps_schedule: None,
            stop_tol: 1e-6,
            max_iters: 60_000,
            prestage_max_iters: 8_000,
            absorb_threshold: 300.0,
            t_final: 0.24,
            record_every: 4,
            kappa: 1.0,
            r0: 0.4,
            out_dir: format!("out/{}", exp.name()),
            threads: 0,
            paper_scale,
            trace: false,
            frames: 8,
            initial: vec![interval(0.15, 0.35, 0.8), interval(0.55, 0.75, 1.0)],
            second: vec![],
            obstacles: ObstacleSpec { kind: "none".into(), path: String::new() },
            sweep: SweepSpec {
                taus: vec![2.5e-2, 1.25e-2, 6.25e-3],
                ns: vec![256, 512, 1024, 2048],
                epss: vec![1e-4, 1e-5, 1e-6],
                ref_n: if paper_scale { 8192 } else { 4096 },
                ref_eps: 2e-7,
            },
        };
        match exp {
            Experiment::Flow1d => {}
            Experiment::SplitFlow => {}
            Experiment::Flow2d => {
                cfg.dim = 2;
                cfg.n = if paper_scale { 256 } else { 128 };
                cfg.tau = 0.015;
                cfg.eps = 5e-6;
                cfg.eps_schedule = Some(vec![4e-5, 1e-5, 5e-6]);
                cfg.t_final = 0.45;
                cfg.record_every = 10;
                cfg.initial = vec![ball(vec![0.3, 0.5], 0.12)];
                cfg.obstacles = ObstacleSpec { kind: "slit".into(), path: String::new() };
            }
            Experiment::SphereTest => {
                cfg.n = if paper_scale { 4096 } else { 512 };
                cfg.t_final = 0.05;
                cfg.initial = vec![];
            }
            Experiment::EpsStudy => {
                cfg.tau = 0.005;
                cfg.initial = vec![interval(0.1, 0.9, 1.0)];
            }
            Experiment::Distance | Experiment::Geodesic => {
                cfg.n = 256;
                cfg.initial = vec![ball(vec![0.45], 0.15)];
                cfg.second = vec![ball(vec![0.55], 0.2)];
            }
        }
        cfg
    }

    /// Assembles the effective config: defaults for the experiment, the TOML
    /// file (if any) merged on top, then the overrides.
    pub fn load(
        exp: Experiment,
        config_path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig, CliError> {
        let file_table: Option<toml::Table> = match config_path {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Some(text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
            }
        };
        // paper_scale influences the defaults, so peek at it first
        let mut paper_scale = file_table
            .as_ref()
            .and_then(|t| t.get("paper_scale"))
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        for (k, v) in overrides {
            if k == "paper_scale" {
                paper_scale = v.parse().map_err(|_| CliError::Config("paper_scale must be a bool".into()))?;
            }
        }
        let defaults = RunConfig::default_for(exp, paper_scale);
        let mut table = toml::Table::try_from(&defaults)
            .map_err(|e| CliError::Config(format!("internal defaults: {e}")))?;
        if let Some(t) = file_table {
            merge_tables(&mut table, t);
        }
        for (key, raw) in overrides {
            apply_override(&mut table, key, raw)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        cfg.validate(exp)?;
        Ok(cfg)
    }

    pub fn validate(&self, exp: Experiment) -> Result<(), CliError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(CliError::Config(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        if exp == Experiment::EpsStudy && self.dim != 1 {
            return Err(CliError::Config("eps-study runs in dimension 1".into()));
        }
        if self.record_every == 0 {
            return Err(CliError::Config("record_every must be >= 1".into()));
        }
        if self.obstacles.kind == "pgm" && !Path::new(&self.obstacles.path).exists() {
            return Err(CliError::Config(format!("obstacle mask not found: {}", self.obstacles.path)));
        }
        for shape in self.initial.iter().chain(&self.second) {
            if shape.kind == "csv" && !Path::new(&shape.path).exists() {
                return Err(CliError::Config(format!("density CSV not found: {}", shape.path)));
            }
        }
        self.flow_params().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn flow_params(&self) -> FlowParams {
        let mut p = FlowParams::new(self.tau, self.lambda, self.eps);
        if let Some(s) = &self.eps_schedule {
            p.eps_schedule = s.clone();
        }
        p.stop_tol = self.stop_tol;
        p.max_iters = self.max_iters;
        p.prestage_max_iters = self.prestage_max_iters;
        p.absorb_threshold = self.absorb_threshold;
        p
    }
}

fn merge_tables(base: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(bt)), toml::Value::Table(ft)) => merge_tables(bt, ft),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `key` (dotted path, array elements by index) to `raw`, parsed as a
/// TOML value with a string fallback.
fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = toml::Value::Table(std::mem::take(table));
    {
        let mut node = &mut cur;
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            if let Ok(idx) = part.parse::<usize>() {
                let arr = node
                    .as_array_mut()
                    .ok_or_else(|| CliError::Config(format!("--{key}: {part} indexes a non-array")))?;
                if idx >= arr.len() {
                    return Err(CliError::Config(format!("--{key}: index {idx} out of range")));
                }
                if last {
                    arr[idx] = parsed.clone();
                    break;
                }
                node = &mut arr[idx];
            } else {
                let t = node
                    .as_table_mut()
                    .ok_or_else(|| CliError::Config(format!("--{key}: {part} indexes a non-table")))?;
                if last {
                    t.insert(part.to_string(), parsed.clone());
                    break;
                }
                node = t
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
        }
    }
    *table = match cur {
        toml::Value::Table(t) => t,
        _ => unreachable!(),
    };
    Ok(())
}
