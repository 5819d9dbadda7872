//! Optional TOML config file. Every key mirrors a command-line flag; flags win.

use std::path::Path;

use anyhow::Context;
use haemocam::{BayesConfig, Mode, WavelengthGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub grid: Option<String>,
    pub threads: Option<usize>,
    pub sensitivity: Option<String>,
    pub basis: Option<String>,
    pub mode: Option<Mode>,
    pub levels: Option<usize>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub iters: Option<usize>,
    pub tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub noise: Option<f64>,
    pub exposure: Option<f64>,
    pub fps: Option<f64>,
    pub band: Option<String>,
    pub repeat: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| crate::usage(format!("config {}: {e}", path.display())))
    }
}

/// Defaults shared by every subcommand; the README lists the same table.
pub struct Defaults;

impl Defaults {
    pub const GRID: &'static str = "450,10,26";
    pub const LEVELS: usize = 1;
    pub const GAMMA: f64 = 1e-3;
    pub const FPS: f64 = 25.0;
    pub const BAND: &'static str = "0.6,3.0";
    pub const REPEAT: usize = 5;
    pub const EXPOSURE: f64 = 1.0;

    pub fn bayes() -> BayesConfig {
        BayesConfig::default()
    }

    pub fn mode() -> Mode {
        Mode::Hybrid
    }
}

/// flag > config file > default
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn parse_grid(s: &str) -> anyhow::Result<WavelengthGrid> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [start, step, count] = parts.as_slice() else {
        return Err(crate::usage(format!(
            "grid must be `start,step,count`, got `{s}`"
        )));
    };
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| crate::usage(format!("bad grid value `{v}`")))
    };
    let count = count
        .parse::<usize>()
        .map_err(|_| crate::usage(format!("bad band count `{count}`")))?;
    Ok(WavelengthGrid::new(num(start)?, num(step)?, count)?)
}

pub fn parse_pair(s: &str, what: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| crate::usage(format!("{what} must be `lo,hi`, got `{s}`")))?;
    match parts.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(crate::usage(format!("{what} must be `lo,hi`, got `{s}`"))),
    }
}
