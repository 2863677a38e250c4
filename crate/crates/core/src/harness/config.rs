//! Experiment configuration: a flat TOML key/value file.
//!
//! ```toml
//! system = "fhn"            # "fhn" or "rossler"
//! params = [0.2, 0.2, 3.0]  # empty for the system defaults
//! u0 = [-1.0, 1.0]
//! t0 = 0.0
//! tmax = 40.0
//! slices = 40               # J
//! nf = 160000               # fine steps over the whole window
//! ng = 160                  # coarse steps over the whole window
//! fine_order = 4            # 1, 2 or 4
//! coarse_order = 2
//! tol = 1e-6
//! workers = 4               # optional, defaults to the available cores
//! mode = "gparareal"        # "fine", "parareal" or "gparareal"
//! legacy_in = "fhn.archive" # optional
//! legacy_out = "new.archive"# optional
//! out_dir = "out"
//! grid_min = [-1.25, -1.25] # optional initial-value sweep
//! grid_max = [1.25, 1.25]
//! grid_count = [11, 11]
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{RkOrder, SolverSpec, TimeMesh};
use crate::ode::{system_by_label, OdeSystem};
use crate::parareal::SolveConfig;
use crate::runtime::Executor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fine,
    Parareal,
    Gparareal,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Mode::Fine),
            "parareal" => Ok(Mode::Parareal),
            "gparareal" => Ok(Mode::Gparareal),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(default)]
    pub params: Vec<f64>,
    pub u0: Vec<f64>,
    pub t0: f64,
    pub tmax: f64,
    pub slices: usize,
    pub nf: usize,
    pub ng: usize,
    pub fine_order: RkOrder,
    pub coarse_order: RkOrder,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legacy_in: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legacy_out: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_count: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::fhn_desk()
    }
}

impl ExperimentConfig {
    /// FitzHugh-Nagumo at desk scale: `u0 = (-1, 1)` on `[0, 40]`, 40 slices,
    /// RK4 fine with 1.6e5 steps, RK2 coarse with 160 steps, 11x11 sweep grid.
    pub fn fhn_desk() -> Self {
        Self {
            system: "fhn".into(),
            params: vec![0.2, 0.2, 3.0],
            u0: vec![-1.0, 1.0],
            t0: 0.0,
            tmax: 40.0,
            slices: 40,
            nf: 160_000,
            ng: 160,
            fine_order: RkOrder::Four,
            coarse_order: RkOrder::Two,
            tol: 1e-6,
            workers: None,
            mode: Mode::Gparareal,
            legacy_in: None,
            legacy_out: None,
            out_dir: PathBuf::from("out"),
            grid_min: Some(vec![-1.25, -1.25]),
            grid_max: Some(vec![1.25, 1.25]),
            grid_count: Some(vec![11, 11]),
        }
    }

    /// Rossler at desk scale: `u0 = (0, -6.78, 0.02)` on `[0, 340]`, 40
    /// slices, RK4 fine with 4.5e5 steps, RK1 coarse with 9e4 steps.
    pub fn rossler_desk() -> Self {
        Self {
            system: "rossler".into(),
            params: vec![0.2, 0.2, 5.7],
            u0: vec![0.0, -6.78, 0.02],
            t0: 0.0,
            tmax: 340.0,
            slices: 40,
            nf: 450_000,
            ng: 90_000,
            fine_order: RkOrder::Four,
            coarse_order: RkOrder::One,
            grid_min: None,
            grid_max: None,
            grid_count: None,
            ..Self::fhn_desk()
        }
    }

    /// Desk-scale preset for a system label.
    pub fn preset(system: &str) -> Result<Self> {
        match system {
            "fhn" => Ok(Self::fhn_desk()),
            "rossler" => Ok(Self::rossler_desk()),
            other => Err(Error::config("system", format!("unknown system `{other}`"))),
        }
    }

    /// Parses and validates. Syntax errors carry line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::ConfigParse(m) => Error::ConfigParse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        finite("t0", self.t0)?;
        finite("tmax", self.tmax)?;
        if self.tmax <= self.t0 {
            return Err(Error::config("tmax", "must exceed t0"));
        }
        if self.slices == 0 {
            return Err(Error::config("slices", "must be positive"));
        }
        for (field, n) in [("nf", self.nf), ("ng", self.ng)] {
            if n == 0 || n % self.slices != 0 {
                return Err(Error::config(
                    field,
                    format!("{n} is not a positive multiple of slices = {}", self.slices),
                ));
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config("tol", "must be positive and finite"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be positive"));
        }
        if self.u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("u0", "must be finite"));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("params", "must be finite"));
        }
        let system = self.system()?;
        if self.mode != Mode::Gparareal {
            if self.legacy_in.is_some() {
                return Err(Error::config("legacy_in", "requires mode = \"gparareal\""));
            }
            if self.legacy_out.is_some() {
                return Err(Error::config("legacy_out", "requires mode = \"gparareal\""));
            }
        }
        self.validate_grid(system.dim())
    }

    fn validate_grid(&self, dim: usize) -> Result<()> {
        match (&self.grid_min, &self.grid_max, &self.grid_count) {
            (None, None, None) => Ok(()),
            (Some(lo), Some(hi), Some(n)) => {
                for (field, len) in [("grid_min", lo.len()), ("grid_max", hi.len()), ("grid_count", n.len())] {
                    if len != dim {
                        return Err(Error::config(field, format!("needs {dim} entries, found {len}")));
                    }
                }
                if lo.iter().chain(hi).any(|v| !v.is_finite()) {
                    return Err(Error::config("grid_min", "grid bounds must be finite"));
                }
                if lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::config("grid_max", "must not be below grid_min"));
                }
                if n.iter().any(|&c| c == 0) {
                    return Err(Error::config("grid_count", "counts must be at least 1"));
                }
                Ok(())
            }
            _ => Err(Error::config("grid_min", "grid_min, grid_max and grid_count go together")),
        }
    }

    pub fn system(&self) -> Result<OdeSystem> {
        self.system_at(&self.u0)
    }

    /// The configured system started from `u0` instead.
    pub fn system_at(&self, u0: &[f64]) -> Result<OdeSystem> {
        system_by_label(&self.system, &self.params, u0, self.t0, self.tmax).map_err(|e| match e {
            Error::DimensionMismatch { expected, found } => {
                Error::config("u0", format!("{} needs {expected} entries, found {found}", self.system))
            }
            Error::ParameterDomain(m) => Error::config("params", m),
            other => other,
        })
    }

    pub fn executor(&self) -> Executor {
        self.workers.map(Executor::new).unwrap_or_default()
    }

    pub fn mesh(&self) -> Result<TimeMesh> {
        TimeMesh::new(self.t0, self.tmax, self.slices)
    }

    pub fn solve_config(&self) -> Result<SolveConfig> {
        Ok(SolveConfig::new(
            SolverSpec::fine(self.fine_order, self.nf),
            SolverSpec::coarse(self.coarse_order, self.ng),
            self.mesh()?,
            self.tol,
        )
        .with_executor(self.executor()))
    }

    /// Row-major grid points, first coordinate outermost.
    pub fn grid_points(&self) -> Option<Vec<Vec<f64>>> {
        let (lo, hi, n) = (self.grid_min.as_ref()?, self.grid_max.as_ref()?, self.grid_count.as_ref()?);
        let axes: Vec<Vec<f64>> = (0..lo.len())
            .map(|i| {
                if n[i] == 1 {
                    vec![lo[i]]
                } else {
                    let h = (hi[i] - lo[i]) / (n[i] - 1) as f64;
                    (0..n[i]).map(|m| if m + 1 == n[i] { hi[i] } else { lo[i] + m as f64 * h }).collect()
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Some(points)
    }
}
