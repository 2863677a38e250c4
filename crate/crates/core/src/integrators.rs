//! Fixed-step explicit Runge-Kutta propagators.
//!
//! The step width is fixed by the whole integration window and the total step
//! count, `h = (T - t0) / N`, and never re-derived per call. Propagating over
//! `[a, b]` then `[b, c]` is therefore bitwise identical to propagating over
//! `[a, c]`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::ode::OdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RkOrder {
    /// Forward Euler.
    One,
    /// Explicit midpoint.
    Two,
    /// Classical fourth-order Runge-Kutta.
    Four,
}

impl RkOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            RkOrder::One => 1,
            RkOrder::Two => 2,
            RkOrder::Four => 4,
        }
    }
}

impl TryFrom<u8> for RkOrder {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            1 => Ok(RkOrder::One),
            2 => Ok(RkOrder::Two),
            4 => Ok(RkOrder::Four),
            other => Err(format!("unsupported Runge-Kutta order {other} (expected 1, 2 or 4)")),
        }
    }
}

impl From<RkOrder> for u8 {
    fn from(o: RkOrder) -> u8 {
        o.as_u8()
    }
}

impl fmt::Display for RkOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RK{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Fine,
    Coarse,
}

/// A one-step solver: RK order plus the number of steps over the whole window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverSpec {
    pub order: RkOrder,
    pub steps_total: usize,
    pub role: Role,
}

impl SolverSpec {
    pub fn fine(order: RkOrder, steps_total: usize) -> Self {
        Self { order, steps_total, role: Role::Fine }
    }

    pub fn coarse(order: RkOrder, steps_total: usize) -> Self {
        Self { order, steps_total, role: Role::Coarse }
    }

    pub fn step_width(&self, system: &OdeSystem) -> f64 {
        system.window() / self.steps_total as f64
    }

    /// Whole steps per slice; fails unless `steps_total` is a positive
    /// multiple of the slice count.
    pub fn steps_per_slice(&self, mesh: &TimeMesh) -> Result<usize> {
        let field = match self.role {
            Role::Fine => "nf",
            Role::Coarse => "ng",
        };
        if self.steps_total == 0 {
            return Err(Error::config(field, "step count must be positive"));
        }
        if self.steps_total % mesh.slices() != 0 {
            return Err(Error::config(
                field,
                format!(
                    "step count {} is not divisible by the slice count {}",
                    self.steps_total,
                    mesh.slices()
                ),
            ));
        }
        Ok(self.steps_total / mesh.slices())
    }
}

/// Uniform partition of `[t0, T]` into `J` slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    t0: f64,
    t_end: f64,
    slices: usize,
}

impl TimeMesh {
    pub fn new(t0: f64, t_end: f64, slices: usize) -> Result<Self> {
        if slices == 0 {
            return Err(Error::config("slices", "slice count must be positive"));
        }
        if !(t_end > t0) {
            return Err(Error::config("tmax", format!("tmax ({t_end}) must exceed t0 ({t0})")));
        }
        Ok(Self { t0, t_end, slices })
    }

    pub fn for_system(system: &OdeSystem, slices: usize) -> Result<Self> {
        Self::new(system.t0(), system.t_end(), slices)
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn slice_width(&self) -> f64 {
        (self.t_end - self.t0) / self.slices as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.slice_width()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.slices).map(|j| self.node(j)).collect()
    }
}

/// Non-finite state encountered during integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlowUp {
    /// 1-based index of the step that produced the non-finite value.
    pub step: usize,
}

impl BlowUp {
    pub fn in_slice(self, slice: usize) -> Error {
        Error::BlowUp { slice, step: self.step }
    }
}

/// A solver bound to a system, with its fixed step width and scratch space.
pub struct Propagator<'a> {
    system: &'a OdeSystem,
    order: RkOrder,
    h: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Propagator<'a> {
    pub fn new(system: &'a OdeSystem, spec: &SolverSpec) -> Self {
        let d = system.dim();
        Self {
            system,
            order: spec.order,
            h: spec.step_width(system),
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    pub fn step_width(&self) -> f64 {
        self.h
    }

    /// Advances `u` in place by `steps` steps.
    pub fn advance(&mut self, u: &mut [f64], steps: usize) -> Result<(), BlowUp> {
        for step in 1..=steps {
            self.step(u);
            if u.iter().any(|x| !x.is_finite()) {
                return Err(BlowUp { step });
            }
        }
        Ok(())
    }

    fn step(&mut self, u: &mut [f64]) {
        let h = self.h;
        let sys = self.system;
        match self.order {
            RkOrder::One => {
                sys.eval_into(u, &mut self.k1);
                for (x, k) in u.iter_mut().zip(&self.k1) {
                    *x += h * k;
                }
            }
            RkOrder::Two => {
                sys.eval_into(u, &mut self.k1);
                for ((t, x), k) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k1) {
                    *t = x + 0.5 * h * k;
                }
                sys.eval_into(&self.tmp, &mut self.k2);
                for (x, k) in u.iter_mut().zip(&self.k2) {
                    *x += h * k;
                }
            }
            RkOrder::Four => {
                sys.eval_into(u, &mut self.k1);
                for ((t, x), k) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k1) {
                    *t = x + 0.5 * h * k;
                }
                sys.eval_into(&self.tmp, &mut self.k2);
                for ((t, x), k) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k2) {
                    *t = x + 0.5 * h * k;
                }
                sys.eval_into(&self.tmp, &mut self.k3);
                for ((t, x), k) in self.tmp.iter_mut().zip(u.iter()).zip(&self.k3) {
                    *t = x + h * k;
                }
                sys.eval_into(&self.tmp, &mut self.k4);
                for (i, x) in u.iter_mut().enumerate() {
                    *x += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
                }
            }
        }
    }
}

/// Number of whole steps of width `h` covering `[t_start, t_end]`.
fn whole_steps(h: f64, t_start: f64, t_end: f64) -> Result<usize> {
    if !(t_end > t_start) {
        return Err(Error::ParameterDomain(format!(
            "propagation interval [{t_start}, {t_end}] is empty"
        )));
    }
    let span = t_end - t_start;
    let n = (span / h).round();
    if (n * h - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::ParameterDomain(format!(
            "interval length {span} is not a whole number of steps of width {h}"
        )));
    }
    Ok(n as usize)
}

/// Propagates `u` from `t_start` to `t_end` with the fixed step width of `spec`.
pub fn propagate(system: &OdeSystem, spec: &SolverSpec, u: &[f64], t_start: f64, t_end: f64) -> Result<Vec<f64>> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::ParameterDomain("initial state must be finite".into()));
    }
    let mut p = Propagator::new(system, spec);
    let steps = whole_steps(p.step_width(), t_start, t_end)?;
    let mut out = u.to_vec();
    p.advance(&mut out, steps).map_err(|b| b.in_slice(0))?;
    Ok(out)
}

/// Sequential reference: `U_{j+1} = F(U_j)` over every slice of the mesh.
pub fn serial_fine_solve(system: &OdeSystem, fine: &SolverSpec, mesh: &TimeMesh) -> Result<Vec<Vec<f64>>> {
    let per_slice = fine.steps_per_slice(mesh)?;
    let mut p = Propagator::new(system, fine);
    let mut states = Vec::with_capacity(mesh.slices() + 1);
    let mut u = system.u0().to_vec();
    states.push(u.clone());
    for j in 0..mesh.slices() {
        p.advance(&mut u, per_slice).map_err(|b| b.in_slice(j))?;
        states.push(u.clone());
    }
    Ok(states)
}
