//! Time-parallel initial value problem solvers: classic parareal and
//! GParareal, whose correction term is inferred by a Gaussian-process
//! emulator trained on fine/coarse residuals (optionally seeded with legacy
//! data from earlier solves).

pub mod error;
pub mod gp;
pub mod gparareal;
pub mod harness;
pub mod integrators;
pub mod ode;
pub mod parareal;
pub mod runtime;

pub use error::{Error, Result};
pub use gparareal::{refine_sweep, run_gparareal, GpararealOptions};
pub use integrators::{propagate, serial_fine_solve, RkOrder, SolverSpec, TimeMesh};
pub use ode::{autonomize, make_fhn, make_rossler, OdeSystem, VectorField};
pub use parareal::{check_convergence, run_fine, run_parareal, Algorithm, ConvergenceReport, Outcome, Run, SolutionTable, SolveConfig};
pub use runtime::{parallel_map, predict_times, CostModel, Executor};
