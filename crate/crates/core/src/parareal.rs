//! Classic parareal: serial coarse sweep, parallel fine runs on unconverged
//! slices, predictor-corrector update, sliding convergence frontier.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Hyperparameters, ResidualDataset};
use crate::integrators::{BlowUp, Propagator, SolverSpec, TimeMesh};
use crate::ode::OdeSystem;
use crate::runtime::{Executor, Instrument, Phase, PhaseTimings, ScheduleLog};

pub type State = Vec<f64>;

/// Run parameters shared by parareal and GParareal.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub fine: SolverSpec,
    pub coarse: SolverSpec,
    pub mesh: TimeMesh,
    /// Stopping tolerance on successive iterates. Zero forces `k = J`.
    pub tol: f64,
    pub executor: Executor,
    /// Stop after this many iterations even if unconverged.
    pub max_iterations: Option<usize>,
}

impl SolveConfig {
    pub fn new(fine: SolverSpec, coarse: SolverSpec, mesh: TimeMesh, tol: f64) -> Self {
        Self {
            fine,
            coarse,
            mesh,
            tol,
            executor: Executor::default(),
            max_iterations: None,
        }
    }

    pub fn with_executor(mut self, executor: Executor) -> Self {
        self.executor = executor;
        self
    }

    pub fn with_max_iterations(mut self, k: usize) -> Self {
        self.max_iterations = Some(k);
        self
    }

    pub(crate) fn validate(&self, system: &OdeSystem) -> Result<(usize, usize)> {
        if !(self.tol >= 0.0) || !self.tol.is_finite() {
            return Err(Error::config("tol", format!("tolerance must be finite and non-negative, got {}", self.tol)));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if !close(self.mesh.t0(), system.t0()) || !close(self.mesh.t_end(), system.t_end()) {
            return Err(Error::config("slices", "mesh window differs from the system window"));
        }
        Ok((self.fine.steps_per_slice(&self.mesh)?, self.coarse.steps_per_slice(&self.mesh)?))
    }

    pub(crate) fn iteration_cap(&self) -> usize {
        let j = self.mesh.slices();
        self.max_iterations.map_or(j, |k| k.min(j))
    }
}

/// Converged values at the mesh nodes; row 0 is the initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub mesh: TimeMesh,
    pub states: Vec<State>,
}

impl SolutionTable {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// CSV with header `t,u1..ud` and one row per mesh node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("u{i}")));
        wr.write_record(&header)?;
        for (j, s) in self.states.iter().enumerate() {
            let mut rec = vec![self.mesh.node(j).to_string()];
            rec.extend(s.iter().map(f64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fine,
    Parareal,
    Gparareal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    /// Frontier reached `J` before iteration `J`.
    Converged,
    /// Frontier reached `J` only at iteration `J` (serial-equivalent cost).
    Exhausted,
    /// Stopped by an iteration cap before convergence.
    IterationLimit,
    /// Non-finite state; `iteration` 0 is the initial coarse sweep.
    BlowUp { iteration: usize, slice: usize, step: usize },
    /// Emulator could not be factorized even at the largest jitter.
    IllConditioned { iteration: usize, dim: usize },
}

impl Outcome {
    pub fn is_converged(&self) -> bool {
        matches!(self, Outcome::Converged | Outcome::Exhausted)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::Exhausted => "exhausted",
            Outcome::IterationLimit => "iteration_limit",
            Outcome::BlowUp { .. } => "blow_up",
            Outcome::IllConditioned { .. } => "ill_conditioned",
        }
    }
}

/// Emulator state after one GParareal iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorIteration {
    pub iteration: usize,
    pub training_rows: usize,
    pub legacy_rows: usize,
    pub hyperparameters: Vec<Hyperparameters>,
    pub log_likelihood: Vec<f64>,
    pub optimizer_converged: Vec<bool>,
    pub jitter: Vec<f64>,
    /// Largest posterior variance met during the refinement sweep.
    pub max_posterior_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub algorithm: Algorithm,
    /// Iterations performed (`k`).
    pub iterations: usize,
    /// Frontier `I` after each iteration.
    pub frontier_history: Vec<usize>,
    /// Largest successive-iterate difference after each iteration.
    pub error_history: Vec<f64>,
    pub outcome: Outcome,
    pub timings: PhaseTimings,
    pub fine_runs: usize,
    pub median_fine_seconds: Option<f64>,
    pub median_coarse_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub emulator: Vec<EmulatorIteration>,
}

impl ConvergenceReport {
    pub fn frontier(&self) -> usize {
        self.frontier_history.last().copied().unwrap_or(0)
    }
}

/// Everything a solve produces.
#[derive(Debug)]
pub struct Run {
    pub table: SolutionTable,
    pub report: ConvergenceReport,
    pub schedule: ScheduleLog,
    /// GParareal acquisition rows, reusable as legacy data.
    pub acquisition: Option<ResidualDataset>,
}

/// Advances the frontier past every slice whose successive difference is
/// below `tol` in every component, stopping at the first that is not.
pub fn check_convergence(current: &[State], previous: &[State], tol: f64, frontier: usize) -> usize {
    let mut i = frontier;
    while i + 1 < current.len() && max_abs_diff(&current[i + 1], &previous[i + 1]) < tol {
        i += 1;
    }
    i
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn max_iterate_change(current: &[State], previous: &[State]) -> f64 {
    current
        .iter()
        .zip(previous)
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max)
}

/// Shared bookkeeping of the two iterative schemes.
pub(crate) struct Solver<'a> {
    pub system: &'a OdeSystem,
    pub config: &'a SolveConfig,
    pub fine_steps: usize,
    pub coarse_steps: usize,
    pub ins: Instrument,
    pub coarse: Propagator<'a>,
}

impl<'a> Solver<'a> {
    pub fn new(system: &'a OdeSystem, config: &'a SolveConfig) -> Result<Self> {
        let (fine_steps, coarse_steps) = config.validate(system)?;
        Ok(Self {
            system,
            config,
            fine_steps,
            coarse_steps,
            ins: Instrument::new(),
            coarse: Propagator::new(system, &config.coarse),
        })
    }

    pub fn slices(&self) -> usize {
        self.config.mesh.slices()
    }

    /// Coarse propagation over one slice, timed.
    pub fn coarse_slice(&mut self, iteration: usize, slice: usize, x: &[f64]) -> Result<State, BlowUp> {
        let t0 = Instant::now();
        let mut u = x.to_vec();
        let r = self.coarse.advance(&mut u, self.coarse_steps);
        self.ins.coarse_slice(iteration, slice, t0, Instant::now());
        r.map(|_| u)
    }

    /// Initial serial coarse sweep; returns the iterate and the coarse value
    /// `G(U_{j-1})` cached at every node `j >= 1`.
    pub fn initial_sweep(&mut self) -> Result<(Vec<State>, Vec<State>), Outcome> {
        let j_max = self.slices();
        let mut u = vec![self.system.u0().to_vec(); j_max + 1];
        let mut g = vec![Vec::new(); j_max + 1];
        for j in 0..j_max {
            let next = self.coarse_slice(0, j, &u[j]).map_err(|b| Outcome::BlowUp {
                iteration: 0,
                slice: j,
                step: b.step,
            })?;
            g[j + 1] = next.clone();
            u[j + 1] = next;
        }
        Ok((u, g))
    }

    /// Fine runs from `u[j-1]` for every `j` in `frontier+1..=J`, in parallel.
    /// The returned vector is indexed by node `j`; entries up to the
    /// frontier are empty.
    pub fn fine_batch(&mut self, iteration: usize, u: &[State], frontier: usize) -> Result<Vec<State>, Outcome> {
        let nodes: Vec<usize> = (frontier + 1..=self.slices()).collect();
        let system = self.system;
        let spec = self.config.fine;
        let steps = self.fine_steps;
        let log = self.ins.log();
        let t0 = Instant::now();
        let results = self.config.executor.map(&nodes, |_, &j| {
            let s0 = Instant::now();
            let mut p = Propagator::new(system, &spec);
            let mut x = u[j - 1].clone();
            p.advance(&mut x, steps)?;
            let s1 = Instant::now();
            log.record(iteration, Some(j - 1), Phase::Fine, s0, s1);
            Ok::<_, BlowUp>((x, (s1 - s0).as_secs_f64()))
        });
        let elapsed = t0.elapsed().as_secs_f64();
        self.ins.add(Phase::Fine, elapsed);
        let results = results.map_err(|f| Outcome::BlowUp {
            iteration,
            slice: nodes[f.index] - 1,
            step: f.error.step,
        })?;
        let mut out = vec![Vec::new(); self.slices() + 1];
        let mut samples = Vec::with_capacity(results.len());
        for (&j, (x, dt)) in nodes.iter().zip(results) {
            out[j] = x;
            samples.push(dt);
        }
        self.ins.fine_samples(samples);
        Ok(out)
    }
}

pub(crate) struct Progress {
    pub frontier_history: Vec<usize>,
    pub error_history: Vec<f64>,
    pub fine_runs: usize,
}

pub(crate) fn finish(
    solver: Solver<'_>,
    algorithm: Algorithm,
    states: Vec<State>,
    progress: Progress,
    outcome: Outcome,
    emulator: Vec<EmulatorIteration>,
    acquisition: Option<ResidualDataset>,
) -> Run {
    let mesh = solver.config.mesh;
    let measured = solver.ins.finish();
    Run {
        table: SolutionTable { mesh, states },
        report: ConvergenceReport {
            algorithm,
            iterations: progress.frontier_history.len(),
            frontier_history: progress.frontier_history,
            error_history: progress.error_history,
            outcome,
            timings: measured.timings,
            fine_runs: progress.fine_runs,
            median_fine_seconds: measured.median_fine,
            median_coarse_seconds: measured.median_coarse,
            emulator,
        },
        schedule: measured.log,
        acquisition,
    }
}

pub(crate) fn terminal_outcome(frontier: usize, iteration: usize, slices: usize) -> Option<Outcome> {
    if frontier < slices {
        None
    } else if iteration < slices {
        Some(Outcome::Converged)
    } else {
        Some(Outcome::Exhausted)
    }
}

/// Solves `system` with parareal.
///
/// Invalid configurations are errors; solver failures are reported in the
/// outcome together with the partial table.
pub fn run_parareal(system: &OdeSystem, config: &SolveConfig) -> Result<Run> {
    let mut solver = Solver::new(system, config)?;
    let j_max = solver.slices();
    let mut progress = Progress {
        frontier_history: Vec::new(),
        error_history: Vec::new(),
        fine_runs: 0,
    };
    let (mut u, mut g) = match solver.initial_sweep() {
        Ok(v) => v,
        Err(outcome) => {
            let states = vec![system.u0().to_vec()];
            return Ok(finish(solver, Algorithm::Parareal, states, progress, outcome, Vec::new(), None));
        }
    };
    let mut frontier = 0;
    let mut outcome = Outcome::IterationLimit;
    for k in 1..=config.iteration_cap() {
        let fine = match solver.fine_batch(k, &u, frontier) {
            Ok(f) => f,
            Err(o) => {
                outcome = o;
                break;
            }
        };
        progress.fine_runs += j_max - frontier;

        let t_update = Instant::now();
        let mut coarse_time = 0.0;
        let previous = u.clone();
        frontier += 1;
        u[frontier] = fine[frontier].clone();
        let mut failed = None;
        for j in frontier + 1..=j_max {
            let c0 = Instant::now();
            let predicted = match solver.coarse_slice(k, j - 1, &u[j - 1]) {
                Ok(p) => p,
                Err(b) => {
                    failed = Some(Outcome::BlowUp { iteration: k, slice: j - 1, step: b.step });
                    break;
                }
            };
            coarse_time += c0.elapsed().as_secs_f64();
            let corrected: State = predicted
                .iter()
                .zip(fine[j].iter().zip(&g[j]))
                .map(|(p, (f, c))| p + (f - c))
                .collect();
            if corrected.iter().any(|v| !v.is_finite()) {
                failed = Some(Outcome::BlowUp { iteration: k, slice: j - 1, step: solver.coarse_steps });
                break;
            }
            u[j] = corrected;
            g[j] = predicted;
        }
        if let Some(o) = failed {
            solver.ins.add(Phase::Overhead, t_update.elapsed().as_secs_f64() - coarse_time);
            outcome = o;
            break;
        }
        progress.error_history.push(max_iterate_change(&u, &previous));
        frontier = check_convergence(&u, &previous, config.tol, frontier);
        progress.frontier_history.push(frontier);
        solver.ins.add(Phase::Overhead, t_update.elapsed().as_secs_f64() - coarse_time);
        if let Some(o) = terminal_outcome(frontier, k, j_max) {
            outcome = o;
            break;
        }
    }
    Ok(finish(solver, Algorithm::Parareal, u, progress, outcome, Vec::new(), None))
}

/// Serial fine solve reported in the same layout as the iterative schemes:
/// zero iterations, one fine run per slice.
pub fn run_fine(system: &OdeSystem, config: &SolveConfig) -> Result<Run> {
    let mut solver = Solver::new(system, config)?;
    let j_max = solver.slices();
    let mut fine = Propagator::new(system, &config.fine);
    let mut states = vec![system.u0().to_vec()];
    let mut samples = Vec::with_capacity(j_max);
    let mut outcome = Outcome::Converged;
    let t0 = Instant::now();
    for slice in 0..j_max {
        let mut x = states[slice].clone();
        let s0 = Instant::now();
        let stepped = fine.advance(&mut x, solver.fine_steps);
        let s1 = Instant::now();
        solver.ins.log().record(0, Some(slice), Phase::Fine, s0, s1);
        if let Err(b) = stepped {
            outcome = Outcome::BlowUp { iteration: 0, slice, step: b.step };
            break;
        }
        samples.push((s1 - s0).as_secs_f64());
        states.push(x);
    }
    solver.ins.add(Phase::Fine, t0.elapsed().as_secs_f64());
    solver.ins.fine_samples(samples);
    let progress = Progress {
        frontier_history: Vec::new(),
        error_history: Vec::new(),
        fine_runs: states.len() - 1,
    };
    Ok(finish(solver, Algorithm::Fine, states, progress, outcome, Vec::new(), None))
}
