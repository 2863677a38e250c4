//! GParareal: parareal's slice structure with the fine/coarse correction
//! inferred by a GP emulator trained on every residual gathered so far,
//! optionally seeded with legacy rows from earlier solves.
//!
//! Each iteration `k >= 1`:
//! 1. fine runs from the previous iterate on unconverged slices (parallel);
//! 2. residual rows `(V^{k-1}_j, F(V^{k-1}_j) - G(V^{k-1}_j))` appended, with
//!    the coarse values reused from the sweep that produced `V^{k-1}`;
//! 3. hyperparameters re-optimized (warm start) and the emulator conditioned
//!    on acquisition plus legacy rows;
//! 4. the frontier advances by one slice, taking the fine value;
//! 5. serial refinement `V^k_{j+1} = mean(V^k_j) + G(V^k_j)` past the frontier;
//! 6. the stopping check advances the frontier further.

use std::time::Instant;

use crate::error::Result;
use crate::gp::{
    condition, merge_legacy, optimize_hyperparameters, GpEmulator, Hyperparameters, OptimizerSettings, Provenance,
    ResidualDataset,
};
use crate::integrators::{Propagator, SolverSpec, TimeMesh};
use crate::ode::OdeSystem;
use crate::parareal::{
    check_convergence, finish, max_iterate_change, terminal_outcome, Algorithm, EmulatorIteration, Outcome, Progress,
    Run, SolveConfig, Solver, State,
};
use crate::runtime::{Instrument, Phase};

#[derive(Debug, Clone, Default)]
pub struct GpararealOptions {
    /// Residual rows from earlier solves with the same solver pair; tagged
    /// as legacy on entry.
    pub legacy: Option<ResidualDataset>,
    /// Starting hyperparameters per output; defaults to `sigma2 = ell2 = 1`.
    pub initial_hyperparameters: Option<Vec<Hyperparameters>>,
    pub optimizer: OptimizerSettings,
}

/// Values produced by one refinement sweep past the frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// `G(V^k_{j-1})` for each refined node `j`, in node order.
    pub coarse: Vec<State>,
    /// Posterior variance at each sweep input, in node order.
    pub variance: Vec<Vec<f64>>,
}

/// Refines `states[frontier+1..=J]` in place from the converged value at
/// `states[frontier]`.
///
/// Fails with the slice index of a coarse blow-up.
pub fn refine_sweep(
    emulator: &GpEmulator,
    system: &OdeSystem,
    coarse: &SolverSpec,
    mesh: &TimeMesh,
    frontier: usize,
    states: &mut [State],
) -> Result<Sweep> {
    let steps = coarse.steps_per_slice(mesh)?;
    let mut p = Propagator::new(system, coarse);
    sweep(emulator, &mut p, steps, frontier, states, None, 0).map_err(|(slice, step)| {
        crate::error::Error::BlowUp { slice, step }
    })
}

fn sweep(
    emulator: &GpEmulator,
    coarse: &mut Propagator<'_>,
    steps: usize,
    frontier: usize,
    states: &mut [State],
    mut ins: Option<&mut Instrument>,
    iteration: usize,
) -> Result<Sweep, (usize, usize)> {
    let j_max = states.len() - 1;
    let mut out = Sweep {
        coarse: Vec::with_capacity(j_max - frontier),
        variance: Vec::with_capacity(j_max - frontier),
    };
    for j in frontier + 1..=j_max {
        let t0 = Instant::now();
        let mut g = states[j - 1].clone();
        let stepped = coarse.advance(&mut g, steps);
        let t1 = Instant::now();
        if let Some(ins) = ins.as_deref_mut() {
            ins.coarse_slice(iteration, j - 1, t0, t1);
        }
        stepped.map_err(|b| (j - 1, b.step))?;
        let pred = emulator.predict(&states[j - 1]);
        let t2 = Instant::now();
        let refined: State = pred.mean.iter().zip(&g).map(|(m, c)| m + c).collect();
        if refined.iter().any(|v| !v.is_finite()) {
            return Err((j - 1, steps));
        }
        states[j] = refined;
        out.coarse.push(g);
        out.variance.push(pred.variance);
        if let Some(ins) = ins.as_deref_mut() {
            ins.add(Phase::EmulatorPredict, (t2 - t1).as_secs_f64());
            ins.add(Phase::Overhead, t2.elapsed().as_secs_f64());
        }
    }
    Ok(out)
}

/// Solves `system` with GParareal.
///
/// `run.acquisition` holds one residual row per fine run launched, for use as
/// legacy data by later solves.
pub fn run_gparareal(system: &OdeSystem, config: &SolveConfig, options: &GpararealOptions) -> Result<Run> {
    let d = system.dim();
    let legacy = match &options.legacy {
        Some(l) if l.dim() != d => {
            return Err(crate::error::Error::DimensionMismatch {
                expected: d,
                found: l.dim(),
            })
        }
        Some(l) => l.retagged(Provenance::Legacy).deduplicated(),
        None => ResidualDataset::new(d),
    };
    let mut thetas = match &options.initial_hyperparameters {
        Some(t) if t.len() == d => {
            t.iter().try_for_each(Hyperparameters::validate)?;
            t.clone()
        }
        Some(t) => {
            return Err(crate::error::Error::DimensionMismatch {
                expected: d,
                found: t.len(),
            })
        }
        None => vec![Hyperparameters::default(); d],
    };

    let mut solver = Solver::new(system, config)?;
    let j_max = solver.slices();
    let mut acquisition = ResidualDataset::new(d);
    let mut progress = Progress {
        frontier_history: Vec::new(),
        error_history: Vec::new(),
        fine_runs: 0,
    };
    let mut diagnostics = Vec::new();
    let (mut v, mut g) = match solver.initial_sweep() {
        Ok(x) => x,
        Err(outcome) => {
            let states = vec![system.u0().to_vec()];
            return Ok(finish(solver, Algorithm::Gparareal, states, progress, outcome, diagnostics, Some(acquisition)));
        }
    };
    let mut frontier = 0;
    let mut outcome = Outcome::IterationLimit;
    for k in 1..=config.iteration_cap() {
        let fine = match solver.fine_batch(k, &v, frontier) {
            Ok(f) => f,
            Err(o) => {
                outcome = o;
                break;
            }
        };
        progress.fine_runs += j_max - frontier;

        let t_rows = Instant::now();
        for j in frontier + 1..=j_max {
            let residual: State = fine[j].iter().zip(&g[j]).map(|(f, c)| f - c).collect();
            acquisition.push(&v[j - 1], &residual, Provenance::Acquisition)?;
        }
        let previous = v.clone();
        frontier += 1;
        v[frontier] = fine[frontier].clone();
        solver.ins.add(Phase::Overhead, t_rows.elapsed().as_secs_f64());

        if frontier < j_max {
            let training = solver
                .ins
                .time(k, Phase::Overhead, || merge_legacy(&acquisition, &legacy))?;
            let executor = config.executor;
            let fits = solver.ins.time(k, Phase::EmulatorOptimize, || {
                optimize_hyperparameters(&training, &thetas, &options.optimizer, &executor)
            })?;
            thetas = fits.iter().map(|f| f.theta).collect();
            let emulator = match solver.ins.time(k, Phase::EmulatorCondition, || condition(&training, &thetas)) {
                Ok(e) => e,
                Err(crate::error::Error::IllConditioned { dim }) => {
                    outcome = Outcome::IllConditioned { iteration: k, dim };
                    break;
                }
                Err(e) => return Err(e),
            };
            let coarse_steps = solver.coarse_steps;
            let swept = sweep(
                &emulator,
                &mut solver.coarse,
                coarse_steps,
                frontier,
                &mut v,
                Some(&mut solver.ins),
                k,
            );
            let swept = match swept {
                Ok(s) => s,
                Err((slice, step)) => {
                    outcome = Outcome::BlowUp { iteration: k, slice, step };
                    break;
                }
            };
            for (offset, c) in swept.coarse.into_iter().enumerate() {
                g[frontier + 1 + offset] = c;
            }
            diagnostics.push(EmulatorIteration {
                iteration: k,
                training_rows: emulator.len(),
                legacy_rows: training.count(Provenance::Legacy),
                hyperparameters: thetas.clone(),
                log_likelihood: fits.iter().map(|f| f.log_likelihood).collect(),
                optimizer_converged: fits.iter().map(|f| f.converged).collect(),
                jitter: emulator.jitter(),
                max_posterior_variance: swept.variance.iter().flatten().copied().fold(0.0, f64::max),
            });
        }

        let t_check = Instant::now();
        progress.error_history.push(max_iterate_change(&v, &previous));
        frontier = check_convergence(&v, &previous, config.tol, frontier);
        progress.frontier_history.push(frontier);
        solver.ins.add(Phase::Overhead, t_check.elapsed().as_secs_f64());
        if let Some(o) = terminal_outcome(frontier, k, j_max) {
            outcome = o;
            break;
        }
    }
    Ok(finish(solver, Algorithm::Gparareal, v, progress, outcome, diagnostics, Some(acquisition)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Hyperparameters;
    use crate::integrators::{propagate, serial_fine_solve, RkOrder};
    use crate::ode::make_fhn;
    use crate::runtime::Executor;

    fn fhn8() -> (OdeSystem, SolveConfig) {
        let sys = make_fhn(0.2, 0.2, 3.0, [-1.0, 1.0], 0.0, 8.0).unwrap();
        let mesh = TimeMesh::for_system(&sys, 8).unwrap();
        let cfg = SolveConfig::new(SolverSpec::fine(RkOrder::Four, 800), SolverSpec::coarse(RkOrder::Two, 32), mesh, 1e-6)
            .with_executor(Executor::sequential());
        (sys, cfg)
    }

    #[test]
    fn prior_emulator_sweep_is_coarse_sweep() {
        let (sys, cfg) = fhn8();
        let em = GpEmulator::prior(vec![Hyperparameters::default(); 2]);
        let mut states = vec![sys.u0().to_vec(); 9];
        refine_sweep(&em, &sys, &cfg.coarse, &cfg.mesh, 0, &mut states).unwrap();
        let mut u = sys.u0().to_vec();
        for j in 0..8 {
            u = propagate(&sys, &cfg.coarse, &u, cfg.mesh.node(j), cfg.mesh.node(j + 1)).unwrap();
            assert_eq!(states[j + 1], u);
        }
    }

    #[test]
    fn single_training_row_reproduces_fine_value() {
        let (sys, cfg) = fhn8();
        let x = vec![0.4, -0.3];
        let f = propagate(&sys, &cfg.fine, &x, 0.0, 1.0).unwrap();
        let c = propagate(&sys, &cfg.coarse, &x, 0.0, 1.0).unwrap();
        let r: Vec<f64> = f.iter().zip(&c).map(|(a, b)| a - b).collect();
        let mut data = ResidualDataset::new(2);
        data.push(&x, &r, Provenance::Acquisition).unwrap();
        let em = condition(&data, &[Hyperparameters::default(); 2]).unwrap();
        let mut states = vec![x.clone(); 9];
        refine_sweep(&em, &sys, &cfg.coarse, &cfg.mesh, 0, &mut states).unwrap();
        for i in 0..2 {
            assert!((states[1][i] - f[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn coarse_equal_to_fine_converges_at_once() {
        let (sys, mut cfg) = fhn8();
        cfg.coarse = SolverSpec::coarse(RkOrder::Four, 800);
        let run = run_gparareal(&sys, &cfg, &GpararealOptions::default()).unwrap();
        assert_eq!(run.report.iterations, 1);
        assert_eq!(run.report.outcome, Outcome::Converged);
        let acq = run.acquisition.unwrap();
        assert!((0..acq.len()).all(|i| acq.output(i).iter().all(|&y| y == 0.0)));
        let serial = serial_fine_solve(&sys, &cfg.fine, &cfg.mesh).unwrap();
        assert_eq!(run.table.states, serial);
    }

    #[test]
    fn dataset_grows_by_one_row_per_fine_run() {
        let (sys, cfg) = fhn8();
        for cap in 1..=3 {
            let run = run_gparareal(&sys, &cfg.clone().with_max_iterations(cap), &GpararealOptions::default()).unwrap();
            let mut expected = 0;
            let mut prev = 0;
            for &i in &run.report.frontier_history {
                expected += 8 - prev;
                prev = i;
            }
            assert_eq!(run.acquisition.unwrap().len(), expected);
            assert_eq!(run.report.fine_runs, expected);
        }
    }
}
