//! Marginal likelihood of noise-free residual data and its maximization.
//!
//! With relative jitter the covariance is `K = sigma2 (R(ell2) + jitter I)`,
//! so for a fixed length scale the likelihood is maximized in closed form at
//! `sigma2 = y^T (R + jitter I)^{-1} y / n`. The optimizer therefore climbs
//! the profiled likelihood in `log ell2` only, using the analytic gradient,
//! and recovers `sigma2` from the closed form.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::dataset::ResidualDataset;
use crate::gp::emulator::SquaredDistances;
use crate::gp::kernel::Hyperparameters;
use crate::gp::linalg::Cholesky;
use crate::runtime::Executor;

/// Smallest output scale returned; reached only for (near) all-zero residuals.
pub const SIGMA2_FLOOR: f64 = 1e-200;

/// Likelihood of one output column over a fixed input set.
pub(crate) struct Objective<'a> {
    dist: &'a SquaredDistances,
    y: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Evaluation {
    pub value: f64,
    /// Derivatives in `(log sigma2, log ell2)`.
    pub grad: [f64; 2],
    pub sigma2: f64,
}

impl<'a> Objective<'a> {
    pub fn new(dist: &'a SquaredDistances, y: Vec<f64>) -> Self {
        Self { dist, y }
    }

    fn n(&self) -> f64 {
        self.dist.n as f64
    }

    /// `sigma2 = None` selects the profiled (closed-form) output scale.
    pub fn eval(&self, sigma2: Option<f64>, ell2: f64, with_grad: bool) -> Option<Evaluation> {
        let n = self.dist.n;
        let r = self.dist.correlation(ell2);
        let (chol, _) = Cholesky::factor_with_jitter(&r, n)?;
        let beta = chol.solve(&self.y);
        let q: f64 = self.y.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let sigma2 = sigma2.unwrap_or_else(|| (q / self.n()).max(SIGMA2_FLOOR));
        let value = -0.5 * q / sigma2 - 0.5 * (self.n() * sigma2.ln() + chol.log_det()) - 0.5 * self.n() * (2.0 * PI).ln();
        if !value.is_finite() {
            return None;
        }
        let mut grad = [0.5 * q / sigma2 - 0.5 * self.n(), 0.0];
        if with_grad {
            // dK/dlog(ell2) = sigma2 * M with M_ab = R_ab d2_ab / (2 ell2)
            let inv = chol.inverse();
            let half_inv_ell2 = 0.5 / ell2;
            let mut quad = 0.0;
            let mut trace = 0.0;
            for a in 0..n {
                let row = a * n;
                let mut acc = 0.0;
                for b in 0..n {
                    let m = r[row + b] * self.dist.d2[row + b] * half_inv_ell2;
                    acc += m * beta[b];
                    trace += inv[row + b] * m;
                }
                quad += beta[a] * acc;
            }
            grad[1] = 0.5 * (quad / sigma2 - trace);
        }
        Some(Evaluation { value, grad, sigma2 })
    }
}

fn objective_parts(data: &ResidualDataset, output: usize) -> Result<(ResidualDataset, SquaredDistances)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if output >= data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: output + 1,
        });
    }
    let data = data.deduplicated();
    let dist = SquaredDistances::new(data.inputs(), data.dim());
    Ok((data, dist))
}

/// `log N(y_i | 0, K(x, x))` for output column `output`, jittered `K`.
pub fn log_marginal_likelihood(data: &ResidualDataset, output: usize, theta: &Hyperparameters) -> Result<f64> {
    log_marginal_likelihood_with_gradient(data, output, theta).map(|(v, _)| v)
}

/// Value and gradient with respect to `(log sigma2, log ell2)`.
pub fn log_marginal_likelihood_with_gradient(
    data: &ResidualDataset,
    output: usize,
    theta: &Hyperparameters,
) -> Result<(f64, [f64; 2])> {
    theta.validate()?;
    let (data, dist) = objective_parts(data, output)?;
    let obj = Objective::new(&dist, data.output_column(output));
    obj.eval(Some(theta.sigma2), theta.ell2, true)
        .map(|e| (e.value, e.grad))
        .ok_or(Error::IllConditioned { dim: output })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Fixed multistart grid in `log ell2`, tried besides the warm start.
    pub start_log_ell2: Vec<f64>,
    pub log_ell2_bounds: (f64, f64),
    pub max_iter: usize,
    /// Stop once `|d/dlog ell2| <= grad_tol * max(1, |value|)`.
    pub grad_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            start_log_ell2: vec![-1.0, 1.0],
            log_ell2_bounds: (-12.0, 12.0),
            max_iter: 60,
            grad_tol: 1e-7,
        }
    }
}

/// Result of fitting one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub theta: Hyperparameters,
    pub log_likelihood: f64,
    /// Likelihood at the initial hyperparameters (`-inf` if not evaluable).
    pub initial_log_likelihood: f64,
    /// False when no start reached a stationary point or bound; `theta` is
    /// then the best iterate seen.
    pub converged: bool,
    pub evaluations: usize,
}

struct Climb {
    log_ell2: f64,
    eval: Evaluation,
    converged: bool,
}

fn climb(obj: &Objective, start: f64, s: &OptimizerSettings, evals: &mut usize) -> Option<Climb> {
    const MAX_STEP: f64 = 2.0;
    let (lo, hi) = s.log_ell2_bounds;
    let mut eval_at = |x: f64| {
        *evals += 1;
        obj.eval(None, x.exp(), true)
    };
    let mut x = start.clamp(lo, hi);
    let mut cur = eval_at(x)?;
    // inverse curvature estimate: the ascent step is `scale * gradient`
    let mut scale = 1.0;
    let mut converged = false;
    for _ in 0..s.max_iter {
        let g = cur.grad[1];
        let stationary = g.abs() <= s.grad_tol * cur.value.abs().max(1.0);
        let pinned = (x <= lo && g < 0.0) || (x >= hi && g > 0.0);
        if stationary || pinned {
            converged = true;
            break;
        }
        let mut step = (scale * g).clamp(-MAX_STEP, MAX_STEP);
        let mut accepted = None;
        for _ in 0..40 {
            let x_new = (x + step).clamp(lo, hi);
            let moved = x_new - x;
            if moved == 0.0 {
                break;
            }
            if let Some(e) = eval_at(x_new) {
                if e.value >= cur.value + 1e-4 * moved * g {
                    accepted = Some((x_new, moved, e));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, moved, e)) = accepted else {
            // no ascent possible along the gradient at floating resolution
            converged = step.abs() < 1e-9;
            break;
        };
        let dg = g - e.grad[1];
        scale = if dg * moved > 0.0 { moved / dg } else { (2.0 * scale).min(1e6) };
        x = x_new;
        cur = e;
        if moved.abs() < 1e-10 {
            converged = true;
            break;
        }
    }
    Some(Climb {
        log_ell2: x,
        eval: cur,
        converged,
    })
}

fn fit_dimension(dist: &SquaredDistances, y: Vec<f64>, init: &Hyperparameters, s: &OptimizerSettings) -> DimensionFit {
    let obj = Objective::new(dist, y);
    let mut evaluations = 1;
    let initial = obj
        .eval(Some(init.sigma2), init.ell2, false)
        .map_or(f64::NEG_INFINITY, |e| e.value);
    let mut starts = vec![init.log_ell2()];
    for &g in &s.start_log_ell2 {
        if !starts.contains(&g) {
            starts.push(g);
        }
    }
    let mut best: Option<Climb> = None;
    for &start in &starts {
        if let Some(c) = climb(&obj, start, s, &mut evaluations) {
            if best.as_ref().map_or(true, |b| c.eval.value > b.eval.value) {
                best = Some(c);
            }
        }
    }
    match best {
        Some(b) if b.eval.value >= initial => DimensionFit {
            theta: Hyperparameters {
                sigma2: b.eval.sigma2,
                ell2: b.log_ell2.exp(),
            },
            log_likelihood: b.eval.value,
            initial_log_likelihood: initial,
            converged: b.converged,
            evaluations,
        },
        _ => DimensionFit {
            theta: *init,
            log_likelihood: initial,
            initial_log_likelihood: initial,
            converged: false,
            evaluations,
        },
    }
}

/// Maximizes the marginal likelihood of each output dimension independently.
///
/// Dimensions are fitted through `exec`; results do not depend on its worker
/// count. The returned likelihood is never below the one at `init`.
pub fn optimize_hyperparameters(
    data: &ResidualDataset,
    init: &[Hyperparameters],
    settings: &OptimizerSettings,
    exec: &Executor,
) -> Result<Vec<DimensionFit>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if init.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: init.len(),
        });
    }
    for t in init {
        t.validate()?;
    }
    let data = data.deduplicated();
    let dist = SquaredDistances::new(data.inputs(), data.dim());
    let dims: Vec<usize> = (0..data.dim()).collect();
    let fits = exec
        .map(&dims, |_, &i| {
            Ok::<_, ()>(fit_dimension(&dist, data.output_column(i), &init[i], settings))
        })
        .expect("dimension fits are infallible");
    Ok(fits)
}
