use crate::error::{Error, Result};
use crate::gp::dataset::ResidualDataset;
use crate::gp::kernel::{squared_distance, Hyperparameters};
use crate::gp::linalg::Cholesky;

/// Pairwise squared distances of a fixed input set; shared by every output
/// dimension and every length scale tried during optimization.
#[derive(Debug, Clone)]
pub(crate) struct SquaredDistances {
    pub n: usize,
    pub d2: Vec<f64>,
}

impl SquaredDistances {
    pub fn new(inputs: &[f64], dim: usize) -> Self {
        let n = inputs.len() / dim;
        let mut d2 = vec![0.0; n * n];
        for i in 0..n {
            let xi = &inputs[i * dim..(i + 1) * dim];
            for j in 0..i {
                let v = squared_distance(xi, &inputs[j * dim..(j + 1) * dim]);
                d2[i * n + j] = v;
                d2[j * n + i] = v;
            }
        }
        Self { n, d2 }
    }

    /// Unit-variance SE correlation matrix for length scale `ell2`.
    pub fn correlation(&self, ell2: f64) -> Vec<f64> {
        let scale = -0.5 / ell2;
        self.d2.iter().map(|&v| (v * scale).exp()).collect()
    }
}

#[derive(Debug, Clone)]
struct OutputGp {
    theta: Hyperparameters,
    jitter: f64,
    chol: Cholesky,
    /// `(R + jitter I)^{-1} y`; the weights `K^{-1} y` are `beta / sigma2`.
    beta: Vec<f64>,
}

/// Mean and variance of the residual at one query point, per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Posterior variance clamped at zero.
    pub variance: Vec<f64>,
    /// Posterior variance before clamping.
    pub raw_variance: Vec<f64>,
}

/// Zero-mean, per-output independent GP conditioned on noise-free residuals.
///
/// Immutable once built; share it freely across prediction workers.
#[derive(Debug, Clone)]
pub struct GpEmulator {
    dim: usize,
    inputs: Vec<f64>,
    thetas: Vec<Hyperparameters>,
    outputs: Vec<OutputGp>,
}

impl GpEmulator {
    /// Unconditioned prior: mean zero, variance `sigma2` everywhere.
    pub fn prior(thetas: Vec<Hyperparameters>) -> Self {
        Self {
            dim: thetas.len(),
            inputs: Vec::new(),
            thetas,
            outputs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct training inputs.
    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hyperparameters(&self) -> &[Hyperparameters] {
        &self.thetas
    }

    /// Relative jitter used for each output's factorization.
    pub fn jitter(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.jitter).collect()
    }

    /// `K(x, x)^{-1} y_i` for output `i`, with `K` including jitter.
    pub fn weights(&self, i: usize) -> Vec<f64> {
        let o = &self.outputs[i];
        o.beta.iter().map(|b| b / o.theta.sigma2).collect()
    }

    fn query_distances(&self, x: &[f64]) -> Vec<f64> {
        self.inputs
            .chunks_exact(self.dim)
            .map(|xi| squared_distance(x, xi))
            .collect()
    }

    pub fn predict_mean(&self, x: &[f64]) -> Vec<f64> {
        if self.is_empty() {
            return vec![0.0; self.dim];
        }
        let d2 = self.query_distances(x);
        self.outputs
            .iter()
            .map(|o| {
                let scale = -0.5 / o.theta.ell2;
                d2.iter().zip(&o.beta).map(|(&v, b)| (v * scale).exp() * b).sum()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Prediction {
        if self.is_empty() {
            let variance: Vec<f64> = self.thetas.iter().map(|t| t.sigma2).collect();
            return Prediction {
                mean: vec![0.0; self.dim],
                raw_variance: variance.clone(),
                variance,
            };
        }
        let d2 = self.query_distances(x);
        let mut mean = Vec::with_capacity(self.dim);
        let mut raw = Vec::with_capacity(self.dim);
        for o in &self.outputs {
            let scale = -0.5 / o.theta.ell2;
            let r: Vec<f64> = d2.iter().map(|&v| (v * scale).exp()).collect();
            mean.push(r.iter().zip(&o.beta).map(|(a, b)| a * b).sum());
            let v = o.chol.solve_lower(&r);
            let explained: f64 = v.iter().map(|a| a * a).sum();
            raw.push(o.theta.sigma2 * (1.0 - explained));
        }
        Prediction {
            mean,
            variance: raw.iter().map(|v| v.max(0.0)).collect(),
            raw_variance: raw,
        }
    }
}

/// Conditions one GP per output dimension on `data` (duplicates dropped).
pub fn condition(data: &ResidualDataset, thetas: &[Hyperparameters]) -> Result<GpEmulator> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = data.dim();
    if thetas.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: thetas.len(),
        });
    }
    for t in thetas {
        t.validate()?;
    }
    let data = data.deduplicated();
    let dist = SquaredDistances::new(data.inputs(), dim);
    let outputs = thetas
        .iter()
        .enumerate()
        .map(|(i, theta)| {
            let r = dist.correlation(theta.ell2);
            let (chol, jitter) =
                Cholesky::factor_with_jitter(&r, dist.n).ok_or(Error::IllConditioned { dim: i })?;
            let beta = chol.solve(&data.output_column(i));
            Ok(OutputGp {
                theta: *theta,
                jitter,
                chol,
                beta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GpEmulator {
        dim,
        inputs: data.inputs().to_vec(),
        thetas: thetas.to_vec(),
        outputs,
    })
}
