use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a residual row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Gathered by fine runs of the current solve.
    Acquisition,
    /// Loaded from an archive of an earlier solve.
    Legacy,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Acquisition => "acquisition",
            Provenance::Legacy => "legacy",
        }
    }
}

/// Paired inputs `x` (initial values) and residuals `y = F(x) - G(x)`.
///
/// Rows are stored densely; duplicates are kept here (one row per fine run)
/// and dropped by [`ResidualDataset::deduplicated`] before conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl ResidualDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn push(&mut self, x: &[f64], y: &[f64], provenance: Provenance) -> Result<()> {
        for v in [x, y] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        self.inputs.extend_from_slice(x);
        self.outputs.extend_from_slice(y);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        self.provenance[i]
    }

    /// Row-major `n x d` input matrix.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Residual component `i` of every row.
    pub fn output_column(&self, i: usize) -> Vec<f64> {
        self.outputs.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == provenance).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], &[f64], Provenance)> + '_ {
        (0..self.len()).map(move |i| (self.input(i), self.output(i), self.provenance[i]))
    }

    /// Copy with every row whose input bit pattern repeats an earlier row
    /// removed.
    pub fn deduplicated(&self) -> Self {
        let mut seen = HashSet::with_capacity(self.len());
        let mut out = Self::new(self.dim);
        for (x, y, p) in self.rows() {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                out.inputs.extend_from_slice(x);
                out.outputs.extend_from_slice(y);
                out.provenance.push(p);
            }
        }
        out
    }

    /// Copy with every row retagged.
    pub fn retagged(&self, provenance: Provenance) -> Self {
        let mut out = self.clone();
        out.provenance.iter_mut().for_each(|p| *p = provenance);
        out
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let mut out = self.clone();
        out.inputs.extend_from_slice(&other.inputs);
        out.outputs.extend_from_slice(&other.outputs);
        out.provenance.extend_from_slice(&other.provenance);
        Ok(out)
    }
}

/// Acquisition rows followed by legacy rows, dropping any row whose input
/// already appeared; on conflict the acquisition row wins.
pub fn merge_legacy(acquisition: &ResidualDataset, legacy: &ResidualDataset) -> Result<ResidualDataset> {
    Ok(acquisition.concat(legacy)?.deduplicated())
}
