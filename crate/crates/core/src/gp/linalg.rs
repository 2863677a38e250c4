//! Dense lower Cholesky factorization on row-major storage.

/// Relative jitter ladder: `1e-10` up to `1e-4`, times ten per rung.
pub(crate) const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    /// Lower factor, row-major; entries above the diagonal are zero.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes the symmetric matrix `a` (row-major, lower triangle read)
    /// with `shift` added to the diagonal.
    pub fn factor(a: &[f64], n: usize, shift: f64) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (i * n, j * n);
                let mut s = a[ri + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
                if i == j {
                    s += shift;
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[ri + i] = s.sqrt();
                } else {
                    l[ri + j] = s / l[rj + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Walks the jitter ladder until the factorization succeeds; returns the
    /// factor and the relative jitter used.
    pub fn factor_with_jitter(a: &[f64], n: usize) -> Option<(Self, f64)> {
        JITTER_LADDER
            .iter()
            .find_map(|&j| Self::factor(a, n, j).map(|c| (c, j)))
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..i * self.n + i + 1]
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for i in 0..self.n {
            let r = self.row(i);
            z[i] = (b[i] - dot(&r[..i], &z[..i])) / r[i];
        }
        z
    }

    /// Solves `L^T x = z`.
    pub fn solve_upper(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        let mut x = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            let r = self.row(i);
            x[i] = y[i] / r[i];
            for k in 0..i {
                y[k] -= r[k] * x[i];
            }
        }
        x
    }

    /// Solves `L L^T x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Full inverse of `L L^T`, row-major and symmetric.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        // rows of L^{-1}
        let mut linv = vec![0.0; n * n];
        for i in 0..n {
            let r = self.row(i);
            let (head, tail) = linv.split_at_mut(i * n);
            let row_i = &mut tail[..n];
            row_i[i] = 1.0;
            for k in 0..i {
                let c = r[k];
                if c != 0.0 {
                    let row_k = &head[k * n..k * n + k + 1];
                    for (t, s) in row_i[..=k].iter_mut().zip(row_k) {
                        *t -= c * s;
                    }
                }
            }
            let d = r[i];
            row_i[..=i].iter_mut().for_each(|v| *v /= d);
        }
        // (L^{-1})^T L^{-1}, lower triangle by rank-one row updates
        let mut inv = vec![0.0; n * n];
        for k in 0..n {
            let w = &linv[k * n..k * n + k + 1];
            for a in 0..=k {
                let wa = w[a];
                if wa != 0.0 {
                    for (t, s) in inv[a * n..a * n + a + 1].iter_mut().zip(&w[..=a]) {
                        *t += wa * s;
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                inv[b * n + a] = inv[a * n + b];
            }
        }
        inv
    }
}
