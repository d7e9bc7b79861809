//! Symmetric band matrices and their Cholesky factorization.
//!
//! Regular grids numbered along their short direction have a half-bandwidth
//! of roughly twice the number of nodes across, so `O(n·b²)` factorization
//! and `O(n·b)` solves are cheap enough for the meshes this crate targets.

use crate::error::Error;

/// Lower band of a symmetric matrix. Row `i` stores columns
/// `i - hb ..= i` at `data[i * (hb + 1) ..]`, column `i - hb` first.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, hb: usize) -> Self {
        let hb = hb.min(n.saturating_sub(1));
        SymBand {
            n,
            hb,
            data: vec![0.0; n * (hb + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hb);
        i * (self.hb + 1) + (j + self.hb - i)
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.hb {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to `(i, j)`; callers pass each symmetric pair once with
    /// `i >= j`.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        let w = self.hb + 1;
        y.fill(0.0);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.hb);
            let row = &self.data[i * w + (j0 + self.hb - i)..(i + 1) * w];
            let diag = row[row.len() - 1];
            let mut acc = diag * x[i];
            let xi = x[i];
            for (k, &a) in row[..row.len() - 1].iter().enumerate() {
                let j = j0 + k;
                acc += a * x[j];
                y[j] += a * xi;
            }
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Lower-band Cholesky factor `A = L Lᵀ`. The error carries the local
    /// row index of the failing pivot.
    pub fn cholesky(&self) -> std::result::Result<BandCholesky, (usize, f64)> {
        let n = self.n;
        let hb = self.hb;
        let w = hb + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(hb);
            for j in j0..=i {
                // columns shared by rows i and j
                let k0 = j0.max(j.saturating_sub(hb));
                let a_ij = l[i * w + (j + hb - i)];
                let mut s = a_ij;
                let ri = i * w + (k0 + hb - i);
                let rj = j * w + (k0 + hb - j);
                let len = j - k0;
                let (a, b) = (&l[ri..ri + len], &l[rj..rj + len]);
                s -= dot(a, b);
                if i == j {
                    // relative test catches rigid-body modes lost to roundoff
                    if !(s > 1e-13 * a_ij.abs()) || !s.is_finite() {
                        return Err((i, s));
                    }
                    l[i * w + hb] = s.sqrt();
                } else {
                    l[i * w + (j + hb - i)] = s / l[j * w + hb];
                }
            }
        }
        Ok(BandCholesky { n, hb, l })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable with a fixed summation order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    hb: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, x: &mut [f64]) {
        let w = self.hb + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.hb);
            let row = &self.l[i * w + (j0 + self.hb - i)..i * w + self.hb];
            let s = dot(row, &x[j0..i]);
            x[i] = (x[i] - s) / self.l[i * w + self.hb];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward(&self, x: &mut [f64]) {
        let w = self.hb + 1;
        for i in (0..self.n).rev() {
            x[i] /= self.l[i * w + self.hb];
            let xi = x[i];
            let j0 = i.saturating_sub(self.hb);
            let row = &self.l[i * w + (j0 + self.hb - i)..i * w + self.hb];
            for (k, &a) in row.iter().enumerate() {
                x[j0 + k] -= a * xi;
            }
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.forward(x);
        self.backward(x);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `y = Lᵀ x`.
    pub fn mul_lt(&self, x: &[f64]) -> Vec<f64> {
        let w = self.hb + 1;
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.hb);
            let row = &self.l[i * w + (j0 + self.hb - i)..(i + 1) * w];
            for (k, &a) in row.iter().enumerate() {
                y[j0 + k] += a * x[i];
            }
        }
        y
    }
}

pub(crate) fn not_pd(dof: usize, pivot: f64) -> Error {
    Error::NotPositiveDefinite { dof, pivot }
}
