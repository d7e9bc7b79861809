//! Extremal eigenpairs of symmetric operators.
//!
//! [`smallest_eigs`] is a Krylov–Schur (thick-restart Lanczos) iteration
//! with full two-pass Gram–Schmidt reorthogonalization. The projected
//! matrix is built from the Gram–Schmidt coefficients, so after a restart it
//! is an arrowhead matrix bordered by a tridiagonal block and no special
//! bookkeeping is needed.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EigOptions {
    /// Relative residual target `‖A y - θ y‖ ≤ tol · max(|θ|, ‖H‖)`.
    pub tol: f64,
    /// Krylov basis size; 0 picks `max(2·nev + 20, 40)`.
    pub ncv: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            tol: 1e-12,
            ncv: 0,
            max_restarts: 300,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigResult {
    /// Ascending.
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub matvecs: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalizes `w` against `basis` twice; returns the accumulated
/// projection coefficients.
fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut coeffs = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (c, v) in coeffs.iter_mut().zip(basis) {
            let h = dot(v, w);
            *c += h;
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= h * vi;
            }
        }
    }
    coeffs
}

fn sorted_eigen(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(h.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// The `nev` algebraically smallest eigenpairs of the symmetric operator
/// `op` (`op(x, y)` writes `y = A x`) on `R^n`. `start` seeds the Krylov
/// space; a deterministic pseudo-random vector is used otherwise.
pub fn smallest_eigs<F>(
    n: usize,
    nev: usize,
    mut op: F,
    start: Option<&[f64]>,
    opts: &EigOptions,
) -> Result<EigResult>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if nev == 0 || n == 0 {
        return Ok(EigResult {
            values: vec![],
            vectors: vec![],
            residuals: vec![],
            matvecs: 0,
        });
    }
    let nev = nev.min(n);
    let ncv = if opts.ncv == 0 {
        (2 * nev + 20).max(40)
    } else {
        opts.ncv.max(nev + 2)
    }
    .min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut v0: Vec<f64> = match start {
        Some(s) if s.len() == n && norm(s) > 0.0 => s.to_vec(),
        _ => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let nv = norm(&v0);
    v0.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(ncv + 1);
    basis.push(v0);
    let mut h = DMatrix::<f64>::zeros(ncv, ncv);
    let mut kept = 0usize;
    let mut matvecs = 0usize;
    let mut w = vec![0.0; n];

    for _restart in 0..=opts.max_restarts {
        // expand basis from `kept` to `ncv` columns
        let mut beta = 0.0;
        let mut size = ncv;
        for j in kept..ncv {
            op(&basis[j], &mut w);
            matvecs += 1;
            let coeffs = orthogonalize(&basis, &mut w);
            for (i, &c) in coeffs.iter().enumerate() {
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
            beta = norm(&w);
            let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if j + 1 == ncv {
                break;
            }
            if beta <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                // invariant subspace: continue with a fresh direction
                let mut r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                orthogonalize(&basis, &mut r);
                let nr = norm(&r);
                if nr < 1e-10 {
                    size = j + 1;
                    beta = 0.0;
                    break;
                }
                r.iter_mut().for_each(|x| *x /= nr);
                h[(j + 1, j)] = 0.0;
                h[(j, j + 1)] = 0.0;
                basis.push(r);
            } else {
                h[(j + 1, j)] = beta;
                h[(j, j + 1)] = beta;
                let v: Vec<f64> = w.iter().map(|x| x / beta).collect();
                basis.push(v);
            }
        }
        let hs = h.view((0, 0), (size, size)).into_owned();
        let (theta, s) = sorted_eigen(&hs);
        let hnorm = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let want = nev.min(size);
        let res: Vec<f64> = (0..want).map(|i| (beta * s[(size - 1, i)]).abs()).collect();
        let converged = (0..want).all(|i| res[i] <= opts.tol * hnorm.max(theta[i].abs()));
        if converged || size < ncv || size == n {
            let mut vectors = Vec::with_capacity(want);
            for i in 0..want {
                let mut y = vec![0.0; n];
                for (k, v) in basis.iter().take(size).enumerate() {
                    let c = s[(k, i)];
                    for (yi, vi) in y.iter_mut().zip(v) {
                        *yi += c * vi;
                    }
                }
                let ny = norm(&y);
                y.iter_mut().for_each(|x| *x /= ny);
                vectors.push(y);
            }
            return Ok(EigResult {
                values: theta[..want].to_vec(),
                vectors,
                residuals: res,
                matvecs,
            });
        }

        // thick restart: keep the smallest Ritz pairs
        let nconv = (0..want)
            .filter(|&i| res[i] <= opts.tol * hnorm.max(theta[i].abs()))
            .count();
        let keep = (nev + nconv.min((ncv - nev) / 2)).max(nev + (ncv - nev) / 3).min(ncv - 1);
        let residual_vec = w.iter().map(|x| x / beta).collect::<Vec<f64>>();
        let mut new_basis = Vec::with_capacity(ncv + 1);
        for i in 0..keep {
            let mut y = vec![0.0; n];
            for (k, v) in basis.iter().take(size).enumerate() {
                let c = s[(k, i)];
                for (yi, vi) in y.iter_mut().zip(v) {
                    *yi += c * vi;
                }
            }
            new_basis.push(y);
        }
        h.fill(0.0);
        for i in 0..keep {
            h[(i, i)] = theta[i];
            let b = beta * s[(size - 1, i)];
            h[(i, keep)] = b;
            h[(keep, i)] = b;
        }
        new_basis.push(residual_vec);
        basis = new_basis;
        kept = keep;
    }
    Err(Error::Eigen(format!(
        "no convergence after {} restarts ({} operator applications)",
        opts.max_restarts, matvecs
    )))
}
