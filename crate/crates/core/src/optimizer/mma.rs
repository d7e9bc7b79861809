//! Method of Moving Asymptotes for
//!
//! ```text
//! min f0(x) + a0 z + Σ (cᵢ yᵢ + dᵢ yᵢ²/2)
//! s.t. fᵢ(x) - aᵢ z - yᵢ ≤ 0,  xmin ≤ x ≤ xmax,  y, z ≥ 0
//! ```
//!
//! The convex separable subproblem is solved by a primal-dual interior
//! point method.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaSettings {
    /// Move limit as a fraction of the variable range.
    #[serde(rename = "move")]
    pub move_limit: f64,
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    pub albefa: f64,
    pub raa0: f64,
    /// Closest approach of an asymptote, as a fraction of the range. Near an
    /// interior optimum the iterates settle into a cycle of about half this
    /// width.
    pub asymin: f64,
    /// Penalty on the elastic variables `yᵢ`.
    pub c: f64,
}

impl Default for MmaSettings {
    fn default() -> Self {
        MmaSettings {
            move_limit: 0.2,
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            albefa: 0.1,
            raa0: 1e-5,
            asymin: 0.01,
            c: 1000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mma {
    n: usize,
    m: usize,
    pub settings: MmaSettings,
    iter: usize,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
}

/// Subproblem data in the notation of the interior point solver.
struct Sub<'a> {
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    p: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
    b: &'a [f64],
    c: &'a [f64],
}

#[derive(Clone)]
struct Primal {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Mma {
    pub fn new(n: usize, m: usize, settings: MmaSettings) -> Self {
        Mma {
            n,
            m,
            settings,
            iter: 0,
            low: vec![0.0; n],
            upp: vec![1.0; n],
            xold1: vec![],
            xold2: vec![],
        }
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// One MMA step; constraints are feasible when `fval ≤ 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        x: &[f64],
        xmin: &[f64],
        xmax: &[f64],
        df0dx: &[f64],
        fval: &[f64],
        dfdx: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        for (len, what) in [(x.len(), n), (xmin.len(), n), (xmax.len(), n), (df0dx.len(), n)] {
            if len != what {
                return Err(Error::Dimension { expected: what, got: len });
            }
        }
        if fval.len() != m || dfdx.len() != m || dfdx.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension { expected: m, got: fval.len() });
        }
        let st = self.settings.clone();
        self.iter += 1;

        if self.iter <= 2 {
            for j in 0..n {
                let r = xmax[j] - xmin[j];
                self.low[j] = x[j] - st.asyinit * r;
                self.upp[j] = x[j] + st.asyinit * r;
            }
        } else {
            for j in 0..n {
                let r = xmax[j] - xmin[j];
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz > 0.0 {
                    st.asyincr
                } else if zzz < 0.0 {
                    st.asydecr
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.max(x[j] - 10.0 * r).min(x[j] - st.asymin * r);
                self.upp[j] = upp.min(x[j] + 10.0 * r).max(x[j] + st.asymin * r);
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = DMatrix::<f64>::zeros(m, n);
        let mut qm = DMatrix::<f64>::zeros(m, n);
        let mut b = vec![0.0; m];
        for j in 0..n {
            let r = xmax[j] - xmin[j];
            alfa[j] = (self.low[j] + st.albefa * (x[j] - self.low[j]))
                .max(x[j] - st.move_limit * r)
                .max(xmin[j]);
            beta[j] = (self.upp[j] - st.albefa * (self.upp[j] - x[j]))
                .min(x[j] + st.move_limit * r)
                .min(xmax[j]);
            let xmami = r.max(1e-5);
            let ux1 = self.upp[j] - x[j];
            let xl1 = x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let dp = df0dx[j].max(0.0);
            let dq = (-df0dx[j]).max(0.0);
            let pq = 0.001 * (dp + dq) + st.raa0 / xmami;
            p0[j] = (dp + pq) * ux2;
            q0[j] = (dq + pq) * xl2;
            for i in 0..m {
                let g = dfdx[i][j];
                let (dp, dq) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (dp + dq) + st.raa0 / xmami;
                pm[(i, j)] = (dp + pq) * ux2;
                qm[(i, j)] = (dq + pq) * xl2;
                b[i] += pm[(i, j)] / ux1 + qm[(i, j)] / xl1;
            }
        }
        for i in 0..m {
            b[i] -= fval[i];
        }
        let c = vec![st.c; m];
        let sub = Sub {
            low: &self.low,
            upp: &self.upp,
            alfa: &alfa,
            beta: &beta,
            p0: &p0,
            q0: &q0,
            p: &pm,
            q: &qm,
            b: &b,
            c: &c,
        };
        let sol = subsolve(&sub, n, m)?;
        if sol.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimizer("MMA subproblem produced non-finite design".into()));
        }
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        if self.xold2.is_empty() {
            self.xold2 = x.to_vec();
        }
        Ok(sol.x)
    }
}

fn norm2(parts: &[&[f64]]) -> (f64, f64) {
    let mut s = 0.0;
    let mut mx = 0.0f64;
    for p in parts {
        for v in p.iter() {
            s += v * v;
            mx = mx.max(v.abs());
        }
    }
    (s.sqrt(), mx)
}

/// Residual norms of the perturbed KKT conditions.
fn residual(sb: &Sub, v: &Primal, epsi: f64) -> (f64, f64) {
    let n = v.x.len();
    let m = v.y.len();
    let (plam, qlam, gvec) = lam_terms(sb, v);
    let mut rex = vec![0.0; n];
    let mut rexsi = vec![0.0; n];
    let mut reeta = vec![0.0; n];
    for j in 0..n {
        let ux1 = sb.upp[j] - v.x[j];
        let xl1 = v.x[j] - sb.low[j];
        rex[j] = plam[j] / (ux1 * ux1) - qlam[j] / (xl1 * xl1) - v.xsi[j] + v.eta[j];
        rexsi[j] = v.xsi[j] * (v.x[j] - sb.alfa[j]) - epsi;
        reeta[j] = v.eta[j] * (sb.beta[j] - v.x[j]) - epsi;
    }
    let mut rey = vec![0.0; m];
    let mut relam = vec![0.0; m];
    let mut remu = vec![0.0; m];
    let mut res = vec![0.0; m];
    for i in 0..m {
        rey[i] = sb.c[i] - v.mu[i] - v.lam[i];
        // a = 0: the z variable couples to no constraint
        relam[i] = gvec[i] - v.y[i] + v.s[i] - sb.b[i];
        remu[i] = v.mu[i] * v.y[i] - epsi;
        res[i] = v.lam[i] * v.s[i] - epsi;
    }
    let rez = [1.0 - v.zet];
    let rezet = [v.zet * v.z - epsi];
    norm2(&[&rex, &rey, &rez, &relam, &rexsi, &reeta, &remu, &rezet, &res])
}

fn lam_terms(sb: &Sub, v: &Primal) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = v.x.len();
    let m = v.y.len();
    let mut plam = sb.p0.to_vec();
    let mut qlam = sb.q0.to_vec();
    let mut gvec = vec![0.0; m];
    for j in 0..n {
        let ux1 = sb.upp[j] - v.x[j];
        let xl1 = v.x[j] - sb.low[j];
        for i in 0..m {
            plam[j] += sb.p[(i, j)] * v.lam[i];
            qlam[j] += sb.q[(i, j)] * v.lam[i];
            gvec[i] += sb.p[(i, j)] / ux1 + sb.q[(i, j)] / xl1;
        }
    }
    (plam, qlam, gvec)
}

/// Primal-dual Newton solve of the MMA subproblem with `a0 = 1`, `a = 0`,
/// `d = 0`.
fn subsolve(sb: &Sub, n: usize, m: usize) -> Result<Primal> {
    let epsimin = 1e-7;
    let mut epsi = 1.0;
    let mut v = Primal {
        x: (0..n).map(|j| 0.5 * (sb.alfa[j] + sb.beta[j])).collect(),
        y: vec![1.0; m],
        z: 1.0,
        lam: vec![1.0; m],
        xsi: vec![],
        eta: vec![],
        mu: sb.c.iter().map(|&c| (0.5 * c).max(1.0)).collect(),
        zet: 1.0,
        s: vec![1.0; m],
    };
    v.xsi = (0..n).map(|j| (1.0 / (v.x[j] - sb.alfa[j])).max(1.0)).collect();
    v.eta = (0..n).map(|j| (1.0 / (sb.beta[j] - v.x[j])).max(1.0)).collect();

    while epsi > epsimin {
        let (mut resnorm, mut resmax) = residual(sb, &v, epsi);
        let mut ittt = 0;
        while resmax > 0.9 * epsi && ittt < 200 {
            ittt += 1;
            let (plam, qlam, gvec) = lam_terms(sb, &v);
            let mut gg = DMatrix::<f64>::zeros(m, n);
            let mut delx = vec![0.0; n];
            let mut diagx = vec![0.0; n];
            for j in 0..n {
                let ux1 = sb.upp[j] - v.x[j];
                let xl1 = v.x[j] - sb.low[j];
                let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
                for i in 0..m {
                    gg[(i, j)] = sb.p[(i, j)] / ux2 - sb.q[(i, j)] / xl2;
                }
                let xa = v.x[j] - sb.alfa[j];
                let bx = sb.beta[j] - v.x[j];
                delx[j] = plam[j] / ux2 - qlam[j] / xl2 - epsi / xa + epsi / bx;
                diagx[j] = 2.0 * (plam[j] / (ux2 * ux1) + qlam[j] / (xl2 * xl1))
                    + v.xsi[j] / xa
                    + v.eta[j] / bx;
            }
            let dely: Vec<f64> = (0..m)
                .map(|i| sb.c[i] - v.lam[i] - epsi / v.y[i])
                .collect();
            let delz = 1.0 - epsi / v.z;
            let dellam: Vec<f64> = (0..m)
                .map(|i| gvec[i] - v.y[i] - sb.b[i] + epsi / v.lam[i])
                .collect();
            let diagy: Vec<f64> = (0..m).map(|i| v.mu[i] / v.y[i]).collect();
            let diaglamyi: Vec<f64> = (0..m)
                .map(|i| v.s[i] / v.lam[i] + 1.0 / diagy[i])
                .collect();

            let (dx, dlam, dz) = if m < n {
                // (m+1) system in (dlam, dz)
                let mut aa = DMatrix::<f64>::zeros(m + 1, m + 1);
                let mut bb = DVector::<f64>::zeros(m + 1);
                for i in 0..m {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += gg[(i, j)] * delx[j] / diagx[j];
                    }
                    bb[i] = dellam[i] + dely[i] / diagy[i] - s;
                    for k in 0..=i {
                        let mut a = 0.0;
                        for j in 0..n {
                            a += gg[(i, j)] * gg[(k, j)] / diagx[j];
                        }
                        aa[(i, k)] = a;
                        aa[(k, i)] = a;
                    }
                    aa[(i, i)] += diaglamyi[i];
                }
                aa[(m, m)] = -v.zet / v.z;
                bb[m] = delz;
                let sol = aa
                    .lu()
                    .solve(&bb)
                    .ok_or_else(|| Error::Optimizer("singular MMA Newton system".into()))?;
                let dlam: Vec<f64> = (0..m).map(|i| sol[i]).collect();
                let dz = sol[m];
                let dx: Vec<f64> = (0..n)
                    .map(|j| {
                        let gl: f64 = (0..m).map(|i| gg[(i, j)] * dlam[i]).sum();
                        -delx[j] / diagx[j] - gl / diagx[j]
                    })
                    .collect();
                (dx, dlam, dz)
            } else {
                // (n+1) system in (dx, dz)
                let dellamyi: Vec<f64> = (0..m).map(|i| dellam[i] + dely[i] / diagy[i]).collect();
                let mut aa = DMatrix::<f64>::zeros(n + 1, n + 1);
                let mut bb = DVector::<f64>::zeros(n + 1);
                for j in 0..n {
                    for k in 0..n {
                        let mut a = 0.0;
                        for i in 0..m {
                            a += gg[(i, j)] * gg[(i, k)] / diaglamyi[i];
                        }
                        aa[(j, k)] = a;
                    }
                    aa[(j, j)] += diagx[j];
                    let bx: f64 = (0..m).map(|i| gg[(i, j)] * dellamyi[i] / diaglamyi[i]).sum();
                    bb[j] = -(delx[j] + bx);
                }
                aa[(n, n)] = v.zet / v.z;
                bb[n] = -delz;
                let sol = aa
                    .lu()
                    .solve(&bb)
                    .ok_or_else(|| Error::Optimizer("singular MMA Newton system".into()))?;
                let dx: Vec<f64> = (0..n).map(|j| sol[j]).collect();
                let dz = sol[n];
                let dlam = (0..m)
                    .map(|i| {
                        let gx: f64 = (0..n).map(|j| gg[(i, j)] * dx[j]).sum();
                        (gx + dellamyi[i]) / diaglamyi[i]
                    })
                    .collect();
                (dx, dlam, dz)
            };

            let dy: Vec<f64> = (0..m).map(|i| (-dely[i] + dlam[i]) / diagy[i]).collect();
            let dxsi: Vec<f64> = (0..n)
                .map(|j| {
                    let xa = v.x[j] - sb.alfa[j];
                    -v.xsi[j] + epsi / xa - v.xsi[j] * dx[j] / xa
                })
                .collect();
            let deta: Vec<f64> = (0..n)
                .map(|j| {
                    let bx = sb.beta[j] - v.x[j];
                    -v.eta[j] + epsi / bx + v.eta[j] * dx[j] / bx
                })
                .collect();
            let dmu: Vec<f64> = (0..m)
                .map(|i| -v.mu[i] + epsi / v.y[i] - v.mu[i] * dy[i] / v.y[i])
                .collect();
            let dzet = -v.zet + epsi / v.z - v.zet * dz / v.z;
            let ds: Vec<f64> = (0..m)
                .map(|i| -v.s[i] + epsi / v.lam[i] - v.s[i] * dlam[i] / v.lam[i])
                .collect();

            // fraction-to-boundary step length
            let mut stm = 1.0f64;
            let step = |val: f64, d: f64| -1.01 * d / val;
            for i in 0..m {
                stm = stm
                    .max(step(v.y[i], dy[i]))
                    .max(step(v.lam[i], dlam[i]))
                    .max(step(v.mu[i], dmu[i]))
                    .max(step(v.s[i], ds[i]));
            }
            stm = stm.max(step(v.z, dz)).max(step(v.zet, dzet));
            for j in 0..n {
                stm = stm
                    .max(step(v.xsi[j], dxsi[j]))
                    .max(step(v.eta[j], deta[j]))
                    .max(-1.01 * dx[j] / (v.x[j] - sb.alfa[j]))
                    .max(1.01 * dx[j] / (sb.beta[j] - v.x[j]));
            }
            let mut steg = 1.0 / stm;

            let old = v.clone();
            let mut itto = 0;
            let mut resinew = 2.0 * resnorm;
            let mut newmax = resmax;
            while resinew > resnorm && itto < 50 {
                itto += 1;
                let ax = |a: &[f64], d: &[f64]| -> Vec<f64> {
                    a.iter().zip(d).map(|(p, q)| p + steg * q).collect()
                };
                v.x = ax(&old.x, &dx);
                v.y = ax(&old.y, &dy);
                v.z = old.z + steg * dz;
                v.lam = ax(&old.lam, &dlam);
                v.xsi = ax(&old.xsi, &dxsi);
                v.eta = ax(&old.eta, &deta);
                v.mu = ax(&old.mu, &dmu);
                v.zet = old.zet + steg * dzet;
                v.s = ax(&old.s, &ds);
                let (rn, rm) = residual(sb, &v, epsi);
                resinew = rn;
                newmax = rm;
                steg /= 2.0;
            }
            resnorm = resinew;
            resmax = newmax;
        }
        epsi *= 0.1;
    }
    Ok(v)
}
