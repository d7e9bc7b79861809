//! Linear equilibrium and linearized buckling analysis.
//!
//! Free DOFs are renumbered node by node along the short grid direction so
//! the reduced matrices stay banded. Buckling modes solve
//! `Kσ φ = μ K φ`; the load factors are `λ = -1/μ` for `μ < 0`, and modes
//! are normalized to `φᵀ Kσ φ = -1` (equivalently `φᵀ K φ = 1/|μ|`).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::elements::{ElementKind, ElementTemplate, Material, Vector8};
use crate::error::{Error, Result};
use crate::field::InterpSpec;
use crate::linalg::{band, smallest_eigs, BandCholesky, EigOptions, SymBand};
use crate::mesh::{BoundarySpec, GridMesh};

const FIXED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigSolver {
    /// Dense below [`EigConfig::dense_threshold`] free DOFs, iterative above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigConfig {
    /// Number of buckling modes requested.
    pub nev: usize,
    pub solver: EigSolver,
    pub dense_threshold: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EigConfig {
    fn default() -> Self {
        EigConfig {
            nev: 12,
            solver: EigSolver::Auto,
            dense_threshold: 600,
            tol: 1e-12,
            seed: 0x5eed,
        }
    }
}

/// Static solution on the reduced system, with the factor kept for adjoint
/// solves.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub k: SymBand,
    pub chol: BandCholesky,
    /// Global displacements, zero at fixed DOFs.
    pub u: Vec<f64>,
    pub compliance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BucklingSpectrum {
    /// Ascending, all negative.
    pub mu: Vec<f64>,
    /// `-1/μ`, ascending.
    pub lambda: Vec<f64>,
    /// Global mode vectors with `φᵀ Kσ φ = -1`.
    pub modes: Vec<Vec<f64>>,
    /// `‖Kσ φ - μ K φ‖ / ‖μ K φ‖`.
    pub residuals: Vec<f64>,
    pub matvecs: usize,
    pub dense: bool,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub equilibrium: Equilibrium,
    pub spectrum: BucklingSpectrum,
}

/// Finite element model on a regular grid with fixed supports and loads.
#[derive(Debug, Clone)]
pub struct FeModel {
    pub mesh: GridMesh,
    pub bc: BoundarySpec,
    pub template: ElementTemplate,
    free: Vec<usize>,
    red_of: Vec<usize>,
    elem_red: Vec<[usize; 8]>,
    hb: usize,
    f: Vec<f64>,
}

impl FeModel {
    /// Element matrices use unit modulus; the interpolation supplies `E`.
    pub fn new(mesh: GridMesh, bc: BoundarySpec, kind: ElementKind, nu: f64) -> Result<Self> {
        bc.validate(&mesh)?;
        let material = Material::new(1.0, nu)?;
        let template = ElementTemplate::new(kind, material, mesh.lx, mesh.ly, mesh.t)?;

        let (nx, ny) = (mesh.nelx + 1, mesh.nely + 1);
        let mut order: Vec<usize> = Vec::with_capacity(mesh.n_nodes());
        if mesh.nely <= mesh.nelx {
            order.extend(0..mesh.n_nodes());
        } else {
            for iy in 0..ny {
                for ix in 0..nx {
                    order.push(mesh.node(ix, iy));
                }
            }
        }
        let mut red_of = vec![FIXED; mesh.n_dofs()];
        let mut free = Vec::with_capacity(mesh.n_dofs() - bc.fixed_dofs.len());
        for n in order {
            for d in [2 * n, 2 * n + 1] {
                if !bc.fixed_dofs.contains(&d) {
                    red_of[d] = free.len();
                    free.push(d);
                }
            }
        }
        if free.is_empty() {
            return Err(Error::Config("all DOFs are prescribed".into()));
        }
        let mut hb = 0;
        let elem_red: Vec<[usize; 8]> = (0..mesh.n_elems())
            .map(|e| {
                let dofs = mesh.dofs_of(e);
                let r = dofs.map(|d| red_of[d]);
                let act = r.iter().copied().filter(|&v| v != FIXED);
                if let (Some(lo), Some(hi)) = (act.clone().min(), act.max()) {
                    hb = hb.max(hi - lo);
                }
                r
            })
            .collect();
        let f = bc.load_vector(&mesh);
        Ok(FeModel {
            mesh,
            bc,
            template,
            free,
            red_of,
            elem_red,
            hb,
            f,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    /// Global load vector.
    pub fn load(&self) -> &[f64] {
        &self.f
    }

    pub fn restrict(&self, global: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| global[d]).collect()
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.mesh.n_dofs()];
        for (&d, &v) in self.free.iter().zip(reduced) {
            g[d] = v;
        }
        g
    }

    /// Reduced index of a global DOF, `None` if prescribed.
    pub fn reduced_index(&self, dof: usize) -> Option<usize> {
        self.red_of.get(dof).copied().filter(|&r| r != FIXED)
    }

    pub fn element_vector(&self, global: &[f64], e: usize) -> Vector8 {
        let dofs = self.mesh.dofs_of(e);
        Vector8::from_fn(|i, _| global[dofs[i]])
    }

    fn check_density(&self, xbar: &[f64]) -> Result<()> {
        if xbar.len() != self.mesh.n_elems() {
            return Err(Error::Dimension {
                expected: self.mesh.n_elems(),
                got: xbar.len(),
            });
        }
        Ok(())
    }

    fn scatter(&self, a: &mut SymBand, e: usize, m: &crate::elements::Matrix8, scale: f64) {
        let r = &self.elem_red[e];
        for i in 0..8 {
            let ri = r[i];
            if ri == FIXED {
                continue;
            }
            for j in 0..8 {
                let rj = r[j];
                if rj == FIXED || rj > ri {
                    continue;
                }
                a.add_lower(ri, rj, scale * m[(i, j)]);
            }
        }
    }

    /// Reduced `K(x̄) = Σ h1(x̄ₑ) k0`.
    pub fn assemble_stiffness(&self, xbar: &[f64], interp: &InterpSpec) -> Result<SymBand> {
        self.check_density(xbar)?;
        let mut k = SymBand::zeros(self.n_free(), self.hb);
        let k0 = self.template.k0;
        for (e, &x) in xbar.iter().enumerate() {
            self.scatter(&mut k, e, &k0, interp.h1(x));
        }
        Ok(k)
    }

    /// Reduced `Kσ(x̄, u) = Σ h2(x̄ₑ) g0(uₑ)`.
    pub fn assemble_stress_stiffness(
        &self,
        xbar: &[f64],
        u: &[f64],
        interp: &InterpSpec,
    ) -> Result<SymBand> {
        self.check_density(xbar)?;
        let mut ks = SymBand::zeros(self.n_free(), self.hb);
        for (e, &x) in xbar.iter().enumerate() {
            let h = interp.h2(x);
            if h == 0.0 {
                continue;
            }
            let g = self.template.g0(&self.element_vector(u, e));
            self.scatter(&mut ks, e, &g, h);
        }
        Ok(ks)
    }

    pub fn factor(&self, k: &SymBand) -> Result<BandCholesky> {
        k.cholesky()
            .map_err(|(i, pivot)| band::not_pd(self.free[i], pivot))
    }

    pub fn solve_equilibrium(&self, xbar: &[f64], interp: &InterpSpec) -> Result<Equilibrium> {
        let k = self.assemble_stiffness(xbar, interp)?;
        let chol = self.factor(&k)?;
        let ur = chol.solve(&self.restrict(&self.f));
        let u = self.expand(&ur);
        let compliance = self.f.iter().zip(&u).map(|(a, b)| a * b).sum();
        Ok(Equilibrium {
            k,
            chol,
            u,
            compliance,
        })
    }

    /// Lowest buckling modes of the prestressed structure. `start` is an
    /// optional global vector seeding the Krylov space (e.g. the previous
    /// fundamental mode).
    pub fn buckling(
        &self,
        eq: &Equilibrium,
        xbar: &[f64],
        interp: &InterpSpec,
        cfg: &EigConfig,
        start: Option<&[f64]>,
    ) -> Result<BucklingSpectrum> {
        let n = self.n_free();
        let ks = self.assemble_stress_stiffness(xbar, &eq.u, interp)?;
        let dense = match cfg.solver {
            EigSolver::Dense => true,
            EigSolver::Iterative => false,
            EigSolver::Auto => n <= cfg.dense_threshold,
        };
        let chol = &eq.chol;
        let (theta, ys, matvecs) = if dense {
            let (t, y) = dense_pencil(chol, &ks, cfg.nev);
            (t, y, 0)
        } else {
            let op = |x: &[f64], y: &mut [f64]| {
                let mut z = x.to_vec();
                chol.backward(&mut z);
                ks.matvec(&z, y);
                chol.forward(y);
            };
            let y0 = start.map(|s| chol.mul_lt(&self.restrict(s)));
            let opts = EigOptions {
                tol: cfg.tol,
                seed: cfg.seed,
                ..EigOptions::default()
            };
            let r = smallest_eigs(n, cfg.nev, op, y0.as_deref(), &opts)?;
            (r.values, r.vectors, r.matvecs)
        };

        let mut spec = BucklingSpectrum {
            matvecs,
            dense,
            ..BucklingSpectrum::default()
        };
        let mut kphi = vec![0.0; n];
        let mut sphi = vec![0.0; n];
        for (mu, y) in theta.into_iter().zip(ys) {
            if !(mu < 0.0) {
                break;
            }
            let mut phi = y;
            chol.backward(&mut phi);
            let s = 1.0 / (-mu).sqrt();
            phi.iter_mut().for_each(|v| *v *= s);
            let imax = phi
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, v)| {
                    if v.abs() > bv {
                        (i, v.abs())
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            if phi[imax] < 0.0 {
                phi.iter_mut().for_each(|v| *v = -*v);
            }
            eq.k.matvec(&phi, &mut kphi);
            ks.matvec(&phi, &mut sphi);
            let num: f64 = sphi
                .iter()
                .zip(&kphi)
                .map(|(a, b)| (a - mu * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den = (-mu) * kphi.iter().map(|v| v * v).sum::<f64>().sqrt();
            spec.residuals.push(num / den);
            spec.mu.push(mu);
            spec.lambda.push(-1.0 / mu);
            spec.modes.push(self.expand(&phi));
        }
        Ok(spec)
    }

    pub fn analyze(&self, xbar: &[f64], interp: &InterpSpec, cfg: &EigConfig) -> Result<Analysis> {
        let equilibrium = self.solve_equilibrium(xbar, interp)?;
        let spectrum = self.buckling(&equilibrium, xbar, interp, cfg, None)?;
        Ok(Analysis {
            equilibrium,
            spectrum,
        })
    }

    /// Per-element `φₑᵀ k0 φₑ` (unit modulus, no density weighting).
    pub fn element_energies(&self, v: &[f64]) -> Vec<f64> {
        let k0 = &self.template.k0;
        (0..self.mesh.n_elems())
            .map(|e| {
                let ve = self.element_vector(v, e);
                (ve.transpose() * k0 * ve)[(0, 0)]
            })
            .collect()
    }

    /// Flags modes whose strain energy `h1(x̄ₑ) φₑᵀk0φₑ` sits mostly in
    /// void (`x̄ < void_level`): fraction above `fraction`.
    pub fn flag_pseudo_modes(
        &self,
        xbar: &[f64],
        interp: &InterpSpec,
        spec: &BucklingSpectrum,
        void_level: f64,
        fraction: f64,
    ) -> Vec<bool> {
        spec.modes
            .iter()
            .map(|phi| {
                let en: Vec<f64> = self
                    .element_energies(phi)
                    .into_iter()
                    .zip(xbar)
                    .map(|(e, &x)| interp.h1(x) * e)
                    .collect();
                let total: f64 = en.iter().sum();
                let void: f64 = en
                    .iter()
                    .zip(xbar)
                    .filter(|(_, &x)| x < void_level)
                    .map(|(e, _)| e)
                    .sum();
                total > 0.0 && void / total > fraction
            })
            .collect()
    }
}

/// Smallest eigenpairs of `L⁻¹ Kσ L⁻ᵀ` by dense decomposition.
fn dense_pencil(chol: &BandCholesky, ks: &SymBand, nev: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = chol.dim();
    let mut m = ks.to_dense();
    for mut c in m.column_iter_mut() {
        chol.forward(c.as_mut_slice());
    }
    let mut a = m.transpose();
    for mut c in a.column_iter_mut() {
        chol.forward(c.as_mut_slice());
    }
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order.truncate(nev);
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

/// Dense generalized symmetric pencil `(Kσ, K)` reference used in tests.
#[doc(hidden)]
pub fn dense_reference(k: &SymBand, ks: &SymBand) -> Vec<f64> {
    let kd: DMatrix<f64> = k.to_dense();
    let l = kd.cholesky().expect("K positive definite").l();
    let li = l.try_inverse().expect("invertible factor");
    let a = &li * ks.to_dense() * li.transpose();
    let mut v: Vec<f64> = SymmetricEigen::new((&a + a.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, column_benchmark_spec, COLUMN_MODULUS};

    fn column(nelx: usize, nely: usize, kind: ElementKind) -> (FeModel, InterpSpec) {
        let (mesh, bc) = column_benchmark_spec(nelx, nely).unwrap();
        let model = FeModel::new(mesh, bc, kind, 0.3).unwrap();
        let interp = InterpSpec::new(COLUMN_MODULUS * 1e-9, COLUMN_MODULUS, 1.0).unwrap();
        (model, interp)
    }

    #[test]
    fn bandwidth_follows_short_direction() {
        let (wide, _) = column(40, 4, ElementKind::Q4);
        let mesh = build_grid(4, 40, 1.0, 1.0, 1.0).unwrap();
        let mut bc = BoundarySpec::default();
        bc.fix_node(0);
        bc.fix_node(1);
        let tall = FeModel::new(mesh, bc, ElementKind::Q4, 0.3).unwrap();
        assert!(wide.half_bandwidth() <= 2 * 5 + 3);
        assert!(tall.half_bandwidth() <= 2 * 5 + 3);
    }

    #[test]
    fn axial_column_compliance() {
        let (model, interp) = column(20, 2, ElementKind::Q4);
        let eq = model.solve_equilibrium(&vec![1.0; 40], &interp).unwrap();
        // uniform compression: δ = F L / (E A), J = F δ
        let f = crate::mesh::COLUMN_LOAD;
        let a = crate::mesh::COLUMN_HEIGHT * crate::mesh::COLUMN_THICKNESS;
        let j = f * f * crate::mesh::COLUMN_LENGTH / (COLUMN_MODULUS * a);
        // lateral contraction is restrained at the clamp, so slightly stiffer
        assert!(eq.compliance < j && eq.compliance > 0.97 * j, "{} vs {j}", eq.compliance);
    }

    #[test]
    fn dense_and_iterative_agree() {
        let (model, interp) = column(16, 4, ElementKind::Q4);
        let x = vec![1.0; 64];
        let eq = model.solve_equilibrium(&x, &interp).unwrap();
        let mut cfg = EigConfig { nev: 6, solver: EigSolver::Dense, ..EigConfig::default() };
        let d = model.buckling(&eq, &x, &interp, &cfg, None).unwrap();
        cfg.solver = EigSolver::Iterative;
        let it = model.buckling(&eq, &x, &interp, &cfg, None).unwrap();
        assert!(d.dense && !it.dense);
        assert_eq!(d.lambda.len(), 6);
        for i in 0..6 {
            assert!((d.lambda[i] - it.lambda[i]).abs() < 1e-9 * d.lambda[i]);
            assert!(d.residuals[i] < 1e-8 && it.residuals[i] < 1e-8);
        }
        let ks = model.assemble_stress_stiffness(&x, &eq.u, &interp).unwrap();
        let reference = dense_reference(&eq.k, &ks);
        for i in 0..6 {
            assert!((reference[i] - d.mu[i]).abs() < 1e-9 * d.mu[i].abs());
        }
    }

    #[test]
    fn mode_normalization_and_orthogonality() {
        let (model, interp) = column(20, 3, ElementKind::Q6);
        let x = vec![1.0; 60];
        let a = model
            .analyze(&x, &interp, &EigConfig { nev: 5, ..EigConfig::default() })
            .unwrap();
        let ks = model
            .assemble_stress_stiffness(&x, &a.equilibrium.u, &interp)
            .unwrap();
        let modes: Vec<Vec<f64>> = a.spectrum.modes.iter().map(|m| model.restrict(m)).collect();
        let mut tmp = vec![0.0; model.n_free()];
        for i in 0..modes.len() {
            ks.matvec(&modes[i], &mut tmp);
            for j in 0..modes.len() {
                let v: f64 = modes[j].iter().zip(&tmp).map(|(a, b)| a * b).sum();
                let expect = if i == j { -1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-8, "({i},{j}) {v}");
            }
            let m = &modes[i];
            let imax = (0..m.len()).max_by(|&a, &b| m[a].abs().total_cmp(&m[b].abs())).unwrap();
            assert!(m[imax] > 0.0);
        }
    }

    #[test]
    fn slender_column_matches_euler() {
        let (model, interp) = column(40, 2, ElementKind::Q6);
        let a = model
            .analyze(&vec![1.0; 80], &interp, &EigConfig { nev: 2, ..EigConfig::default() })
            .unwrap();
        let ei = COLUMN_MODULUS * crate::mesh::COLUMN_THICKNESS / 12.0;
        let pc = std::f64::consts::PI.powi(2) * ei / (4.0 * 100.0);
        let p1 = a.spectrum.lambda[0] * crate::mesh::COLUMN_LOAD;
        assert!((p1 / pc - 1.0).abs() < 0.02, "{p1} vs {pc}");
    }

    #[test]
    fn tension_is_far_from_buckling() {
        let (compressed, interp) = column(8, 2, ElementKind::Q4);
        let (mesh, mut bc) = column_benchmark_spec(8, 2).unwrap();
        for l in &mut bc.loads {
            l.1 = -l.1;
        }
        let pulled = FeModel::new(mesh, bc, ElementKind::Q4, 0.3).unwrap();
        let cfg = EigConfig::default();
        let x = vec![1.0; 16];
        let lc = compressed.analyze(&x, &interp, &cfg).unwrap().spectrum.lambda[0];
        let lt = pulled.analyze(&x, &interp, &cfg).unwrap().spectrum;
        // only local compression near the clamp can buckle a pulled bar
        assert!(lt.lambda.iter().all(|&l| l > 20.0 * lc));
    }

    #[test]
    fn disconnected_structure_reports_dof() {
        let mesh = build_grid(2, 1, 1.0, 1.0, 1.0).unwrap();
        let bc = BoundarySpec::default();
        let model = FeModel::new(mesh, bc, ElementKind::Q4, 0.3).unwrap();
        let interp = InterpSpec::new(1e-6, 1.0, 1.0).unwrap();
        match model.solve_equilibrium(&[1.0, 1.0], &interp) {
            Err(Error::NotPositiveDefinite { dof, .. }) => assert!(dof < 12),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn density_length_checked() {
        let (model, interp) = column(4, 1, ElementKind::Q4);
        assert!(matches!(
            model.solve_equilibrium(&[1.0; 3], &interp),
            Err(Error::Dimension { expected: 4, got: 3 })
        ));
    }
}
