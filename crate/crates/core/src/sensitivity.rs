//! Design sensitivities of compliance and buckling eigenvalues with respect
//! to the physical densities `x̄`.
//!
//! With `φᵀ Kσ φ = -1` the load-factor gradient is
//!
//! ```text
//! dλ/dx̄ₑ = φₑᵀ (h1' k0 + λ h2' g0(uₑ)) φₑ - λ h1' vₑᵀ k0 uₑ,   K v = r,
//! ```
//!
//! where `r` collects `h2 φₑᵀ (∂g0/∂uₑ[j]) φₑ`. The first part is the
//! frequency-like term, the second the adjoint term accounting for the
//! design dependence of the prestress. `dμ/dx̄ = μ² dλ/dx̄`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{BucklingSpectrum, Equilibrium, FeModel};
use crate::elements::Vector8;
use crate::field::InterpSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensMode {
    Consistent,
    /// Frequency-like term only.
    Inconsistent,
}

/// Gradient of one buckling eigenvalue, split into its two parts.
#[derive(Debug, Clone)]
pub struct EigSensitivity {
    pub lambda: f64,
    pub mu: f64,
    pub frequency: Vec<f64>,
    pub adjoint: Vec<f64>,
    /// Global adjoint vector `v`.
    pub v: Vec<f64>,
    pub mode: SensMode,
}

impl EigSensitivity {
    pub fn dlambda(&self) -> Vec<f64> {
        match self.mode {
            SensMode::Consistent => self
                .frequency
                .iter()
                .zip(&self.adjoint)
                .map(|(a, b)| a + b)
                .collect(),
            SensMode::Inconsistent => self.frequency.clone(),
        }
    }

    pub fn dmu(&self) -> Vec<f64> {
        let m2 = self.mu * self.mu;
        self.dlambda().into_iter().map(|g| m2 * g).collect()
    }
}

/// `dJ/dx̄ₑ = -h1'(x̄ₑ) uₑᵀ k0 uₑ`.
pub fn compliance_sens(model: &FeModel, u: &[f64], xbar: &[f64], interp: &InterpSpec) -> Vec<f64> {
    model
        .element_energies(u)
        .into_iter()
        .zip(xbar)
        .map(|(en, &x)| -interp.dh1(x) * en)
        .collect()
}

/// Per-element `rₑ[j] = φₑᵀ g0(e_j) φₑ` (without `h2`).
fn element_rhs(model: &FeModel, phie: &Vector8) -> [f64; 8] {
    let mut r = [0.0; 8];
    for (j, rj) in r.iter_mut().enumerate() {
        *rj = (phie.transpose() * model.template.g0_basis(j) * phie)[(0, 0)];
    }
    r
}

/// Global `r = ∇ᵤ (φᵀ Kσ(u) φ)`, zero at prescribed DOFs.
pub fn adjoint_rhs(model: &FeModel, phi: &[f64], xbar: &[f64], interp: &InterpSpec) -> Vec<f64> {
    let mut r = vec![0.0; model.mesh.n_dofs()];
    for (e, &x) in xbar.iter().enumerate() {
        let h = interp.h2(x);
        if h == 0.0 {
            continue;
        }
        let re = element_rhs(model, &model.element_vector(phi, e));
        for (k, &d) in model.mesh.dofs_of(e).iter().enumerate() {
            r[d] += h * re[k];
        }
    }
    for &d in &model.bc.fixed_dofs {
        r[d] = 0.0;
    }
    r
}

/// Solves `K v = r` with the equilibrium factor.
pub fn adjoint_solve(model: &FeModel, eq: &Equilibrium, r: &[f64]) -> Vec<f64> {
    let vr = eq.chol.solve(&model.restrict(r));
    model.expand(&vr)
}

/// Gradient of mode `i` of `spec`.
pub fn eig_sens(
    model: &FeModel,
    eq: &Equilibrium,
    spec: &BucklingSpectrum,
    i: usize,
    xbar: &[f64],
    interp: &InterpSpec,
    mode: SensMode,
) -> EigSensitivity {
    let lambda = spec.lambda[i];
    let phi = &spec.modes[i];
    let k0 = &model.template.k0;
    let m = model.mesh.n_elems();

    let mut frequency = vec![0.0; m];
    for (e, &x) in xbar.iter().enumerate() {
        let pe = model.element_vector(phi, e);
        let ue = model.element_vector(&eq.u, e);
        let kterm = (pe.transpose() * k0 * pe)[(0, 0)];
        let re = element_rhs(model, &pe);
        let gterm: f64 = re.iter().zip(ue.iter()).map(|(a, b)| a * b).sum();
        frequency[e] = interp.dh1(x) * kterm + lambda * interp.dh2(x) * gterm;
    }

    let (adjoint, v) = match mode {
        SensMode::Consistent => {
            let v = adjoint_solve(model, eq, &adjoint_rhs(model, phi, xbar, interp));
            let adj = xbar
                .iter()
                .enumerate()
                .map(|(e, &x)| {
                    let ve = model.element_vector(&v, e);
                    let ue = model.element_vector(&eq.u, e);
                    -lambda * interp.dh1(x) * (ve.transpose() * k0 * ue)[(0, 0)]
                })
                .collect();
            (adj, v)
        }
        SensMode::Inconsistent => (vec![0.0; m], vec![0.0; model.mesh.n_dofs()]),
    };
    EigSensitivity {
        lambda,
        mu: spec.mu[i],
        frequency,
        adjoint,
        v,
        mode,
    }
}

/// Gradients of the first `count` modes, one rayon task per mode.
pub fn eig_sens_all(
    model: &FeModel,
    eq: &Equilibrium,
    spec: &BucklingSpectrum,
    count: usize,
    xbar: &[f64],
    interp: &InterpSpec,
    mode: SensMode,
) -> Vec<EigSensitivity> {
    let count = count.min(spec.lambda.len());
    for i in 1..count {
        if (spec.mu[i] - spec.mu[i - 1]).abs() < 1e-8 * spec.mu[0].abs() {
            log::warn!("eigenvalues {} and {} nearly coincide; gradients may be non-unique", i, i + 1);
        }
    }
    (0..count)
        .into_par_iter()
        .map(|i| eig_sens(model, eq, spec, i, xbar, interp, mode))
        .collect()
}

/// Worst absolute deviation over the largest reference magnitude.
pub fn normwise_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Worst entrywise relative error over entries with `|ref| > floor · max|ref|`.
pub fn entrywise_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(reference)
        .filter(|(_, b)| b.abs() > floor * scale)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / b.abs()))
}
