//! Buckling constraint blocks: separate gap-factored constraints or a
//! single scaled aggregate.
//!
//! Constraints are feasible when `g ≥ 0`. Both aggregates approximate the
//! most negative eigenvalue `μ₁` from below (`M ≤ μ₁`), so `P̄c·M + 1 ≥ 0`
//! is conservative and the scale factor `s = μ₁/M` lies in `(0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Separate,
    Pnorm,
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    /// Required lower bound on `λ₁`. Zero disables the block.
    pub pc_bar: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// Constraint values and gradients with respect to the `μᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub values: Vec<f64>,
    /// `dgₖ/dμᵢ`, one row per constraint.
    pub dg_dmu: Vec<Vec<f64>>,
}

impl ConstraintBlock {
    /// Chains through `dμᵢ/dx`.
    pub fn gradients(&self, dmu_dx: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = dmu_dx.first().map_or(0, |g| g.len());
        self.dg_dmu
            .iter()
            .map(|row| {
                let mut g = vec![0.0; m];
                for (w, d) in row.iter().zip(dmu_dx) {
                    if *w != 0.0 {
                        g.iter_mut().zip(d).for_each(|(gi, di)| *gi += w * di);
                    }
                }
                g
            })
            .collect()
    }

    pub fn max_violation(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &g| m.max(-g))
    }
}

fn check_negative(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::Constraint("empty eigenvalue list".into()));
    }
    if let Some(v) = mu.iter().find(|&&v| !(v < 0.0) || !v.is_finite()) {
        return Err(Error::Constraint(format!(
            "eigenvalue {v} is not negative; tension modes must be removed upstream"
        )));
    }
    Ok(())
}

fn min_of(mu: &[f64]) -> f64 {
    mu.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `gᵢ = P̄c α^{-i} μᵢ + 1` for `μ` sorted ascending (0-based `i`).
pub fn separate_constraints(mu: &[f64], pc_bar: f64, alpha: f64) -> Result<ConstraintBlock> {
    check_negative(mu)?;
    if !(alpha >= 1.0) {
        return Err(Error::Constraint(format!("gap factor must be >= 1, got {alpha}")));
    }
    if mu.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Constraint("eigenvalues must be sorted ascending".into()));
    }
    let n = mu.len();
    let mut values = Vec::with_capacity(n);
    let mut dg_dmu = Vec::with_capacity(n);
    for (i, &m) in mu.iter().enumerate() {
        let c = pc_bar * alpha.powi(-(i as i32));
        values.push(c * m + 1.0);
        let mut row = vec![0.0; n];
        row[i] = c;
        dg_dmu.push(row);
    }
    Ok(ConstraintBlock { values, dg_dmu })
}

/// `M = -(Σ (-μᵢ)^ρ)^{1/ρ}` and `dM/dμᵢ`.
pub fn pnorm_agg(mu: &[f64], rho: f64) -> Result<(f64, Vec<f64>)> {
    check_negative(mu)?;
    if !(rho >= 1.0) {
        return Err(Error::Constraint(format!("p-norm exponent must be >= 1, got {rho}")));
    }
    let a = -min_of(mu);
    let sum: f64 = mu.iter().map(|&m| (-m / a).powf(rho)).sum();
    let norm = a * sum.powf(1.0 / rho);
    let w = mu.iter().map(|&m| (-m / norm).powf(rho - 1.0)).collect();
    Ok((-norm, w))
}

/// `M = μ₁ - (1/ρ) ln Σ exp(-ρ(μᵢ - μ₁))` and softmax weights `dM/dμᵢ`.
pub fn ks_agg(mu: &[f64], rho: f64) -> Result<(f64, Vec<f64>)> {
    if mu.is_empty() || mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Constraint("KS needs a finite, non-empty spectrum".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Constraint(format!("KS parameter must be positive, got {rho}")));
    }
    let m1 = min_of(mu);
    let e: Vec<f64> = mu.iter().map(|&m| (-rho * (m - m1)).exp()).collect();
    let sum: f64 = e.iter().sum();
    let w = e.iter().map(|v| v / sum).collect();
    Ok((m1 - sum.ln() / rho, w))
}

/// `s = μ₁ / M`.
pub fn scale_factor(mu1: f64, m: f64) -> Result<f64> {
    if m == 0.0 || !m.is_finite() {
        return Err(Error::Constraint(format!("cannot scale by aggregate {m}")));
    }
    Ok(mu1 / m)
}

pub fn aggregate(mu: &[f64], kind: ConstraintKind, rho: f64) -> Result<(f64, Vec<f64>)> {
    match kind {
        ConstraintKind::Pnorm => pnorm_agg(mu, rho),
        ConstraintKind::Ks => ks_agg(mu, rho),
        ConstraintKind::Separate => Err(Error::Constraint(
            "separate constraints are not an aggregate".into(),
        )),
    }
}

/// `g = P̄c s M + 1`; `s` is treated as a constant.
pub fn aggregated_constraint(mu: &[f64], spec: &ConstraintSpec, s: f64) -> Result<ConstraintBlock> {
    let (m, w) = aggregate(mu, spec.kind, spec.rho)?;
    let c = spec.pc_bar * s;
    Ok(ConstraintBlock {
        values: vec![c * m + 1.0],
        dg_dmu: vec![w.into_iter().map(|wi| c * wi).collect()],
    })
}

/// Constraint block for `spec`; `s` is ignored for separate constraints.
pub fn constraint_block(mu: &[f64], spec: &ConstraintSpec, s: f64) -> Result<ConstraintBlock> {
    match spec.kind {
        ConstraintKind::Separate => separate_constraints(mu, spec.pc_bar, spec.alpha),
        _ => aggregated_constraint(mu, spec, s),
    }
}
