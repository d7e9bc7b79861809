//! Derived diagnostics: separation factors, mode energy maps and
//! stiffened/softened stress-energy maps.

use serde::{Deserialize, Serialize};

use crate::analysis::{Analysis, FeModel};
use crate::error::Result;
use crate::field::InterpSpec;

/// `δᵢ = λᵢ/λ₁ - α^{i-1}` for `i = 2..=k` (1-based).
pub fn separation_factors(lambda: &[f64], alpha: f64) -> Vec<f64> {
    match lambda.first() {
        Some(&l1) if l1 > 0.0 => lambda
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &l)| l / l1 - alpha.powi(i as i32))
            .collect(),
        _ => vec![],
    }
}

/// Per-element strain energy `φₑᵀ kₑ φₑ` with `kₑ = h1(x̄ₑ) k0`.
pub fn mode_energy_map(model: &FeModel, mode: &[f64], xbar: &[f64], interp: &InterpSpec) -> Vec<f64> {
    model
        .element_energies(mode)
        .into_iter()
        .zip(xbar)
        .map(|(en, &x)| interp.h1(x) * en)
        .collect()
}

/// `log10(φₑ/φ_max)` clipped below at `-decades`.
pub fn log_normalized(values: &[f64], decades: f64) -> Vec<f64> {
    let max = values.iter().fold(0.0f64, |m, v| m.max(*v));
    values
        .iter()
        .map(|&v| {
            if max <= 0.0 || v <= 0.0 {
                -decades
            } else {
                (v / max).log10().max(-decades)
            }
        })
        .collect()
}

/// Signed `ψₑ = vₑᵀ h2(x̄ₑ) g0(uₑ) vₑ`; positive where the prestress
/// stiffens. Elements with `x̄ < threshold` report zero.
pub fn stress_energy_sign_map(
    model: &FeModel,
    v: &[f64],
    u: &[f64],
    xbar: &[f64],
    interp: &InterpSpec,
    threshold: f64,
) -> Vec<f64> {
    xbar.iter()
        .enumerate()
        .map(|(e, &x)| {
            if x < threshold {
                return 0.0;
            }
            let ve = model.element_vector(v, e);
            let g = model.template.g0(&model.element_vector(u, e));
            interp.h2(x) * (ve.transpose() * g * ve)[(0, 0)]
        })
        .collect()
}

/// `max |ΦᵀKσΦ + I|` over the computed modes.
pub fn normalization_error(model: &FeModel, a: &Analysis, xbar: &[f64], interp: &InterpSpec) -> Result<f64> {
    let ks = model.assemble_stress_stiffness(xbar, &a.equilibrium.u, interp)?;
    let modes: Vec<Vec<f64>> = a.spectrum.modes.iter().map(|m| model.restrict(m)).collect();
    let mut worst = 0.0f64;
    let mut tmp = vec![0.0; model.n_free()];
    for (i, pi) in modes.iter().enumerate() {
        ks.matvec(pi, &mut tmp);
        for (j, pj) in modes.iter().enumerate() {
            let v: f64 = tmp.iter().zip(pj).map(|(a, b)| a * b).sum();
            let target = if i == j { -1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub element: String,
    /// Compliance of the uniform reference design.
    pub j0: f64,
    pub jf: f64,
    pub jn: f64,
    /// `Jn(P̄c) / Jn(0)` when a reference run is known.
    pub kappa: Option<f64>,
    pub lambda: Vec<f64>,
    pub delta: Vec<f64>,
    pub volume: f64,
    pub penalization: f64,
    /// How `j0` was obtained.
    pub penalization_assumption: String,
    pub pseudo_modes: Vec<bool>,
    pub eigen_residuals: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn jn(jf: f64, j0: f64) -> f64 {
        jf / j0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::EigConfig;
    use crate::elements::ElementKind;
    use crate::mesh::{build_grid, column_benchmark_spec, BoundarySpec, COLUMN_MODULUS};

    #[test]
    fn separation_examples() {
        let d = separation_factors(&[2.0, 2.02], 1.01);
        assert_eq!(d.len(), 1);
        assert!(d[0].abs() < 1e-14);
        let lam: Vec<f64> = (0..6).map(|i| 0.7 * 1.01f64.powi(i)).collect();
        assert!(separation_factors(&lam, 1.01).iter().all(|v| v.abs() < 1e-12));
        assert!(separation_factors(&[], 1.01).is_empty());
    }

    #[test]
    fn energy_map_sums_to_global_energy() {
        let (mesh, bc) = column_benchmark_spec(20, 4).unwrap();
        let model = FeModel::new(mesh, bc, ElementKind::Q4, 0.0).unwrap();
        let interp = InterpSpec::new(COLUMN_MODULUS * 1e-6, COLUMN_MODULUS, 3.0).unwrap();
        let x: Vec<f64> = (0..80).map(|e| 0.5 + 0.5 * ((e % 5) as f64 / 5.0)).collect();
        let a = model.analyze(&x, &interp, &EigConfig { nev: 2, ..Default::default() }).unwrap();
        let phi = &a.spectrum.modes[0];
        let map = mode_energy_map(&model, phi, &x, &interp);
        let pr = model.restrict(phi);
        let mut kp = vec![0.0; pr.len()];
        a.equilibrium.k.matvec(&pr, &mut kp);
        let total: f64 = pr.iter().zip(&kp).map(|(a, b)| a * b).sum();
        let s: f64 = map.iter().sum();
        assert!((s - total).abs() < 1e-10 * total);
        assert!(map.iter().all(|&v| v >= 0.0));
        let flipped: Vec<f64> = phi.iter().map(|v| -v).collect();
        assert_eq!(mode_energy_map(&model, &flipped, &x, &interp), map);
    }

    #[test]
    fn column_mode_energy_peaks_at_clamp() {
        let (mesh, bc) = column_benchmark_spec(40, 4).unwrap();
        let model = FeModel::new(mesh, bc, ElementKind::Q6, 0.0).unwrap();
        let interp = InterpSpec::new(COLUMN_MODULUS * 1e-9, COLUMN_MODULUS, 1.0).unwrap();
        let x = vec![1.0; 160];
        let a = model.analyze(&x, &interp, &EigConfig { nev: 1, ..Default::default() }).unwrap();
        let map = mode_energy_map(&model, &a.spectrum.modes[0], &x, &interp);
        let emax = (0..160).max_by(|&a, &b| map[a].total_cmp(&map[b])).unwrap();
        assert_eq!(model.mesh.elem_pos(emax).0, 0);
        let logs = log_normalized(&map, 6.0);
        assert_eq!(logs[emax], 0.0);
        assert!(logs.iter().all(|&v| (-6.0..=0.0).contains(&v)));
    }

    #[test]
    fn rigid_motion_has_no_energy() {
        let mesh = build_grid(3, 2, 1.0, 1.0, 1.0).unwrap();
        let model = FeModel::new(mesh, BoundarySpec { fixed_dofs: [0, 1, 3].into(), ..Default::default() }, ElementKind::Q4, 0.3).unwrap();
        let interp = InterpSpec::new(1e-6, 1.0, 3.0).unwrap();
        let rigid: Vec<f64> = (0..model.mesh.n_dofs()).map(|d| if d % 2 == 0 { 1.0 } else { 0.0 }).collect();
        assert!(mode_energy_map(&model, &rigid, &[1.0; 6], &interp).iter().all(|v| v.abs() < 1e-12));
    }

    fn one_element(load: f64) -> (FeModel, Vec<f64>) {
        let mesh = build_grid(1, 1, 1.0, 1.0, 1.0).unwrap();
        let mut bc = BoundarySpec::default();
        // left nodes 0 and 1 held in x (node 0 also in y), right nodes 2 and 3 pulled
        bc.fixed_dofs.extend([0, 1, 2]);
        bc.loads.push((4, load));
        bc.loads.push((6, load));
        let model = FeModel::new(mesh, bc, ElementKind::Q4, 0.0).unwrap();
        let interp = InterpSpec::new(1e-6, 1.0, 1.0).unwrap();
        let eq = model.solve_equilibrium(&[1.0], &interp).unwrap();
        (model, eq.u)
    }

    #[test]
    fn stress_energy_sign_follows_prestress() {
        let interp = InterpSpec::new(1e-6, 1.0, 1.0).unwrap();
        // lateral displacement varying along the loaded direction
        let v = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let (model, u) = one_element(1.0);
        let psi = stress_energy_sign_map(&model, &v, &u, &[1.0], &interp, 0.1);
        assert!(psi[0] > 0.0, "{psi:?}");
        let (model, u) = one_element(-1.0);
        let psi = stress_energy_sign_map(&model, &v, &u, &[1.0], &interp, 0.1);
        assert!(psi[0] < 0.0);
        assert_eq!(stress_energy_sign_map(&model, &[0.0; 8], &u, &[1.0], &interp, 0.1), vec![0.0]);
        assert_eq!(stress_energy_sign_map(&model, &v, &u, &[0.05], &interp, 0.1), vec![0.0]);
    }
}
