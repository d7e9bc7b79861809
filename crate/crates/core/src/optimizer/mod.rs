//! Design loop: filter, analysis, sensitivities and MMA updates under a
//! volume constraint and buckling constraints, with continuation on the
//! penalization `p` and the aggregation parameter `ρ`.

pub mod mma;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, constraint_block, scale_factor, ConstraintKind, ConstraintSpec};
use crate::analysis::{Analysis, BucklingSpectrum, EigConfig, FeModel};
use crate::error::{Error, Result};
use crate::field::{DensityFilter, DesignField, InterpSpec, VolumeOn};
use crate::sensitivity::{compliance_sens, eig_sens_all, SensMode};

pub use mma::{Mma, MmaSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSchedule {
    pub p_start: f64,
    pub p_step: f64,
    pub p_period: usize,
    pub p_max: f64,
    /// Multiplier applied to `ρ` every `rho_period` iterations; 1 keeps it
    /// fixed.
    pub rho_factor: f64,
    pub rho_period: usize,
    pub rho_max: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            p_start: 1.0,
            p_step: 0.25,
            p_period: 25,
            p_max: 6.0,
            rho_factor: 2.0,
            rho_period: 100,
            rho_max: 1024.0,
        }
    }
}

/// `(p, ρ)` at iteration `iter` for an initial `ρ` of `rho0`.
pub fn continuation_step(iter: usize, s: &ContinuationSchedule, rho0: f64) -> (f64, f64) {
    let p_steps = if s.p_period == 0 { 0 } else { iter / s.p_period };
    let p = (s.p_start + s.p_step * p_steps as f64).min(s.p_max);
    let r_steps = if s.rho_period == 0 { 0 } else { iter / s.rho_period };
    let rho = (rho0 * s.rho_factor.powi(r_steps as i32)).min(s.rho_max.max(rho0));
    (p, rho)
}

#[derive(Debug, Clone)]
pub struct OptSettings {
    pub volfrac: f64,
    pub volume_on: VolumeOn,
    pub constraint: ConstraintSpec,
    /// Modes entering the constraint block (at most `eig.nev`).
    pub n_constraints: usize,
    pub eig: EigConfig,
    pub sens: SensMode,
    pub max_iters: usize,
    /// Stop once the design change drops below this after continuation ends.
    pub change_tol: Option<f64>,
    pub schedule: ContinuationSchedule,
    pub mma: MmaSettings,
    /// Drop modes whose energy sits mostly in void from the block.
    pub exclude_pseudo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub p: f64,
    pub rho: f64,
    pub compliance: f64,
    pub volume: f64,
    pub change: f64,
    pub lambda: Vec<f64>,
    /// Largest buckling-constraint violation, `max(0, -gᵢ)`.
    pub g_max: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub history: Vec<IterRecord>,
    pub x: Vec<f64>,
    pub field: DesignField,
    /// Analysis of the final design at the final penalization.
    pub analysis: Analysis,
    pub interp: InterpSpec,
}

struct Evaluation {
    compliance: f64,
    dj: Vec<f64>,
    buckling: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    g_max: f64,
    analysis: Analysis,
}

/// Runs the design loop from `x0`. `on_iter` sees every record together
/// with the analyzed field.
pub fn run_optimization<F>(
    model: &FeModel,
    filter: &DensityFilter,
    base: &InterpSpec,
    settings: &OptSettings,
    x0: &[f64],
    mut on_iter: F,
) -> Result<OptResult>
where
    F: FnMut(&IterRecord, &DesignField) -> Result<()>,
{
    let m = model.mesh.n_elems();
    if x0.len() != m {
        return Err(Error::Dimension { expected: m, got: x0.len() });
    }
    if !(settings.volfrac > 0.0 && settings.volfrac <= 1.0) {
        return Err(Error::Config(format!("volume fraction {} outside (0, 1]", settings.volfrac)));
    }
    let cons = settings.constraint;
    let buckling_on = cons.pc_bar > 0.0;
    let n_cons = if !buckling_on {
        0
    } else if cons.kind == ConstraintKind::Separate {
        settings.n_constraints.min(settings.eig.nev)
    } else {
        1
    };
    let active: Vec<usize> = (0..m).filter(|&e| !filter.is_passive(e)).collect();
    let mut x = x0.to_vec();
    for &e in filter.passive_solid() {
        x[e] = 1.0;
    }
    for &e in filter.passive_void() {
        x[e] = 0.0;
    }
    let mut mma = Mma::new(active.len(), 1 + n_cons, settings.mma.clone());
    let mut history = Vec::with_capacity(settings.max_iters);
    let mut j_ref: Option<f64> = None;
    let mut scale = 1.0;
    let mut last_pr: Option<(f64, f64)> = None;
    let mut start_mode: Option<Vec<f64>> = None;
    let mut last: Option<(DesignField, Analysis, InterpSpec)> = None;

    for k in 0..settings.max_iters {
        let (p, rho) = if cons.kind == ConstraintKind::Separate {
            (continuation_step(k, &settings.schedule, cons.rho).0, cons.rho)
        } else {
            continuation_step(k, &settings.schedule, cons.rho)
        };
        let interp = base.with_p(p);
        let field = filter.filter_project(&x)?;
        let ev = evaluate(
            model,
            &field,
            &interp,
            settings,
            rho,
            &mut scale,
            last_pr != Some((p, rho)),
            start_mode.as_deref(),
        )?;
        last_pr = Some((p, rho));
        if let Some(m0) = ev.analysis.spectrum.modes.first() {
            start_mode = Some(m0.clone());
        }
        let jr = *j_ref.get_or_insert(ev.compliance);
        let (vol, dvol) = filter.volume(&field, settings.volume_on);

        let is_last = k + 1 == settings.max_iters;
        let mut change = 0.0;
        let mut next = None;
        if !is_last {
            let dj = filter.chain_rule(&ev.dj, &field);
            let df0: Vec<f64> = active.iter().map(|&e| dj[e] / jr).collect();
            let mut fval = vec![vol / settings.volfrac - 1.0];
            let mut dfdx = vec![active.iter().map(|&e| dvol[e] / settings.volfrac).collect::<Vec<_>>()];
            if let Some((g, dg)) = &ev.buckling {
                for (gi, dgi) in g.iter().zip(dg) {
                    fval.push(-gi);
                    let d = filter.chain_rule(dgi, &field);
                    dfdx.push(active.iter().map(|&e| -d[e]).collect());
                }
            }
            let xa: Vec<f64> = active.iter().map(|&e| x[e]).collect();
            let xn = mma.update(&xa, &vec![0.0; xa.len()], &vec![1.0; xa.len()], &df0, &fval, &dfdx)?;
            let mut xnew = x.clone();
            for (&e, v) in active.iter().zip(xn) {
                xnew[e] = v.clamp(0.0, 1.0);
            }
            change = xnew
                .iter()
                .zip(&x)
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            next = Some(xnew);
        }
        let rec = IterRecord {
            iter: k,
            p,
            rho,
            compliance: ev.compliance,
            volume: vol,
            change,
            lambda: ev.analysis.spectrum.lambda.clone(),
            g_max: ev.g_max,
            scale,
        };
        log::info!(
            "it {k:4} p {p:.2} J {:.5e} vol {vol:.4} ch {change:.3e} λ1 {:?} gmax {:.2e}",
            ev.compliance,
            rec.lambda.first(),
            ev.g_max
        );
        on_iter(&rec, &field)?;
        history.push(rec);
        last = Some((field, ev.analysis, interp));
        let done = settings.change_tol.is_some_and(|tol| {
            let (pe, re) = continuation_step(k + 1, &settings.schedule, cons.rho);
            change < tol && pe == p && (cons.kind == ConstraintKind::Separate || re == rho)
        });
        match next {
            Some(xn) if !done => x = xn,
            _ => break,
        }
    }

    let (field, mut analysis, interp) = match last {
        Some(v) => v,
        None => {
            let interp = base.with_p(settings.schedule.p_start);
            let field = filter.filter_project(&x)?;
            let a = model.analyze(&field.xbar, &interp, &settings.eig)?;
            (field, a, interp)
        }
    };
    if analysis.spectrum.lambda.is_empty() && settings.eig.nev > 0 {
        analysis.spectrum = model.buckling(&analysis.equilibrium, &field.xbar, &interp, &settings.eig, None)?;
    }
    Ok(OptResult {
        history,
        x,
        field,
        analysis,
        interp,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &FeModel,
    field: &DesignField,
    interp: &InterpSpec,
    settings: &OptSettings,
    rho: f64,
    scale: &mut f64,
    rescale: bool,
    start: Option<&[f64]>,
) -> Result<Evaluation> {
    let xbar = &field.xbar;
    let equilibrium = model.solve_equilibrium(xbar, interp)?;
    let dj = compliance_sens(model, &equilibrium.u, xbar, interp);
    let cons = settings.constraint;
    if cons.pc_bar <= 0.0 {
        return Ok(Evaluation {
            compliance: equilibrium.compliance,
            dj,
            buckling: None,
            g_max: 0.0,
            analysis: Analysis {
                equilibrium,
                spectrum: BucklingSpectrum::default(),
            },
        });
    }
    let spectrum = model.buckling(&equilibrium, xbar, interp, &settings.eig, start)?;
    let keep: Vec<usize> = if settings.exclude_pseudo {
        let flags = model.flag_pseudo_modes(xbar, interp, &spectrum, 0.1, 0.8);
        (0..flags.len()).filter(|&i| !flags[i]).collect()
    } else {
        (0..spectrum.mu.len()).collect()
    };
    let keep: Vec<usize> = keep.into_iter().take(settings.n_constraints).collect();
    if keep.is_empty() {
        return Err(Error::Eigen("no compressive buckling mode found".into()));
    }
    let sens = eig_sens_all(model, &equilibrium, &spectrum, *keep.last().unwrap() + 1, xbar, interp, settings.sens);
    let mu: Vec<f64> = keep.iter().map(|&i| spectrum.mu[i]).collect();
    let dmu: Vec<Vec<f64>> = keep.iter().map(|&i| sens[i].dmu()).collect();
    let spec = ConstraintSpec { rho, ..cons };
    if cons.kind != ConstraintKind::Separate && rescale {
        let (agg, _) = aggregate(&mu, cons.kind, rho)?;
        *scale = scale_factor(mu[0], agg)?;
    }
    let block = constraint_block(&mu, &spec, *scale)?;
    let mut values = block.values.clone();
    let mut grads = block.gradients(&dmu);
    if cons.kind == ConstraintKind::Separate {
        // fewer modes than constraints: pad with inactive entries
        while values.len() < settings.n_constraints.min(settings.eig.nev) {
            values.push(1.0);
            grads.push(vec![0.0; xbar.len()]);
        }
    }
    let g_max = block.max_violation();
    Ok(Evaluation {
        compliance: equilibrium.compliance,
        dj,
        buckling: Some((values, grads)),
        g_max,
        analysis: Analysis {
            equilibrium,
            spectrum,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::EigSolver;
    use crate::elements::ElementKind;
    use crate::field::FilterSpec;
    use crate::mesh::{build_grid, BoundarySpec};
    use std::collections::BTreeSet;

    #[test]
    fn penalization_schedule() {
        let s = ContinuationSchedule::default();
        assert_eq!(continuation_step(0, &s, 16.0), (1.0, 16.0));
        assert_eq!(continuation_step(26, &s, 16.0).0, 1.25);
        assert_eq!(continuation_step(500, &s, 16.0).0, 6.0);
        assert_eq!(continuation_step(100, &s, 16.0).1, 32.0);
        assert_eq!(continuation_step(5000, &s, 16.0).1, 1024.0);
        let fixed = ContinuationSchedule { rho_factor: 1.0, ..s };
        assert_eq!(continuation_step(700, &fixed, 100.0).1, 100.0);
        let mut last = 0.0;
        for it in 0..1000 {
            let p = continuation_step(it, &s, 16.0).0;
            assert!(p >= last);
            last = p;
        }
    }

    fn cantilever() -> (FeModel, DensityFilter) {
        let mesh = build_grid(16, 8, 1.0, 1.0, 1.0).unwrap();
        let mut bc = BoundarySpec::default();
        for iy in 0..=8 {
            bc.fix_node(mesh.node(0, iy));
        }
        bc.loads.push((2 * mesh.node(16, 4) + 1, -1.0));
        let filter = DensityFilter::new(&mesh, FilterSpec::default(), &BTreeSet::new(), &BTreeSet::new()).unwrap();
        (FeModel::new(mesh, bc, ElementKind::Q4, 0.3).unwrap(), filter)
    }

    fn settings(iters: usize) -> OptSettings {
        OptSettings {
            volfrac: 0.4,
            volume_on: VolumeOn::Physical,
            constraint: ConstraintSpec {
                kind: ConstraintKind::Separate,
                pc_bar: 0.0,
                alpha: 1.01,
                rho: 16.0,
            },
            n_constraints: 4,
            eig: EigConfig { nev: 6, solver: EigSolver::Dense, ..EigConfig::default() },
            sens: SensMode::Consistent,
            max_iters: iters,
            change_tol: None,
            schedule: ContinuationSchedule { p_start: 3.0, p_max: 3.0, ..Default::default() },
            mma: MmaSettings::default(),
            exclude_pseudo: false,
        }
    }

    #[test]
    fn compliance_design_reduces_compliance_and_meets_volume() {
        let (model, filter) = cantilever();
        let base = InterpSpec::new(1e-6, 1.0, 3.0).unwrap();
        let mut rows = 0;
        let r = run_optimization(&model, &filter, &base, &settings(60), &vec![0.4; 128], |_, _| {
            rows += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(rows, 60);
        assert_eq!(r.history.len(), 60);
        let h = &r.history;
        assert!(h.last().unwrap().compliance < 0.7 * h[0].compliance);
        assert!((h.last().unwrap().volume - 0.4).abs() < 1e-3);
        assert!(h.windows(2).all(|w| w[1].iter == w[0].iter + 1));
        assert!(!r.analysis.spectrum.lambda.is_empty());
    }

    #[test]
    fn zero_iterations_returns_start() {
        let (model, filter) = cantilever();
        let base = InterpSpec::new(1e-6, 1.0, 3.0).unwrap();
        let x0: Vec<f64> = (0..128).map(|i| 0.2 + 0.5 * ((i % 7) as f64) / 7.0).collect();
        let r = run_optimization(&model, &filter, &base, &settings(0), &x0, |_, _| Ok(())).unwrap();
        assert_eq!(r.x, x0);
        assert!(r.history.is_empty());
    }

    #[test]
    fn buckling_constraint_is_enforced() {
        let (mesh, bc) = crate::mesh::compressed_beam_spec(12, 6, 1.0).unwrap();
        let filter = DensityFilter::new(&mesh, FilterSpec::default(), &BTreeSet::new(), &BTreeSet::new()).unwrap();
        let model = FeModel::new(mesh, bc, ElementKind::Q4, 0.3).unwrap();
        let base = InterpSpec::new(1e-6, 1.0, 3.0).unwrap();
        let mut s = settings(1);
        s.volfrac = 0.5;
        let free = run_optimization(&model, &filter, &base, &s, &vec![0.5; 72], |_, _| Ok(())).unwrap();
        let lam0 = free.analysis.spectrum.lambda[0];
        s.max_iters = 120;
        s.constraint.pc_bar = 1.3 * lam0;
        let r = run_optimization(&model, &filter, &base, &s, &vec![0.5; 72], |_, _| Ok(())).unwrap();
        let last = r.history.last().unwrap();
        assert!(last.lambda[0] >= 0.99 * s.constraint.pc_bar, "{} vs {}", last.lambda[0], s.constraint.pc_bar);
        assert!(last.g_max < 1e-2);
        assert!((last.volume - 0.5).abs() < 1e-3);
    }
}
