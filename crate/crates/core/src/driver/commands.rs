//! The four CLI commands as library calls.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregation::{aggregate, constraint_block, scale_factor, ConstraintKind, ConstraintSpec};
use crate::analysis::{Analysis, EigConfig, FeModel};
use crate::elements::ElementKind;
use crate::error::{Error, Result};
use crate::field::{DensityFilter, DesignField, InterpSpec};
use crate::mesh::{column_benchmark_spec, COLUMN_HEIGHT, COLUMN_LENGTH, COLUMN_MODULUS, COLUMN_THICKNESS};
use crate::optimizer::{continuation_step, run_optimization, IterRecord, OptResult};
use crate::postprocess::{
    log_normalized, mode_energy_map, normalization_error, separation_factors, DiagnosticsReport,
};
use crate::sensitivity::{compliance_sens, eig_sens, normwise_error, SensMode};

use super::config::{ProblemSection, RunConfig};
use super::output::{density_pgm, design_csv, history_csv, json, log_map_pgm, write_atomic};
use super::problems::{build_problem, Problem};

/// Meshes of the column accuracy ladder.
pub const COLUMN_LADDER: [(usize, usize); 7] = [(10, 2), (10, 4), (20, 2), (20, 4), (40, 8), (80, 16), (160, 32)];

/// `π² E I / (4 L²)` for the cantilever column, `I = t h³ / 12`.
pub fn column_critical_load() -> f64 {
    let i = COLUMN_THICKNESS * COLUMN_HEIGHT.powi(3) / 12.0;
    PI * PI * COLUMN_MODULUS * i / (4.0 * COLUMN_LENGTH * COLUMN_LENGTH)
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub element: ElementKind,
    pub nelx: usize,
    pub nely: usize,
    /// Critical load `λ₁ · P`.
    pub critical_load: f64,
    pub rel_error: f64,
    pub residual: f64,
    pub seconds: f64,
}

/// Column value of the ladder at Poisson ratio `nu`.
pub fn column_row(kind: ElementKind, nelx: usize, nely: usize, nu: f64) -> Result<LadderRow> {
    let t0 = Instant::now();
    let (mesh, bc) = column_benchmark_spec(nelx, nely)?;
    let m = mesh.n_elems();
    let model = FeModel::new(mesh, bc, kind, nu)?;
    let interp = InterpSpec::new(COLUMN_MODULUS * 1e-9, COLUMN_MODULUS, 1.0)?;
    let a = model.analyze(&vec![1.0; m], &interp, &EigConfig { nev: 1, ..EigConfig::default() })?;
    let lambda = *a
        .spectrum
        .lambda
        .first()
        .ok_or_else(|| Error::Eigen(format!("no buckling mode on the {nelx}x{nely} column")))?;
    let pcr = lambda * crate::mesh::COLUMN_LOAD;
    Ok(LadderRow {
        element: kind,
        nelx,
        nely,
        critical_load: pcr,
        rel_error: pcr / column_critical_load() - 1.0,
        residual: a.spectrum.residuals[0],
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Runs the ladder for each kind. The column is analysed with `ν = 0`.
pub fn verify_column(kinds: &[ElementKind]) -> Vec<(ElementKind, (usize, usize), Result<LadderRow>)> {
    let mut out = Vec::new();
    for &k in kinds {
        for &(nx, ny) in &COLUMN_LADDER {
            out.push((k, (nx, ny), column_row(k, nx, ny, 0.0)));
        }
    }
    out
}

pub fn ladder_report(rows: &[(ElementKind, (usize, usize), Result<LadderRow>)]) -> String {
    let mut s = format!("closed-form P_c = {:.6e}\n", column_critical_load());
    let _ = writeln!(s, "{:<4} {:>8} {:>14} {:>12} {:>10}", "elem", "mesh", "P_cr", "e_r", "residual");
    for (k, (nx, ny), r) in rows {
        match r {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{:<4} {:>8} {:>14.6e} {:>12.4e} {:>10.2e}",
                    k.to_string(),
                    format!("{nx}x{ny}"),
                    r.critical_load,
                    r.rel_error,
                    r.residual
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{:<4} {:>8} failed: {e}", k.to_string(), format!("{nx}x{ny}"));
            }
        }
    }
    s
}

/// Analysis of one design at one penalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenalizedAnalysis {
    pub p: f64,
    pub compliance: f64,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub diagnostics: DiagnosticsReport,
    /// The analysed design at `p = 1` and `p = 3`.
    pub penalizations: Vec<PenalizedAnalysis>,
    pub normalization_error: f64,
}

pub const J0_ASSUMPTION: &str =
    "J0 is the compliance of the uniform design (x = f on design elements, passive solid at 1) at p = 1";

/// Uniform starting design with passive elements set.
pub fn uniform_design(filter: &DensityFilter, f: f64) -> Vec<f64> {
    let mut x = vec![f; filter.n_elems()];
    filter.passive_solid().iter().for_each(|&e| x[e] = 1.0);
    filter.passive_void().iter().for_each(|&e| x[e] = 0.0);
    x
}

/// Penalization reached at the end of `cfg`'s schedule.
pub fn final_penalization(cfg: &RunConfig) -> f64 {
    let s = cfg.opt_settings();
    continuation_step(cfg.optimizer.max_iters.saturating_sub(1), &s.schedule, cfg.constraint.rho).0
}

/// Reference compliance `J0` of `prob`.
pub fn reference_compliance(prob: &Problem, cfg: &RunConfig) -> Result<f64> {
    let x = uniform_design(&prob.filter, cfg.field.f);
    Ok(prob.model.solve_equilibrium(&x, &prob.interp.with_p(1.0))?.compliance)
}

#[allow(clippy::too_many_arguments)]
fn diagnostics(
    prob: &Problem,
    cfg: &RunConfig,
    kind: ElementKind,
    j0: f64,
    field_xbar: &[f64],
    volume: f64,
    a: &Analysis,
    interp: &InterpSpec,
) -> DiagnosticsReport {
    let jf = a.equilibrium.compliance;
    DiagnosticsReport {
        element: kind.to_string(),
        j0,
        jf,
        jn: DiagnosticsReport::jn(jf, j0),
        kappa: None,
        lambda: a.spectrum.lambda.clone(),
        delta: separation_factors(&a.spectrum.lambda, cfg.constraint.alpha),
        volume,
        penalization: interp.p,
        penalization_assumption: J0_ASSUMPTION.into(),
        pseudo_modes: prob.model.flag_pseudo_modes(field_xbar, interp, &a.spectrum, 0.1, 0.8),
        eigen_residuals: a.spectrum.residuals.clone(),
    }
}

fn write_mode_maps(dir: &Path, prob: &Problem, a: &Analysis, xbar: &[f64], interp: &InterpSpec) -> Result<()> {
    for (i, phi) in a.spectrum.modes.iter().take(4).enumerate() {
        let logs = log_normalized(&mode_energy_map(&prob.model, phi, xbar, interp), 6.0);
        write_atomic(
            &dir.join(format!("mode_energy_{}.pgm", i + 1)),
            log_map_pgm(&prob.model.mesh, &logs, 6.0).as_bytes(),
        )?;
    }
    Ok(())
}

fn physical_volume(xbar: &[f64]) -> f64 {
    xbar.iter().sum::<f64>() / xbar.len() as f64
}

/// Analyses the physical design `xbar` (uniform `x̄ = f` with passive
/// elements solid when absent). Diagnostics use the end-of-schedule `p`.
pub fn analyze(cfg: &RunConfig, kind: ElementKind, xbar: Option<Vec<f64>>, out: Option<&Path>) -> Result<AnalyzeReport> {
    let prob = build_problem(cfg, kind)?;
    let m = prob.model.mesh.n_elems();
    let xbar = match xbar {
        Some(x) if x.len() != m => return Err(Error::Dimension { expected: m, got: x.len() }),
        Some(x) => x,
        None => uniform_design(&prob.filter, cfg.field.f),
    };
    let eig = cfg.eig_config();
    let mut penalizations = Vec::new();
    for p in [1.0, 3.0] {
        let a = prob.model.analyze(&xbar, &prob.interp.with_p(p), &eig)?;
        penalizations.push(PenalizedAnalysis {
            p,
            compliance: a.equilibrium.compliance,
            lambda: a.spectrum.lambda,
        });
    }
    let interp = prob.interp.with_p(final_penalization(cfg));
    let a = prob.model.analyze(&xbar, &interp, &eig)?;
    let j0 = reference_compliance(&prob, cfg)?;
    let diagnostics = diagnostics(&prob, cfg, kind, j0, &xbar, physical_volume(&xbar), &a, &interp);
    let report = AnalyzeReport {
        diagnostics,
        penalizations,
        normalization_error: normalization_error(&prob.model, &a, &xbar, &interp)?,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("diagnostics.json"), json(&report)?.as_bytes())?;
        write_atomic(&dir.join("design.pgm"), density_pgm(&prob.model.mesh, &xbar).as_bytes())?;
        write_mode_maps(dir, &prob, &a, &xbar, &interp)?;
    }
    Ok(report)
}

pub struct OptimizeOutcome {
    pub result: OptResult,
    pub diagnostics: DiagnosticsReport,
}

/// Runs the design loop and writes all artifacts into `out`. On failure
/// the last analysed design and the history so far are dumped as
/// `failed_design.csv` and `history.csv`.
pub fn optimize(cfg: &RunConfig, kind: ElementKind, warm: Option<Vec<f64>>, out: &Path) -> Result<OptimizeOutcome> {
    let prob = build_problem(cfg, kind)?;
    let mesh = &prob.model.mesh;
    let settings = cfg.opt_settings();
    let k = settings.eig.nev;
    let x0 = match warm {
        Some(x) if x.len() != mesh.n_elems() => {
            return Err(Error::Dimension { expected: mesh.n_elems(), got: x.len() })
        }
        Some(x) => x,
        None => uniform_design(&prob.filter, cfg.field.f),
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    let every = cfg.output.checkpoint_every;
    let mut history: Vec<IterRecord> = Vec::new();
    let mut last: Option<DesignField> = None;
    let res = run_optimization(&prob.model, &prob.filter, &prob.interp, &settings, &x0, |rec, field| {
        history.push(rec.clone());
        if every > 0 && rec.iter % every == 0 {
            write_atomic(
                &out.join(format!("density_{:04}.pgm", rec.iter)),
                density_pgm(mesh, &field.xbar).as_bytes(),
            )?;
            write_atomic(&out.join("history.csv"), history_csv(&history, k).as_bytes())?;
        }
        last = Some(field.clone());
        Ok(())
    });
    let result = match res {
        Ok(r) => r,
        Err(e) => {
            log::error!("optimization aborted: {e}");
            write_atomic(&out.join("history.csv"), history_csv(&history, k).as_bytes())?;
            if let Some(f) = &last {
                write_atomic(&out.join("failed_design.csv"), design_csv(mesh, &f.x, &f.xbar).as_bytes())?;
            }
            return Err(e);
        }
    };
    write_atomic(&out.join("history.csv"), history_csv(&result.history, k).as_bytes())?;
    let xbar = &result.field.xbar;
    write_atomic(&out.join("final_design.csv"), design_csv(mesh, &result.x, xbar).as_bytes())?;
    write_atomic(&out.join("final_design.pgm"), density_pgm(mesh, xbar).as_bytes())?;
    // fresh solve so that `analyze` on the stored design reproduces it
    let a = prob.model.analyze(xbar, &result.interp, &settings.eig)?;
    let j0 = reference_compliance(&prob, cfg)?;
    let diag = diagnostics(&prob, cfg, kind, j0, xbar, physical_volume(xbar), &a, &result.interp);
    write_atomic(&out.join("diagnostics.json"), json(&diag)?.as_bytes())?;
    write_mode_maps(out, &prob, &a, xbar, &result.interp)?;
    Ok(OptimizeOutcome { result, diagnostics: diag })
}

#[derive(Debug, Clone, Serialize)]
pub struct FdRow {
    pub quantity: &'static str,
    pub element: usize,
    pub analytic: f64,
    pub fd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdSummary {
    pub quantity: &'static str,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub mode: SensMode,
    pub rows: Vec<FdRow>,
    pub summary: Vec<FdSummary>,
}

impl FdReport {
    pub fn pass(&self) -> bool {
        self.summary.iter().all(|s| s.pass)
    }

    pub fn error(&self, quantity: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.quantity == quantity).map(|s| s.error)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("quantity,e,analytic,fd,abs_err\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e},{:e},{:e}", r.quantity, r.element, r.analytic, r.fd, (r.analytic - r.fd).abs());
        }
        s
    }
}

pub const FD_MAX_ELEMS: usize = 144;
pub const FD_COMPLIANCE_TOL: f64 = 1e-5;
pub const FD_EIGEN_TOL: f64 = 1e-3;
/// Penalization at which gradients are checked.
pub const FD_P: f64 = 3.0;

struct FdEval {
    j: f64,
    lambda: f64,
    mu: f64,
    g: f64,
}

/// Analytic design-variable gradients of compliance, `λ₁`, `μ₁` and the
/// aggregated buckling constraint against central differences, through
/// filter, projection and re-analysis. The design is drawn from the
/// configured eigen seed, passive elements are skipped.
pub fn fdcheck(cfg: &RunConfig, kind: ElementKind) -> Result<FdReport> {
    let prob = build_problem(cfg, kind)?;
    let mesh = &prob.model.mesh;
    if mesh.nelx > 12 || mesh.nely > 12 {
        return Err(Error::Config(format!(
            "fdcheck is limited to meshes of at most 12x12 elements, got {}x{}",
            mesh.nelx, mesh.nely
        )));
    }
    let mode = cfg.sens_mode();
    let interp = prob.interp.with_p(FD_P);
    let eig = EigConfig {
        nev: cfg.constraint.n_eigs.clamp(1, 6),
        ..cfg.eig_config()
    };
    let kind_agg = match cfg.constraint.kind {
        ConstraintKind::Separate => ConstraintKind::Ks,
        k => k,
    };
    let cons = ConstraintSpec {
        kind: kind_agg,
        pc_bar: if cfg.constraint.pc_bar > 0.0 { cfg.constraint.pc_bar } else { 1.0 },
        alpha: cfg.constraint.alpha,
        rho: cfg.constraint.rho,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eigen.seed);
    let mut x = uniform_design(&prob.filter, 0.0);
    for (e, v) in x.iter_mut().enumerate() {
        if !prob.filter.is_passive(e) {
            *v = rng.random_range(0.3..0.9);
        }
    }

    let field = prob.filter.filter_project(&x)?;
    let a = prob.model.analyze(&field.xbar, &interp, &eig)?;
    let spec = &a.spectrum;
    if spec.mu.is_empty() {
        return Err(Error::Eigen("fdcheck fixture has no compressive buckling mode".into()));
    }
    let (mref, _) = aggregate(&spec.mu, kind_agg, cons.rho)?;
    let s = scale_factor(spec.mu[0], mref)?;
    let eval = |x: &[f64]| -> Result<FdEval> {
        let f = prob.filter.filter_project(x)?;
        let a = prob.model.analyze(&f.xbar, &interp, &eig)?;
        let sp = &a.spectrum;
        if sp.mu.len() != spec.mu.len() {
            return Err(Error::Eigen("mode count changed under perturbation".into()));
        }
        let g = constraint_block(&sp.mu, &cons, s)?.values[0];
        Ok(FdEval {
            j: a.equilibrium.compliance,
            lambda: sp.lambda[0],
            mu: sp.mu[0],
            g,
        })
    };

    let eq = &a.equilibrium;
    let dj = prob.filter.chain_rule(&compliance_sens(&prob.model, &eq.u, &field.xbar, &interp), &field);
    let sens: Vec<_> = (0..spec.mu.len())
        .map(|i| eig_sens(&prob.model, eq, spec, i, &field.xbar, &interp, mode))
        .collect();
    let dl = prob.filter.chain_rule(&sens[0].dlambda(), &field);
    let dmu = prob.filter.chain_rule(&sens[0].dmu(), &field);
    let block = constraint_block(&spec.mu, &cons, s)?;
    let dmu_all: Vec<Vec<f64>> = sens.iter().map(|e| e.dmu()).collect();
    let dg = prob.filter.chain_rule(&block.gradients(&dmu_all)[0], &field);

    let h = 1e-5;
    let mut rows = Vec::new();
    let mut cols: [(Vec<f64>, Vec<f64>); 4] = Default::default();
    for e in (0..x.len()).filter(|&e| !prob.filter.is_passive(e)) {
        let mut xp = x.clone();
        xp[e] += h;
        let fp = eval(&xp)?;
        xp[e] -= 2.0 * h;
        let fm = eval(&xp)?;
        let fd = [
            (fp.j - fm.j) / (2.0 * h),
            (fp.lambda - fm.lambda) / (2.0 * h),
            (fp.mu - fm.mu) / (2.0 * h),
            (fp.g - fm.g) / (2.0 * h),
        ];
        let an = [dj[e], dl[e], dmu[e], dg[e]];
        for (q, name) in ["compliance", "lambda_1", "mu_1", "aggregated"].iter().enumerate() {
            rows.push(FdRow {
                quantity: name,
                element: e,
                analytic: an[q],
                fd: fd[q],
            });
            cols[q].0.push(an[q]);
            cols[q].1.push(fd[q]);
        }
    }
    let summary = ["compliance", "lambda_1", "mu_1", "aggregated"]
        .iter()
        .zip(&cols)
        .map(|(q, (an, fd))| {
            let tolerance = if *q == "compliance" { FD_COMPLIANCE_TOL } else { FD_EIGEN_TOL };
            let error = normwise_error(an, fd);
            FdSummary {
                quantity: q,
                error,
                tolerance,
                pass: error < tolerance,
            }
        })
        .collect();
    Ok(FdReport { mode, rows, summary })
}

/// Default configuration for `fdcheck`: the 10×10 compressed block.
pub fn fdcheck_fixture() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.mesh.nelx = 10;
    cfg.mesh.nely = 10;
    cfg.problem = ProblemSection::CompressedBeam(Default::default());
    cfg.constraint.n_eigs = 6;
    cfg.constraint.n_constraints = 6;
    cfg.constraint.kind = ConstraintKind::Ks;
    cfg.constraint.rho = 16.0;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_column_load() {
        assert!((column_critical_load() - 2.05617e6).abs() < 10.0);
    }

    #[test]
    fn coarse_ladder_rows() {
        let r = column_row(ElementKind::Q4, 10, 2, 0.0).unwrap();
        assert!((r.rel_error - 0.494).abs() < 0.005, "{}", r.rel_error);
        let r = column_row(ElementKind::Q6, 10, 2, 0.0).unwrap();
        assert!(r.rel_error < 0.0 && r.rel_error > -0.01);
        let rows = vec![(ElementKind::Q4, (10, 2), Ok(r))];
        assert!(ladder_report(&rows).contains("10x2"));
    }

    #[test]
    fn fdcheck_rejects_large_mesh() {
        let mut cfg = fdcheck_fixture();
        cfg.mesh.nelx = 13;
        assert!(matches!(fdcheck(&cfg, ElementKind::Q4), Err(Error::Config(_))));
    }

    #[test]
    fn fdcheck_small_fixture() {
        let mut cfg = fdcheck_fixture();
        cfg.mesh.nelx = 6;
        cfg.mesh.nely = 4;
        let r = fdcheck(&cfg, ElementKind::Q4).unwrap();
        assert!(r.pass(), "{:?}", r.summary);
        assert_eq!(r.rows.len(), 4 * 24);
        assert!(r.csv().starts_with("quantity,e,analytic,fd,abs_err\n"));
        cfg.sensitivity.consistent = false;
        let r = fdcheck(&cfg, ElementKind::Q4).unwrap();
        assert!(r.summary[0].pass);
        assert!(!r.pass());
    }

    #[test]
    fn analyze_reports_both_penalizations() {
        let mut cfg = RunConfig::default();
        cfg.mesh.nelx = 12;
        cfg.mesh.nely = 28;
        cfg.constraint.n_eigs = 4;
        cfg.constraint.n_constraints = 4;
        let dir = tempfile::tempdir().unwrap();
        let r = analyze(&cfg, ElementKind::Q4, None, Some(dir.path())).unwrap();
        assert_eq!(r.penalizations.len(), 2);
        let (p1, p3) = (&r.penalizations[0], &r.penalizations[1]);
        assert!(p3.compliance > p1.compliance);
        assert!((r.diagnostics.j0 - p1.compliance).abs() < 1e-12 * p1.compliance);
        assert_eq!(r.diagnostics.penalization, 6.0);
        assert!(r.normalization_error < 1e-8);
        for f in ["diagnostics.json", "design.pgm", "mode_energy_1.pgm", "mode_energy_4.pgm"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let wrong = analyze(&cfg, ElementKind::Q4, Some(vec![0.2; 3]), None);
        assert!(matches!(wrong, Err(Error::Dimension { .. })));
    }
}
