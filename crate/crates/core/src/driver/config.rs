//! TOML run configuration. Every section has defaults, unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{ConstraintKind, ConstraintSpec};
use crate::analysis::{EigConfig, EigSolver};
use crate::elements::ElementKind;
use crate::error::{Error, Result};
use crate::field::{FilterSpec, InterpSpec, VolumeOn};
use crate::optimizer::{ContinuationSchedule, MmaSettings, OptSettings};
use crate::sensitivity::SensMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub material: MaterialSection,
    pub field: FieldSection,
    pub constraint: ConstraintSection,
    pub element: ElementSection,
    pub optimizer: OptimizerSection,
    pub problem: ProblemSection,
    pub sensitivity: SensitivitySection,
    pub eigen: EigenSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub nelx: usize,
    pub nely: usize,
    /// Element edge lengths; problem-specific when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ly: Option<f64>,
    pub t: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            nelx: 90,
            nely: 210,
            lx: None,
            ly: None,
            t: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub nu: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        MaterialSection {
            e1: 1.0,
            e0: 1e-6,
            nu: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// Volume fraction.
    pub f: f64,
    pub rmin: f64,
    pub eta: f64,
    pub beta: f64,
    pub volume_on: VolumeOn,
}

impl Default for FieldSection {
    fn default() -> Self {
        let fs = FilterSpec::default();
        FieldSection {
            f: 0.2,
            rmin: fs.rmin,
            eta: fs.eta,
            beta: fs.beta,
            volume_on: VolumeOn::Physical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoSchedule {
    pub factor: f64,
    pub period: usize,
    pub max: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        RhoSchedule {
            factor: 2.0,
            period: 100,
            max: 128.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSection {
    pub kind: ConstraintKind,
    #[serde(rename = "Pc_bar")]
    pub pc_bar: f64,
    pub alpha: f64,
    pub rho: f64,
    /// Fixed `ρ` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_schedule: Option<RhoSchedule>,
    pub n_eigs: usize,
    pub n_constraints: usize,
    pub exclude_pseudo: bool,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        ConstraintSection {
            kind: ConstraintKind::Separate,
            pc_bar: 0.0,
            alpha: 1.01,
            rho: 100.0,
            rho_schedule: None,
            n_eigs: 24,
            n_constraints: 12,
            exclude_pseudo: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElementSection {
    pub kind: ElementKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PSchedule {
    pub p_start: f64,
    pub p_step: f64,
    pub p_period: usize,
    pub p_max: f64,
}

impl Default for PSchedule {
    fn default() -> Self {
        PSchedule {
            p_start: 1.0,
            p_step: 0.25,
            p_period: 25,
            p_max: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_iters: usize,
    #[serde(rename = "move")]
    pub move_limit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub change_tol: Option<f64>,
    /// MMA asymptote floor as a fraction of the variable range.
    pub asymin: f64,
    pub continuation: PSchedule,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            max_iters: 700,
            move_limit: 0.2,
            change_tol: None,
            asymin: MmaSettings::default().asymin,
            continuation: PSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportDofs {
    X,
    Y,
    Xy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Support {
    /// Node grid position `[ix, iy]`.
    pub node: [usize; 2],
    pub dofs: SupportDofs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    X,
    Y,
}

/// Uniform traction with resultant `total` on the straight node line
/// `from..=to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeLoad {
    pub from: [usize; 2],
    pub to: [usize; 2],
    pub dir: Direction,
    pub total: f64,
}

/// Element block `ix..ix+nx`, `iy..iy+ny`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElemRect {
    pub ix: usize,
    pub iy: usize,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPinSection {
    /// Side of the square solid patches in elements; scales with `nelx`
    /// (9 at 90) when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
    /// Total downward load.
    pub load: f64,
    /// Loaded edge length in elements.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_width: Option<usize>,
    /// Pinned nodes `[ix, iy]`; patch centres on the 45° lines when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pin_a: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pin_b: Option<[usize; 2]>,
    /// Domain width in length units, used when `mesh.lx` is absent.
    pub width: f64,
}

impl Default for TwoPinSection {
    fn default() -> Self {
        TwoPinSection {
            patch: None,
            load: 0.02,
            load_width: None,
            pin_a: None,
            pin_b: None,
            width: super::problems::TWO_PIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressedBeamSection {
    pub load: f64,
}

impl Default for CompressedBeamSection {
    fn default() -> Self {
        CompressedBeamSection { load: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CustomSection {
    pub supports: Vec<Support>,
    pub loads: Vec<EdgeLoad>,
    pub solid: Vec<ElemRect>,
    pub void: Vec<ElemRect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSection {
    TwoPin(TwoPinSection),
    /// Cantilever column benchmark; uses its own modulus and dimensions.
    Column,
    CompressedBeam(CompressedBeamSection),
    Custom(CustomSection),
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection::TwoPin(TwoPinSection::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    pub consistent: bool,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection { consistent: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSection {
    pub solver: EigSolver,
    pub dense_threshold: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EigenSection {
    fn default() -> Self {
        let e = EigConfig::default();
        EigenSection {
            solver: e.solver,
            dense_threshold: e.dense_threshold,
            tol: e.tol,
            seed: e.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Density snapshot period in iterations; 0 disables snapshots.
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            checkpoint_every: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.mesh.nelx == 0 || self.mesh.nely == 0 {
            return bad("mesh.nelx and mesh.nely must be positive".into());
        }
        if !(self.mesh.t > 0.0) {
            return bad(format!("mesh.t must be positive, got {}", self.mesh.t));
        }
        if !(self.field.f > 0.0 && self.field.f <= 1.0) {
            return bad(format!("field.f must lie in (0, 1], got {}", self.field.f));
        }
        if !(self.field.rmin > 0.0 && self.field.beta > 0.0) || !(0.0..=1.0).contains(&self.field.eta) {
            return bad("field.rmin, field.beta must be positive and field.eta in [0, 1]".into());
        }
        if !(-1.0..0.5).contains(&self.material.nu) {
            return bad(format!("material.nu must lie in [-1, 0.5), got {}", self.material.nu));
        }
        self.interp()?;
        let c = &self.constraint;
        if c.pc_bar < 0.0 || c.alpha < 1.0 || !(c.rho > 0.0) {
            return bad("constraint needs Pc_bar >= 0, alpha >= 1 and rho > 0".into());
        }
        if c.n_constraints > c.n_eigs {
            return bad(format!(
                "constraint.n_constraints ({}) exceeds constraint.n_eigs ({})",
                c.n_constraints, c.n_eigs
            ));
        }
        if c.pc_bar > 0.0 && c.n_constraints == 0 {
            return bad("buckling constraint requested with n_constraints = 0".into());
        }
        if let Some(r) = c.rho_schedule {
            if !(r.factor >= 1.0) || r.period == 0 {
                return bad("constraint.rho_schedule needs factor >= 1 and period > 0".into());
            }
        }
        let o = &self.optimizer;
        if !(o.move_limit > 0.0 && o.move_limit <= 1.0) || !(o.asymin > 0.0) {
            return bad("optimizer.move must lie in (0, 1] and optimizer.asymin be positive".into());
        }
        let ps = &o.continuation;
        if !(ps.p_start >= 1.0 && ps.p_max >= ps.p_start && ps.p_step >= 0.0) {
            return bad("optimizer.continuation needs 1 <= p_start <= p_max and p_step >= 0".into());
        }
        Ok(())
    }

    pub fn interp(&self) -> Result<InterpSpec> {
        InterpSpec::new(self.material.e0, self.material.e1, self.optimizer.continuation.p_start)
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            rmin: self.field.rmin,
            eta: self.field.eta,
            beta: self.field.beta,
        }
    }

    pub fn eig_config(&self) -> EigConfig {
        EigConfig {
            nev: self.constraint.n_eigs,
            solver: self.eigen.solver,
            dense_threshold: self.eigen.dense_threshold,
            tol: self.eigen.tol,
            seed: self.eigen.seed,
        }
    }

    pub fn sens_mode(&self) -> SensMode {
        if self.sensitivity.consistent {
            SensMode::Consistent
        } else {
            SensMode::Inconsistent
        }
    }

    pub fn opt_settings(&self) -> OptSettings {
        let c = &self.constraint;
        let p = &self.optimizer.continuation;
        let r = c.rho_schedule.unwrap_or(RhoSchedule {
            factor: 1.0,
            period: 0,
            max: c.rho,
        });
        OptSettings {
            volfrac: self.field.f,
            volume_on: self.field.volume_on,
            constraint: ConstraintSpec {
                kind: c.kind,
                pc_bar: c.pc_bar,
                alpha: c.alpha,
                rho: c.rho,
            },
            n_constraints: c.n_constraints,
            eig: self.eig_config(),
            sens: self.sens_mode(),
            max_iters: self.optimizer.max_iters,
            change_tol: self.optimizer.change_tol,
            schedule: ContinuationSchedule {
                p_start: p.p_start,
                p_step: p.p_step,
                p_period: p.p_period,
                p_max: p.p_max,
                rho_factor: r.factor,
                rho_period: r.period,
                rho_max: r.max,
            },
            mma: MmaSettings {
                move_limit: self.optimizer.move_limit,
                asymin: self.optimizer.asymin,
                ..MmaSettings::default()
            },
            exclude_pseudo: c.exclude_pseudo,
        }
    }
}
