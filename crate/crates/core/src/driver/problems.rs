//! Benchmark geometries built from a [`RunConfig`].

use std::collections::BTreeSet;

use crate::analysis::FeModel;
use crate::elements::ElementKind;
use crate::error::{Error, Result};
use crate::field::{DensityFilter, InterpSpec};
use crate::mesh::{build_grid, column_benchmark_spec, compressed_beam_spec, BoundarySpec, GridMesh, COLUMN_MODULUS};

use super::config::{CustomSection, Direction, ElemRect, ProblemSection, RunConfig, SupportDofs, TwoPinSection};

/// Default two-pin domain width. Load factors scale linearly with the
/// length unit; this value puts `λ₁` of the uniform `x̄ = 0.2` design on
/// the 90×210 mesh at 0.662.
pub const TWO_PIN_WIDTH: f64 = 1.5362;

/// Resolved two-pin layout, in grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPinLayout {
    pub patch: usize,
    pub pin_a: [usize; 2],
    pub pin_b: [usize; 2],
    /// First and last loaded node row on the right edge.
    pub load_rows: (usize, usize),
    /// Lower-left element of each solid patch (a, b, load).
    pub patches: [[usize; 2]; 3],
}

/// Start of a `size`-wide block around grid line `at` on an axis of `n`
/// elements; ties go toward the middle of the axis.
fn block_start(at: usize, size: usize, n: usize) -> usize {
    let hi = size.div_ceil(2);
    let lo = size / 2;
    let centre_of = |s: isize| s as f64 + size as f64 / 2.0;
    let mid = n as f64 / 2.0;
    let a = at as isize - hi as isize;
    let b = at as isize - lo as isize;
    let s = if (centre_of(a) - mid).abs() < (centre_of(b) - mid).abs() { a } else { b };
    s.clamp(0, (n - size.min(n)) as isize) as usize
}

pub fn two_pin_layout(nelx: usize, nely: usize, spec: &TwoPinSection) -> Result<TwoPinLayout> {
    let patch = spec
        .patch
        .unwrap_or_else(|| ((9 * nelx) as f64 / 90.0).round().max(1.0) as usize);
    if patch == 0 || patch > nelx || 3 * patch > nely {
        return Err(Error::Config(format!(
            "two_pin patch size {patch} does not fit a {nelx}x{nely} mesh"
        )));
    }
    let cy = nely as f64 / 2.0;
    let pin_a = spec.pin_a.unwrap_or_else(|| {
        let lo = (cy - nelx as f64 - patch as f64 / 2.0).round().max(0.0) as usize;
        [patch / 2, lo + patch / 2]
    });
    let pin_b = spec.pin_b.unwrap_or([pin_a[0], nely.saturating_sub(pin_a[1])]);
    for p in [pin_a, pin_b] {
        if p[0] > nelx || p[1] > nely {
            return Err(Error::Config(format!("pin node {p:?} outside the {nelx}x{nely} mesh")));
        }
    }
    let width = spec.load_width.unwrap_or(if (nely - (patch - 1)) % 2 == 0 { patch - 1 } else { patch });
    if width > nely {
        return Err(Error::Config(format!("load width {width} exceeds mesh height {nely}")));
    }
    let first = (nely - width) / 2;
    let patches = [
        [block_start(pin_a[0], patch, nelx), block_start(pin_a[1], patch, nely)],
        [block_start(pin_b[0], patch, nelx), block_start(pin_b[1], patch, nely)],
        [nelx - patch, (nely - patch) / 2],
    ];
    Ok(TwoPinLayout {
        patch,
        pin_a,
        pin_b,
        load_rows: (first, first + width),
        patches,
    })
}

fn add_rect(mesh: &GridMesh, set: &mut BTreeSet<usize>, r: &ElemRect) -> Result<()> {
    if r.ix + r.nx > mesh.nelx || r.iy + r.ny > mesh.nely {
        return Err(Error::Config(format!("element block {r:?} exceeds the mesh")));
    }
    for ix in r.ix..r.ix + r.nx {
        for iy in r.iy..r.iy + r.ny {
            set.insert(mesh.elem(ix, iy));
        }
    }
    Ok(())
}

fn two_pin(cfg: &RunConfig, spec: &TwoPinSection) -> Result<(GridMesh, BoundarySpec)> {
    let (nelx, nely) = (cfg.mesh.nelx, cfg.mesh.nely);
    let lay = two_pin_layout(nelx, nely, spec)?;
    let h = spec.width / nelx as f64;
    let mesh = build_grid(nelx, nely, cfg.mesh.lx.unwrap_or(h), cfg.mesh.ly.unwrap_or(h), cfg.mesh.t)?;
    let mut bc = BoundarySpec::default();
    bc.fix_node(mesh.node(lay.pin_a[0], lay.pin_a[1]));
    bc.fix_node(mesh.node(lay.pin_b[0], lay.pin_b[1]));
    let nodes: Vec<usize> = (lay.load_rows.0..=lay.load_rows.1).map(|iy| mesh.node(nelx, iy)).collect();
    bc.add_edge_load(&nodes, 1, -spec.load);
    for p in lay.patches {
        add_rect(&mesh, &mut bc.passive_solid, &ElemRect { ix: p[0], iy: p[1], nx: lay.patch, ny: lay.patch })?;
    }
    Ok((mesh, bc))
}

fn custom(cfg: &RunConfig, spec: &CustomSection) -> Result<(GridMesh, BoundarySpec)> {
    let m = &cfg.mesh;
    let mesh = build_grid(m.nelx, m.nely, m.lx.unwrap_or(1.0), m.ly.unwrap_or(1.0), m.t)?;
    let check = |n: [usize; 2]| {
        if n[0] > mesh.nelx || n[1] > mesh.nely {
            Err(Error::Config(format!("node {n:?} outside the {}x{} mesh", mesh.nelx, mesh.nely)))
        } else {
            Ok(mesh.node(n[0], n[1]))
        }
    };
    let mut bc = BoundarySpec::default();
    for s in &spec.supports {
        let n = check(s.node)?;
        if s.dofs != SupportDofs::Y {
            bc.fixed_dofs.insert(2 * n);
        }
        if s.dofs != SupportDofs::X {
            bc.fixed_dofs.insert(2 * n + 1);
        }
    }
    for l in &spec.loads {
        check(l.from)?;
        check(l.to)?;
        let dir = match l.dir {
            Direction::X => 0,
            Direction::Y => 1,
        };
        let nodes: Vec<usize> = if l.from[0] == l.to[0] {
            let (a, b) = (l.from[1].min(l.to[1]), l.from[1].max(l.to[1]));
            (a..=b).map(|iy| mesh.node(l.from[0], iy)).collect()
        } else if l.from[1] == l.to[1] {
            let (a, b) = (l.from[0].min(l.to[0]), l.from[0].max(l.to[0]));
            (a..=b).map(|ix| mesh.node(ix, l.from[1])).collect()
        } else {
            return Err(Error::Config(format!("load line {:?}-{:?} is not axis aligned", l.from, l.to)));
        };
        bc.add_edge_load(&nodes, dir, l.total);
    }
    for r in &spec.solid {
        add_rect(&mesh, &mut bc.passive_solid, r)?;
    }
    for r in &spec.void {
        add_rect(&mesh, &mut bc.passive_void, r)?;
    }
    Ok((mesh, bc))
}

/// Mesh, supports and base interpolation (at the starting `p`).
pub fn build_geometry(cfg: &RunConfig) -> Result<(GridMesh, BoundarySpec, InterpSpec)> {
    let interp = cfg.interp()?;
    let (mesh, bc, interp) = match &cfg.problem {
        ProblemSection::TwoPin(s) => {
            let (m, b) = two_pin(cfg, s)?;
            (m, b, interp)
        }
        ProblemSection::Column => {
            let (m, b) = column_benchmark_spec(cfg.mesh.nelx, cfg.mesh.nely)?;
            let ratio = cfg.material.e0 / cfg.material.e1;
            (m, b, InterpSpec::new(COLUMN_MODULUS * ratio, COLUMN_MODULUS, interp.p)?)
        }
        ProblemSection::CompressedBeam(s) => {
            let (m, b) = compressed_beam_spec(cfg.mesh.nelx, cfg.mesh.nely, s.load)?;
            (m, b, interp)
        }
        ProblemSection::Custom(s) => {
            let (m, b) = custom(cfg, s)?;
            (m, b, interp)
        }
    };
    bc.validate(&mesh)?;
    if bc.loads.iter().all(|&(_, v)| v == 0.0) {
        return Err(Error::Config("problem has no load".into()));
    }
    Ok((mesh, bc, interp))
}

/// Everything a run needs.
pub struct Problem {
    pub model: FeModel,
    pub filter: DensityFilter,
    pub interp: InterpSpec,
}

pub fn build_problem(cfg: &RunConfig, kind: ElementKind) -> Result<Problem> {
    let (mesh, bc, interp) = build_geometry(cfg)?;
    let filter = DensityFilter::new(&mesh, cfg.filter_spec(), &bc.passive_solid, &bc.passive_void)?;
    let model = FeModel::new(mesh, bc, kind, cfg.material.nu)?;
    Ok(Problem { model, filter, interp })
}
