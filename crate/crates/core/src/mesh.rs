//! Regular rectangular grids of bilinear quadrilaterals.
//!
//! Numbering is column-major from the lower-left corner: node `(ix, iy)` has
//! index `ix * (nely + 1) + iy`, element `(ix, iy)` has index `ix * nely + iy`.
//! Each node carries two DOFs `(ux, uy)` at `2 * node` and `2 * node + 1`.
//! Element nodes run counter-clockwise starting at the lower-left corner.
//! Tests that compare mode shapes or DOF maps rely on this layout.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DOF_PER_NODE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMesh {
    pub nelx: usize,
    pub nely: usize,
    /// Element edge length in x.
    pub lx: f64,
    /// Element edge length in y.
    pub ly: f64,
    /// Out-of-plane thickness.
    pub t: f64,
}

impl GridMesh {
    pub fn n_elems(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_dofs(&self) -> usize {
        DOF_PER_NODE * self.n_nodes()
    }

    pub fn node(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nelx && iy <= self.nely);
        ix * (self.nely + 1) + iy
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let ix = node / (self.nely + 1);
        let iy = node % (self.nely + 1);
        (ix as f64 * self.lx, iy as f64 * self.ly)
    }

    pub fn elem(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nelx && iy < self.nely);
        ix * self.nely + iy
    }

    /// Grid position `(ix, iy)` of element `e`.
    pub fn elem_pos(&self, e: usize) -> (usize, usize) {
        (e / self.nely, e % self.nely)
    }

    pub fn elem_center(&self, e: usize) -> (f64, f64) {
        let (ix, iy) = self.elem_pos(e);
        ((ix as f64 + 0.5) * self.lx, (iy as f64 + 0.5) * self.ly)
    }

    pub fn element_nodes(&self, e: usize) -> Result<[usize; 4]> {
        if e >= self.n_elems() {
            return Err(Error::IndexOutOfRange {
                index: e,
                len: self.n_elems(),
            });
        }
        let (ix, iy) = self.elem_pos(e);
        Ok([
            self.node(ix, iy),
            self.node(ix + 1, iy),
            self.node(ix + 1, iy + 1),
            self.node(ix, iy + 1),
        ])
    }

    /// The 8 global DOFs of element `e`, `(ux, uy)` per node in node order.
    pub fn element_dofs(&self, e: usize) -> Result<[usize; 8]> {
        let nodes = self.element_nodes(e)?;
        let mut dofs = [0usize; 8];
        for (k, &n) in nodes.iter().enumerate() {
            dofs[2 * k] = 2 * n;
            dofs[2 * k + 1] = 2 * n + 1;
        }
        Ok(dofs)
    }

    /// Unchecked variant for hot loops over `0..n_elems()`.
    pub(crate) fn dofs_of(&self, e: usize) -> [usize; 8] {
        let (ix, iy) = self.elem_pos(e);
        let n0 = ix * (self.nely + 1) + iy;
        let n1 = n0 + self.nely + 1;
        let nodes = [n0, n1, n1 + 1, n0 + 1];
        let mut dofs = [0usize; 8];
        for (k, &n) in nodes.iter().enumerate() {
            dofs[2 * k] = 2 * n;
            dofs[2 * k + 1] = 2 * n + 1;
        }
        dofs
    }
}

pub fn build_grid(nelx: usize, nely: usize, lx: f64, ly: f64, t: f64) -> Result<GridMesh> {
    if nelx == 0 || nely == 0 {
        return Err(Error::Config(format!(
            "element counts must be positive, got {nelx}x{nely}"
        )));
    }
    for (name, v) in [("lx", lx), ("ly", ly), ("t", t)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(GridMesh {
        nelx,
        nely,
        lx,
        ly,
        t,
    })
}

/// Supports, loads and passive element sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub fixed_dofs: BTreeSet<usize>,
    pub loads: Vec<(usize, f64)>,
    pub passive_solid: BTreeSet<usize>,
    pub passive_void: BTreeSet<usize>,
}

impl BoundarySpec {
    pub fn validate(&self, mesh: &GridMesh) -> Result<()> {
        let n = mesh.n_dofs();
        let m = mesh.n_elems();
        if let Some(&d) = self.fixed_dofs.iter().find(|&&d| d >= n) {
            return Err(Error::IndexOutOfRange { index: d, len: n });
        }
        for &(d, v) in &self.loads {
            if d >= n {
                return Err(Error::IndexOutOfRange { index: d, len: n });
            }
            if v != 0.0 && self.fixed_dofs.contains(&d) {
                return Err(Error::Config(format!(
                    "DOF {d} is prescribed and also carries a load"
                )));
            }
        }
        for &e in self.passive_solid.iter().chain(self.passive_void.iter()) {
            if e >= m {
                return Err(Error::IndexOutOfRange { index: e, len: m });
            }
        }
        if let Some(e) = self.passive_solid.intersection(&self.passive_void).next() {
            return Err(Error::Config(format!(
                "element {e} is both passive solid and passive void"
            )));
        }
        Ok(())
    }

    /// Dense global load vector.
    pub fn load_vector(&self, mesh: &GridMesh) -> Vec<f64> {
        let mut f = vec![0.0; mesh.n_dofs()];
        for &(d, v) in &self.loads {
            f[d] += v;
        }
        f
    }

    pub fn fix_node(&mut self, node: usize) {
        self.fixed_dofs.insert(2 * node);
        self.fixed_dofs.insert(2 * node + 1);
    }

    /// Lumps a uniform traction with resultant `total` over the nodes
    /// `nodes` (ordered along a straight edge, equally spaced) in DOF
    /// direction `dir` (0 = x, 1 = y). End nodes get half the interior share.
    pub fn add_edge_load(&mut self, nodes: &[usize], dir: usize, total: f64) {
        match nodes.len() {
            0 => {}
            1 => self.loads.push((2 * nodes[0] + dir, total)),
            k => {
                let share = total / (k - 1) as f64;
                for (i, &n) in nodes.iter().enumerate() {
                    let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
                    self.loads.push((2 * n + dir, w * share));
                }
            }
        }
    }
}

pub const COLUMN_LENGTH: f64 = 10.0;
pub const COLUMN_HEIGHT: f64 = 1.0;
pub const COLUMN_THICKNESS: f64 = 0.005;
pub const COLUMN_LOAD: f64 = 2.5e5;
pub const COLUMN_MODULUS: f64 = 2.0e11;

/// Cantilever column of length 10 and height 1, clamped at `x = 0` and
/// compressed axially at the free end by a uniform traction of resultant
/// `2.5e5`.
pub fn column_benchmark_spec(nelx: usize, nely: usize) -> Result<(GridMesh, BoundarySpec)> {
    let mesh = build_grid(
        nelx,
        nely,
        COLUMN_LENGTH / nelx as f64,
        COLUMN_HEIGHT / nely.max(1) as f64,
        COLUMN_THICKNESS,
    )?;
    let mut bc = BoundarySpec::default();
    for iy in 0..=nely {
        bc.fix_node(mesh.node(0, iy));
    }
    let tip: Vec<usize> = (0..=nely).map(|iy| mesh.node(nelx, iy)).collect();
    bc.add_edge_load(&tip, 0, -COLUMN_LOAD);
    bc.validate(&mesh)?;
    Ok((mesh, bc))
}

/// Block of `nelx × nely` unit elements clamped along `x = 0` and
/// compressed by a uniform traction of resultant `total` on `x = nelx`.
pub fn compressed_beam_spec(nelx: usize, nely: usize, total: f64) -> Result<(GridMesh, BoundarySpec)> {
    let mesh = build_grid(nelx, nely, 1.0, 1.0, 1.0)?;
    let mut bc = BoundarySpec::default();
    for iy in 0..=nely {
        bc.fix_node(mesh.node(0, iy));
    }
    let tip: Vec<usize> = (0..=nely).map(|iy| mesh.node(nelx, iy)).collect();
    bc.add_edge_load(&tip, 0, -total);
    bc.validate(&mesh)?;
    Ok((mesh, bc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid() {
        let m = build_grid(1, 1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_dofs(), 8);
        assert_eq!(m.n_elems(), 1);
        assert_eq!(m.element_dofs(0).unwrap(), [0, 1, 4, 5, 6, 7, 2, 3]);
    }

    #[test]
    fn column_ladder_grid_counts() {
        let m = build_grid(10, 2, 1.0, 0.5, 0.005).unwrap();
        assert_eq!(m.n_nodes(), 33);
        assert_eq!(m.n_dofs(), 66);
        assert_eq!(m.lx / m.ly, 2.0);
    }

    #[test]
    fn transposed_grids_have_same_element_count() {
        let a = build_grid(90, 210, 1.0, 1.0, 1.0).unwrap();
        let b = build_grid(210, 90, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(a.n_elems(), 18900);
        assert_eq!(b.n_elems(), 18900);
    }

    #[test]
    fn non_positive_dimensions_rejected() {
        assert!(build_grid(0, 1, 1.0, 1.0, 1.0).is_err());
        assert!(build_grid(1, 1, -1.0, 1.0, 1.0).is_err());
        assert!(build_grid(1, 1, 1.0, 0.0, 1.0).is_err());
        assert!(build_grid(1, 1, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn element_index_out_of_range() {
        let m = build_grid(2, 2, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            m.element_dofs(4),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn neighbours_share_an_edge() {
        let m = build_grid(2, 1, 1.0, 1.0, 1.0).unwrap();
        let a: BTreeSet<_> = m.element_dofs(0).unwrap().into_iter().collect();
        let b: BTreeSet<_> = m.element_dofs(1).unwrap().into_iter().collect();
        assert_eq!(a.intersection(&b).count(), 4);
    }

    #[test]
    fn interior_nodes_touch_four_elements() {
        let m = build_grid(10, 2, 1.0, 0.5, 0.005).unwrap();
        let mut count = vec![0usize; m.n_nodes()];
        for e in 0..m.n_elems() {
            for n in m.element_nodes(e).unwrap() {
                count[n] += 1;
            }
        }
        for ix in 0..=m.nelx {
            for iy in 0..=m.nely {
                let interior = ix > 0 && ix < m.nelx && iy > 0 && iy < m.nely;
                let corner = (ix == 0 || ix == m.nelx) && (iy == 0 || iy == m.nely);
                let expected = if interior {
                    4
                } else if corner {
                    1
                } else {
                    2
                };
                assert_eq!(count[m.node(ix, iy)], expected, "node ({ix},{iy})");
            }
        }
    }

    #[test]
    fn dof_map_is_a_bijection() {
        let m = build_grid(4, 3, 1.0, 1.0, 1.0).unwrap();
        let mut seen = vec![false; m.n_dofs()];
        for e in 0..m.n_elems() {
            let d = m.element_dofs(e).unwrap();
            assert_eq!(d, m.dofs_of(e));
            let nodes = m.element_nodes(e).unwrap();
            let distinct: BTreeSet<_> = nodes.iter().collect();
            assert_eq!(distinct.len(), 4);
            for x in d {
                seen[x] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn column_supports_and_loads() {
        let (mesh, bc) = column_benchmark_spec(10, 2).unwrap();
        assert_eq!(mesh.n_nodes(), 33);
        assert_eq!(bc.fixed_dofs.len(), 6);
        assert_eq!(bc.loads.len(), 3);
        let sum: f64 = bc.loads.iter().map(|l| l.1).sum();
        assert!((sum + 2.5e5).abs() < 1e-6);
        for &(d, _) in &bc.loads {
            assert_eq!(d % 2, 0, "load must be axial");
        }
        // edge nodes carry half the interior load
        assert!((bc.loads[0].1 * 2.0 - bc.loads[1].1).abs() < 1e-9);
    }

    #[test]
    fn column_load_sum_is_mesh_independent() {
        for (nx, ny) in [(10, 2), (20, 4), (160, 32)] {
            let (_, bc) = column_benchmark_spec(nx, ny).unwrap();
            let sum: f64 = bc.loads.iter().map(|l| l.1).sum();
            assert!((sum + 2.5e5).abs() < 1e-6, "{nx}x{ny}");
        }
    }

    #[test]
    fn loaded_support_rejected() {
        let m = build_grid(1, 1, 1.0, 1.0, 1.0).unwrap();
        let mut bc = BoundarySpec::default();
        bc.fix_node(0);
        bc.loads.push((0, 1.0));
        assert!(bc.validate(&m).is_err());
        bc.loads[0].1 = 0.0;
        assert!(bc.validate(&m).is_ok());
    }

    #[test]
    fn passive_overlap_rejected() {
        let m = build_grid(2, 2, 1.0, 1.0, 1.0).unwrap();
        let mut bc = BoundarySpec::default();
        bc.passive_solid.insert(1);
        bc.passive_void.insert(1);
        assert!(bc.validate(&m).is_err());
    }
}
