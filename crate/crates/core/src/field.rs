//! Material interpolation, density filtering and threshold projection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::GridMesh;

/// Power-law interpolation of stiffness (`h1`) and stress stiffness (`h2`).
///
/// `h1(x) = E0 + xᵖ (E1 - E0)` and `h2(x) = xᵖ E1`. Using a void-free
/// `h2` keeps low-density regions from producing spurious buckling modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpSpec {
    pub e0: f64,
    pub e1: f64,
    pub p: f64,
}

impl InterpSpec {
    pub fn new(e0: f64, e1: f64, p: f64) -> Result<Self> {
        if !(e0 > 0.0 && e1 > e0) {
            return Err(Error::Config(format!(
                "need 0 < E0 < E1, got E0 = {e0}, E1 = {e1}"
            )));
        }
        if !(p >= 1.0) {
            return Err(Error::Config(format!("penalization must be >= 1, got {p}")));
        }
        Ok(InterpSpec { e0, e1, p })
    }

    pub fn with_p(self, p: f64) -> Self {
        InterpSpec { p, ..self }
    }

    #[inline]
    pub fn h1(&self, x: f64) -> f64 {
        self.e0 + x.powf(self.p) * (self.e1 - self.e0)
    }

    #[inline]
    pub fn h2(&self, x: f64) -> f64 {
        x.powf(self.p) * self.e1
    }

    #[inline]
    pub fn dh1(&self, x: f64) -> f64 {
        if x == 0.0 && self.p > 1.0 {
            return 0.0;
        }
        self.p * x.powf(self.p - 1.0) * (self.e1 - self.e0)
    }

    #[inline]
    pub fn dh2(&self, x: f64) -> f64 {
        if x == 0.0 && self.p > 1.0 {
            return 0.0;
        }
        self.p * x.powf(self.p - 1.0) * self.e1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Filter radius in element widths.
    pub rmin: f64,
    pub eta: f64,
    pub beta: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            rmin: 2.0,
            eta: 0.5,
            beta: 6.0,
        }
    }
}

/// Which density field the volume constraint measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeOn {
    Design,
    Physical,
}

/// Raw, filtered and projected densities.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignField {
    pub x: Vec<f64>,
    pub xtilde: Vec<f64>,
    pub xbar: Vec<f64>,
}

/// Hat-weight density filter with Heaviside-type projection.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    spec: FilterSpec,
    /// Row-normalized weights, CSR layout.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    passive_solid: BTreeSet<usize>,
    passive_void: BTreeSet<usize>,
}

impl DensityFilter {
    pub fn new(
        mesh: &GridMesh,
        spec: FilterSpec,
        passive_solid: &BTreeSet<usize>,
        passive_void: &BTreeSet<usize>,
    ) -> Result<Self> {
        if !(spec.rmin > 0.0) || !(spec.beta > 0.0) || !(0.0..=1.0).contains(&spec.eta) {
            return Err(Error::Config(format!("invalid filter parameters {spec:?}")));
        }
        let reach = spec.rmin.ceil() as isize;
        let (nx, ny) = (mesh.nelx as isize, mesh.nely as isize);
        let mut row_ptr = Vec::with_capacity(mesh.n_elems() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for e in 0..mesh.n_elems() {
            let (ix, iy) = mesh.elem_pos(e);
            let (ix, iy) = (ix as isize, iy as isize);
            let start = cols.len();
            for jx in (ix - reach).max(0)..=(ix + reach).min(nx - 1) {
                for jy in (iy - reach).max(0)..=(iy + reach).min(ny - 1) {
                    let d = (((jx - ix).pow(2) + (jy - iy).pow(2)) as f64).sqrt();
                    let w = spec.rmin - d;
                    if w > 0.0 {
                        cols.push(mesh.elem(jx as usize, jy as usize));
                        weights.push(w);
                    }
                }
            }
            let sum: f64 = weights[start..].iter().sum();
            weights[start..].iter_mut().for_each(|w| *w /= sum);
            row_ptr.push(cols.len());
        }
        Ok(DensityFilter {
            spec,
            row_ptr,
            cols,
            weights,
            passive_solid: passive_solid.clone(),
            passive_void: passive_void.clone(),
        })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn n_elems(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_passive(&self, e: usize) -> bool {
        self.passive_solid.contains(&e) || self.passive_void.contains(&e)
    }

    pub fn passive_solid(&self) -> &BTreeSet<usize> {
        &self.passive_solid
    }

    pub fn passive_void(&self) -> &BTreeSet<usize> {
        &self.passive_void
    }

    /// Row `e` of the weight matrix as `(column, weight)` pairs.
    pub fn row(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[e]..self.row_ptr[e + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_elems())
            .map(|e| self.row(e).map(|(j, w)| w * x[j]).sum())
            .collect()
    }

    /// `Wᵀ g`.
    pub fn filter_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_elems()];
        for e in 0..self.n_elems() {
            for (j, w) in self.row(e) {
                out[j] += w * g[e];
            }
        }
        out
    }

    fn proj_denominator(&self) -> f64 {
        let FilterSpec { eta, beta, .. } = self.spec;
        (beta * eta).tanh() + (beta * (1.0 - eta)).tanh()
    }

    pub fn project(&self, xt: f64) -> f64 {
        let FilterSpec { eta, beta, .. } = self.spec;
        ((beta * eta).tanh() + (beta * (xt - eta)).tanh()) / self.proj_denominator()
    }

    pub fn project_derivative(&self, xt: f64) -> f64 {
        let FilterSpec { eta, beta, .. } = self.spec;
        let th = (beta * (xt - eta)).tanh();
        beta * (1.0 - th * th) / self.proj_denominator()
    }

    pub fn filter_project(&self, x: &[f64]) -> Result<DesignField> {
        if x.len() != self.n_elems() {
            return Err(Error::Dimension {
                expected: self.n_elems(),
                got: x.len(),
            });
        }
        let xtilde = self.filter(x);
        let mut xbar: Vec<f64> = xtilde.iter().map(|&v| self.project(v)).collect();
        for &e in &self.passive_solid {
            xbar[e] = 1.0;
        }
        for &e in &self.passive_void {
            xbar[e] = 0.0;
        }
        Ok(DesignField {
            x: x.to_vec(),
            xtilde,
            xbar,
        })
    }

    /// Volume fraction and its gradient with respect to `x`.
    pub fn volume(&self, field: &DesignField, on: VolumeOn) -> (f64, Vec<f64>) {
        let m = self.n_elems() as f64;
        match on {
            VolumeOn::Physical => (
                field.xbar.iter().sum::<f64>() / m,
                self.chain_rule(&vec![1.0 / m; self.n_elems()], field),
            ),
            VolumeOn::Design => {
                let g = (0..self.n_elems())
                    .map(|e| if self.is_passive(e) { 0.0 } else { 1.0 / m })
                    .collect();
                (field.x.iter().sum::<f64>() / m, g)
            }
        }
    }

    /// Maps `∂L/∂x̄` to `∂L/∂x`; passive entries are zero.
    pub fn chain_rule(&self, dl_dxbar: &[f64], field: &DesignField) -> Vec<f64> {
        let mut g: Vec<f64> = dl_dxbar
            .iter()
            .zip(&field.xtilde)
            .map(|(&d, &xt)| d * self.project_derivative(xt))
            .collect();
        for e in self.passive_solid.iter().chain(&self.passive_void) {
            g[*e] = 0.0;
        }
        let mut out = self.filter_transpose(&g);
        for e in self.passive_solid.iter().chain(&self.passive_void) {
            out[*e] = 0.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filter(nx: usize, ny: usize, spec: FilterSpec) -> DensityFilter {
        let mesh = build_grid(nx, ny, 1.0, 1.0, 1.0).unwrap();
        DensityFilter::new(&mesh, spec, &BTreeSet::new(), &BTreeSet::new()).unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let h = InterpSpec::new(1e-6, 1.0, 3.0).unwrap();
        assert_eq!(h.h1(0.0), 1e-6);
        assert_eq!(h.h1(1.0), 1.0);
        assert_eq!(h.h2(0.0), 0.0);
        assert_eq!(h.h2(1.0), 1.0);
        assert!((h.h1(0.5) - (1e-6 + 0.125 * (1.0 - 1e-6))).abs() < 1e-15);
        assert_eq!(h.dh1(0.0), 0.0);
        assert_eq!(h.dh2(0.0), 0.0);
    }

    #[test]
    fn interpolation_derivatives_match_fd() {
        let h = InterpSpec::new(1e-3, 2.0, 2.5).unwrap();
        for &x in &[0.1, 0.4, 0.9] {
            let d = 1e-6;
            let fd1 = (h.h1(x + d) - h.h1(x - d)) / (2.0 * d);
            let fd2 = (h.h2(x + d) - h.h2(x - d)) / (2.0 * d);
            assert!((fd1 - h.dh1(x)).abs() < 1e-8);
            assert!((fd2 - h.dh2(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_interp_rejected() {
        assert!(InterpSpec::new(0.0, 1.0, 3.0).is_err());
        assert!(InterpSpec::new(1.0, 1.0, 3.0).is_err());
        assert!(InterpSpec::new(1e-6, 1.0, 0.5).is_err());
    }

    #[test]
    fn weights_are_row_stochastic() {
        let f = filter(7, 5, FilterSpec::default());
        for e in 0..35 {
            let s: f64 = f.row(e).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let x = vec![0.37; 35];
        for v in f.filter(&x) {
            assert!((v - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_limits() {
        let f = filter(3, 3, FilterSpec { rmin: 1.5, eta: 0.5, beta: 1e-6 });
        for &xt in &[0.0, 0.2, 0.77, 1.0] {
            assert!((f.project(xt) - xt).abs() < 1e-5);
        }
        let f = filter(3, 3, FilterSpec::default());
        assert!((f.project(0.5) - 0.5).abs() < 1e-15);
        assert!(f.project(0.0).abs() < 1e-15);
        assert!((f.project(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_filter_passes_gradient_through() {
        let f = filter(4, 4, FilterSpec { rmin: 0.9, eta: 0.5, beta: 1e-7 });
        let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let field = f.filter_project(&x).unwrap();
        assert_eq!(field.xtilde, x);
        let g: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let out = f.chain_rule(&g, &field);
        for i in 0..16 {
            assert!((out[i] - g[i]).abs() < 1e-6 * g[i].abs().max(1e-3));
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let mesh = build_grid(5, 5, 1.0, 1.0, 1.0).unwrap();
        let f = DensityFilter::new(&mesh, FilterSpec::default(), &BTreeSet::new(), &BTreeSet::new())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(0.1..0.9)).collect();
        let c: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |x: &[f64]| -> f64 {
            let fp = f.filter_project(x).unwrap();
            fp.xbar.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let field = f.filter_project(&x).unwrap();
        let g = f.chain_rule(&c, &field);
        for e in 0..25 {
            let h = 1e-6 * (1.0 + x[e].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[e] += h;
            xm[e] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!((fd - g[e]).abs() <= 1e-8 * fd.abs().max(1e-2), "{e}: {fd} vs {}", g[e]);
        }
    }

    #[test]
    fn symmetric_gradient_pattern() {
        let f = filter(6, 6, FilterSpec::default());
        let x = vec![0.3; 36];
        let field = f.filter_project(&x).unwrap();
        let g = f.chain_rule(&vec![1.0; 36], &field);
        for ix in 0..6 {
            for iy in 0..6 {
                let a = g[ix * 6 + iy];
                for b in [g[(5 - ix) * 6 + iy], g[ix * 6 + (5 - iy)], g[iy * 6 + ix]] {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn passive_elements_forced_and_frozen() {
        let mesh = build_grid(4, 4, 1.0, 1.0, 1.0).unwrap();
        let solid: BTreeSet<usize> = [0, 1].into();
        let void: BTreeSet<usize> = [15].into();
        let f = DensityFilter::new(&mesh, FilterSpec::default(), &solid, &void).unwrap();
        let field = f.filter_project(&vec![0.5; 16]).unwrap();
        assert_eq!(field.xbar[0], 1.0);
        assert_eq!(field.xbar[15], 0.0);
        let g = f.chain_rule(&vec![1.0; 16], &field);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[15], 0.0);
        assert!(g[5] > 0.0);
    }

    proptest! {
        #[test]
        fn projection_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, beta in 0.5f64..32.0) {
            let f = filter(2, 2, FilterSpec { rmin: 1.5, eta: 0.5, beta });
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(f.project(lo) <= f.project(hi));
            prop_assert!(f.project(lo) >= -1e-15 && f.project(hi) <= 1.0 + 1e-15);
        }

        #[test]
        fn filtered_fields_stay_in_unit_box(seed in 0u64..1000) {
            let f = filter(6, 4, FilterSpec::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..=1.0)).collect();
            let field = f.filter_project(&x).unwrap();
            for (&a, &b) in field.xtilde.iter().zip(&field.xbar) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&b));
            }
        }
    }
}
