//! Plane-stress element matrices for rectangular bilinear quadrilaterals.
//!
//! Two element kinds are provided:
//!
//! * `Q4`: the conforming bilinear element.
//! * `Q6`: the bilinear element enriched with the two quadratic bubble modes
//!   `1 - ξ²` and `1 - η²` in each displacement component. The four internal
//!   amplitudes are condensed out at element level, so `Q6` exposes the same
//!   8 DOFs as `Q4`.
//!
//! All matrices are integrated with 2×2 Gauss quadrature. For the stress
//! stiffness the `Q6` stresses include the bubble contribution through the
//! recovery operator while the geometric operator uses the compatible shape
//! functions only, keeping `g0` an 8×8 matrix on the element DOFs.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Vector8 = SVector<f64, 8>;
type Matrix3 = SMatrix<f64, 3, 3>;
type Matrix3x8 = SMatrix<f64, 3, 8>;
type Matrix3x4 = SMatrix<f64, 3, 4>;
type Matrix4 = SMatrix<f64, 4, 4>;
type Matrix4x8 = SMatrix<f64, 4, 8>;

const GAUSS: f64 = 0.577_350_269_189_625_8;
/// Gauss points in counter-clockwise order; all weights equal one.
pub const GAUSS_POINTS: [(f64, f64); 4] = [
    (-GAUSS, -GAUSS),
    (GAUSS, -GAUSS),
    (GAUSS, GAUSS),
    (-GAUSS, GAUSS),
];
const NODE_XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
const NODE_ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    #[default]
    Q4,
    Q6,
}

impl std::str::FromStr for ElementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q4" => Ok(ElementKind::Q4),
            "q6" => Ok(ElementKind::Q6),
            other => Err(Error::Config(format!("unknown element kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ElementKind::Q4 => write!(f, "Q4"),
            ElementKind::Q6 => write!(f, "Q6"),
        }
    }
}

/// Isotropic linear elastic material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e: f64,
    pub nu: f64,
}

impl Material {
    pub fn new(e: f64, nu: f64) -> Result<Self> {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Config(format!("Young's modulus must be positive, got {e}")));
        }
        if !(0.0..0.5).contains(&nu) {
            return Err(Error::Config(format!("Poisson ratio must lie in [0, 0.5), got {nu}")));
        }
        Ok(Material { e, nu })
    }

    fn plane_stress(&self) -> Matrix3 {
        let c = self.e / (1.0 - self.nu * self.nu);
        Matrix3::new(
            c,
            c * self.nu,
            0.0,
            c * self.nu,
            c,
            0.0,
            0.0,
            0.0,
            c * (1.0 - self.nu) / 2.0,
        )
    }
}

/// Derivatives of the bilinear shape functions in physical coordinates.
fn shape_derivatives(xi: f64, eta: f64, lx: f64, ly: f64) -> ([f64; 4], [f64; 4]) {
    let mut dx = [0.0; 4];
    let mut dy = [0.0; 4];
    for a in 0..4 {
        dx[a] = NODE_XI[a] * (1.0 + NODE_ETA[a] * eta) / 4.0 * (2.0 / lx);
        dy[a] = NODE_ETA[a] * (1.0 + NODE_XI[a] * xi) / 4.0 * (2.0 / ly);
    }
    (dx, dy)
}

fn strain_matrix(xi: f64, eta: f64, lx: f64, ly: f64) -> Matrix3x8 {
    let (dx, dy) = shape_derivatives(xi, eta, lx, ly);
    let mut b = Matrix3x8::zeros();
    for a in 0..4 {
        b[(0, 2 * a)] = dx[a];
        b[(1, 2 * a + 1)] = dy[a];
        b[(2, 2 * a)] = dy[a];
        b[(2, 2 * a + 1)] = dx[a];
    }
    b
}

/// Strain operator of the internal modes, amplitudes ordered
/// `[ux(1-ξ²), ux(1-η²), uy(1-ξ²), uy(1-η²)]`.
fn bubble_strain_matrix(xi: f64, eta: f64, lx: f64, ly: f64) -> Matrix3x4 {
    let dp1_dx = -2.0 * xi * 2.0 / lx;
    let dp2_dy = -2.0 * eta * 2.0 / ly;
    let mut b = Matrix3x4::zeros();
    b[(0, 0)] = dp1_dx;
    b[(1, 3)] = dp2_dy;
    b[(2, 1)] = dp2_dy;
    b[(2, 2)] = dp1_dx;
    b
}

/// Rows: `∂ux/∂x, ∂ux/∂y, ∂uy/∂x, ∂uy/∂y`.
fn gradient_matrix(xi: f64, eta: f64, lx: f64, ly: f64) -> Matrix4x8 {
    let (dx, dy) = shape_derivatives(xi, eta, lx, ly);
    let mut g = Matrix4x8::zeros();
    for a in 0..4 {
        g[(0, 2 * a)] = dx[a];
        g[(1, 2 * a)] = dy[a];
        g[(2, 2 * a + 1)] = dx[a];
        g[(3, 2 * a + 1)] = dy[a];
    }
    g
}

fn check_geometry(t: f64, lx: f64, ly: f64) -> Result<()> {
    for (name, v) in [("t", t), ("lx", lx), ("ly", ly)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Geometry(format!("{name} = {v}")));
        }
    }
    Ok(())
}

/// Conforming bilinear plane-stress stiffness.
pub fn q4_stiffness(e: f64, nu: f64, t: f64, lx: f64, ly: f64) -> Result<Matrix8> {
    let mat = Material::new(e, nu)?;
    check_geometry(t, lx, ly)?;
    let d = mat.plane_stress();
    let w = t * lx * ly / 4.0;
    let mut k = Matrix8::zeros();
    for &(xi, eta) in &GAUSS_POINTS {
        let b = strain_matrix(xi, eta, lx, ly);
        k += b.transpose() * d * b * w;
    }
    Ok(symmetrize(k))
}

/// Incompatible-modes stiffness `Kuu - Kua Kaa⁻¹ Kau` and the recovery
/// operator `-Kaa⁻¹ Kau` that maps nodal displacements to bubble amplitudes.
pub fn q6_stiffness(
    e: f64,
    nu: f64,
    t: f64,
    lx: f64,
    ly: f64,
) -> Result<(Matrix8, SMatrix<f64, 4, 8>)> {
    let mat = Material::new(e, nu)?;
    check_geometry(t, lx, ly)?;
    let d = mat.plane_stress();
    let w = t * lx * ly / 4.0;
    let mut kuu = Matrix8::zeros();
    let mut kau = SMatrix::<f64, 4, 8>::zeros();
    let mut kaa = Matrix4::zeros();
    for &(xi, eta) in &GAUSS_POINTS {
        let b = strain_matrix(xi, eta, lx, ly);
        let ba = bubble_strain_matrix(xi, eta, lx, ly);
        kuu += b.transpose() * d * b * w;
        kau += ba.transpose() * d * b * w;
        kaa += ba.transpose() * d * ba * w;
    }
    let kaa_inv = kaa
        .cholesky()
        .ok_or(Error::SingularCondensation)?
        .inverse();
    let recovery = -(kaa_inv * kau);
    let k = kuu + kau.transpose() * recovery;
    Ok((symmetrize(k), recovery))
}

fn symmetrize(k: Matrix8) -> Matrix8 {
    (k + k.transpose()) * 0.5
}

/// Plane stress `(σx, σy, τxy)` at each Gauss point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementStressState {
    pub sigma: [[f64; 3]; 4],
}

/// Element matrices for one element kind on a uniform grid.
#[derive(Debug, Clone)]
pub struct ElementTemplate {
    pub kind: ElementKind,
    pub material: Material,
    pub lx: f64,
    pub ly: f64,
    pub t: f64,
    pub k0: Matrix8,
    pub recovery: Option<SMatrix<f64, 4, 8>>,
    /// Maps `ue` to the stress vector at each Gauss point.
    stress_ops: [Matrix3x8; 4],
    gradient_ops: [Matrix4x8; 4],
    /// `g0(e_j)` for the 8 unit element displacements; `g0` is linear so
    /// `g0(ue) = Σ ue[j] g0_basis[j]`.
    g0_basis: [Matrix8; 8],
}

impl ElementTemplate {
    pub fn new(kind: ElementKind, material: Material, lx: f64, ly: f64, t: f64) -> Result<Self> {
        let (k0, recovery) = match kind {
            ElementKind::Q4 => (q4_stiffness(material.e, material.nu, t, lx, ly)?, None),
            ElementKind::Q6 => {
                let (k, r) = q6_stiffness(material.e, material.nu, t, lx, ly)?;
                (k, Some(r))
            }
        };
        let d = material.plane_stress();
        let mut stress_ops = [Matrix3x8::zeros(); 4];
        let mut gradient_ops = [Matrix4x8::zeros(); 4];
        for (g, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
            let mut b = strain_matrix(xi, eta, lx, ly);
            if let Some(r) = &recovery {
                b += bubble_strain_matrix(xi, eta, lx, ly) * r;
            }
            stress_ops[g] = d * b;
            gradient_ops[g] = gradient_matrix(xi, eta, lx, ly);
        }
        let mut tpl = ElementTemplate {
            kind,
            material,
            lx,
            ly,
            t,
            k0,
            recovery,
            stress_ops,
            gradient_ops,
            g0_basis: [Matrix8::zeros(); 8],
        };
        for j in 0..8 {
            let mut ue = Vector8::zeros();
            ue[j] = 1.0;
            let s = tpl.element_stress(&ue);
            tpl.g0_basis[j] = tpl.stress_stiffness(&s);
        }
        Ok(tpl)
    }

    pub fn element_stress(&self, ue: &Vector8) -> ElementStressState {
        let mut sigma = [[0.0; 3]; 4];
        for (g, op) in self.stress_ops.iter().enumerate() {
            let s = op * ue;
            sigma[g] = [s[0], s[1], s[2]];
        }
        ElementStressState { sigma }
    }

    /// `∫ Gᵀ S G t dΩ` with `S` the block-diagonal initial-stress matrix.
    pub fn stress_stiffness(&self, state: &ElementStressState) -> Matrix8 {
        let w = self.t * self.lx * self.ly / 4.0;
        let mut g0 = Matrix8::zeros();
        for (gp, g) in self.gradient_ops.iter().enumerate() {
            let [sx, sy, txy] = state.sigma[gp];
            let mut s = Matrix4::zeros();
            s[(0, 0)] = sx;
            s[(0, 1)] = txy;
            s[(1, 0)] = txy;
            s[(1, 1)] = sy;
            s[(2, 2)] = sx;
            s[(2, 3)] = txy;
            s[(3, 2)] = txy;
            s[(3, 3)] = sy;
            g0 += g.transpose() * s * g * w;
        }
        symmetrize(g0)
    }

    /// `g0(ue)` through the precomputed linear basis.
    pub fn g0(&self, ue: &Vector8) -> Matrix8 {
        let mut g = Matrix8::zeros();
        for j in 0..8 {
            if ue[j] != 0.0 {
                g += self.g0_basis[j] * ue[j];
            }
        }
        g
    }

    pub fn g0_basis(&self, j: usize) -> &Matrix8 {
        &self.g0_basis[j]
    }
}
