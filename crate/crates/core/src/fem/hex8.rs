//! Eight-node trilinear hexahedron with displacement and potential DOFs.
//!
//! Local node order is the VTK one: the bottom face (ζ = −1) counter-clockwise
//! seen from +ζ, then the top face. Element DOFs are interleaved per node,
//! `3a + i` for displacement component `i` of node `a`; the potential DOF of
//! node `a` is index `a` of the electric block.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::Mat3x6;

pub type Mat24 = SMatrix<f64, 24, 24>;
pub type Mat24x8 = SMatrix<f64, 24, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
type Mat6x24 = SMatrix<f64, 6, 24>;
type Mat6x9 = SMatrix<f64, 6, 9>;
type Mat3x8 = SMatrix<f64, 3, 8>;

pub const NODE_NATURAL: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Local node lists of the six faces, ordered ξ−, ξ+, η−, η+, ζ−, ζ+. Each
/// list is counter-clockwise seen from outside the element.
pub const FACE_NODES: [[usize; 4]; 6] = [
    [0, 4, 7, 3],
    [1, 2, 6, 5],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 3, 2, 1],
    [4, 5, 6, 7],
];

const GAUSS: f64 = 0.577_350_269_189_625_8;

/// How the displacement field is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementFormulation {
    /// Plain 2×2×2 Gauss integration.
    Full,
    /// Mean-dilatation B-bar: the volumetric strain is replaced by its
    /// element average.
    SelectiveReduced,
    /// Wilson–Taylor incompatible bending modes, condensed per element.
    #[default]
    IncompatibleModes,
}

/// Constitutive data for one element, already in the global frame. Metal
/// elements carry zero coupling and permittivity.
#[derive(Clone, Debug)]
pub struct ElementMaterial {
    pub stiffness: Matrix6<f64>,
    pub coupling: Mat3x6,
    pub permittivity: Matrix3<f64>,
    pub density: f64,
    pub piezo: bool,
}

#[derive(Clone, Debug)]
pub struct ElementMatrices {
    pub k_uu: Mat24,
    pub k_uphi: Mat24x8,
    pub k_phiphi: Mat8,
    pub mass: Mat24,
    pub volume: f64,
}

pub fn gauss_points() -> [[f64; 3]; 8] {
    let mut pts = [[0.0; 3]; 8];
    for (p, n) in pts.iter_mut().zip(NODE_NATURAL.iter()) {
        *p = [n[0] * GAUSS, n[1] * GAUSS, n[2] * GAUSS];
    }
    pts
}

pub fn shape(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, na) in NODE_NATURAL.iter().enumerate() {
        n[a] = 0.125 * (1.0 + na[0] * xi[0]) * (1.0 + na[1] * xi[1]) * (1.0 + na[2] * xi[2]);
    }
    n
}

/// Derivatives with respect to the natural coordinates, one row per node.
pub fn shape_derivatives(xi: [f64; 3]) -> SMatrix<f64, 8, 3> {
    let mut d = SMatrix::<f64, 8, 3>::zeros();
    for (a, na) in NODE_NATURAL.iter().enumerate() {
        let f = [1.0 + na[0] * xi[0], 1.0 + na[1] * xi[1], 1.0 + na[2] * xi[2]];
        d[(a, 0)] = 0.125 * na[0] * f[1] * f[2];
        d[(a, 1)] = 0.125 * na[1] * f[0] * f[2];
        d[(a, 2)] = 0.125 * na[2] * f[0] * f[1];
    }
    d
}

/// `J[(i, j)] = ∂x_i / ∂ξ_j`.
pub fn jacobian(coords: &[Vector3<f64>; 8], dn: &SMatrix<f64, 8, 3>) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for (a, x) in coords.iter().enumerate() {
        for c in 0..3 {
            j.column_mut(c).axpy(dn[(a, c)], x, 1.0);
        }
    }
    j
}

/// Jacobian determinants at the eight Gauss points.
pub fn gauss_jacobians(coords: &[Vector3<f64>; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (g, xi) in gauss_points().iter().enumerate() {
        out[g] = jacobian(coords, &shape_derivatives(*xi)).determinant();
    }
    out
}

pub fn volume(coords: &[Vector3<f64>; 8]) -> f64 {
    gauss_jacobians(coords).iter().sum()
}

fn strain_rows(b: &mut Mat6x24, col: usize, g: &Vector3<f64>) {
    let (gx, gy, gz) = (g[0], g[1], g[2]);
    b[(0, col)] = gx;
    b[(1, col + 1)] = gy;
    b[(2, col + 2)] = gz;
    b[(3, col + 1)] = gz;
    b[(3, col + 2)] = gy;
    b[(4, col)] = gz;
    b[(4, col + 2)] = gx;
    b[(5, col)] = gy;
    b[(5, col + 1)] = gx;
}

struct PointData {
    weight: f64,
    n: [f64; 8],
    grad: SMatrix<f64, 8, 3>,
    bubble_grad: Matrix3<f64>,
}

fn point_data(id: usize, coords: &[Vector3<f64>; 8]) -> Result<(Vec<PointData>, f64)> {
    let j0 = jacobian(coords, &shape_derivatives([0.0; 3]));
    let det0 = j0.determinant();
    let j0_inv = j0.try_inverse();
    let mut pts = Vec::with_capacity(8);
    let mut vol = 0.0;
    for xi in gauss_points() {
        let dn = shape_derivatives(xi);
        let j = jacobian(coords, &dn);
        let det = j.determinant();
        if !(det > 0.0) {
            return Err(Error::SingularElement { element: id, det_j: det });
        }
        let j_inv = j.try_inverse().ok_or(Error::SingularElement { element: id, det_j: det })?;
        // Row a of grad is ∇N_a = (∂N_a/∂ξ) J⁻¹.
        let grad = dn * j_inv;
        // Bubble derivatives use the centroid Jacobian scaled by det0/det so
        // that the constant-strain patch test is passed.
        let mut bubble_grad = Matrix3::zeros();
        if let Some(j0_inv) = j0_inv {
            for m in 0..3 {
                let mut dp = Vector3::zeros();
                dp[m] = -2.0 * xi[m];
                let g = j0_inv.transpose() * dp * (det0 / det);
                bubble_grad.set_row(m, &g.transpose());
            }
        }
        vol += det;
        pts.push(PointData {
            weight: det,
            n: shape(xi),
            grad,
            bubble_grad,
        });
    }
    Ok((pts, vol))
}

/// Element stiffness, coupling, dielectric and consistent mass matrices.
pub fn element_matrices(
    id: usize,
    coords: &[Vector3<f64>; 8],
    mat: &ElementMaterial,
    formulation: ElementFormulation,
) -> Result<ElementMatrices> {
    let (pts, vol) = point_data(id, coords)?;

    let mut mean_grad = SMatrix::<f64, 8, 3>::zeros();
    if formulation == ElementFormulation::SelectiveReduced {
        for p in &pts {
            mean_grad += p.grad * p.weight;
        }
        mean_grad /= vol;
    }

    let c = &mat.stiffness;
    let et = mat.coupling.transpose();
    let mut k_uu = Mat24::zeros();
    let mut k_uphi = Mat24x8::zeros();
    let mut k_phiphi = Mat8::zeros();
    let mut mass = Mat24::zeros();
    let mut k_ua = SMatrix::<f64, 24, 9>::zeros();
    let mut k_aa = SMatrix::<f64, 9, 9>::zeros();
    let mut k_aphi = SMatrix::<f64, 9, 8>::zeros();

    for p in &pts {
        let mut b = Mat6x24::zeros();
        for a in 0..8 {
            let g = p.grad.row(a).transpose();
            strain_rows(&mut b, 3 * a, &g);
        }
        if formulation == ElementFormulation::SelectiveReduced {
            for a in 0..8 {
                for j in 0..3 {
                    let shift = (mean_grad[(a, j)] - p.grad[(a, j)]) / 3.0;
                    for i in 0..3 {
                        b[(i, 3 * a + j)] += shift;
                    }
                }
            }
        }
        let cb = c * b;
        k_uu += b.transpose() * cb * p.weight;

        if mat.piezo {
            let b_phi: Mat3x8 = p.grad.transpose();
            let etb = et * b_phi;
            k_uphi += b.transpose() * etb * p.weight;
            k_phiphi += b_phi.transpose() * mat.permittivity * b_phi * p.weight;
            if formulation == ElementFormulation::IncompatibleModes {
                let ba = bubble_b(&p.bubble_grad);
                k_aphi += ba.transpose() * etb * p.weight;
            }
        }

        if formulation == ElementFormulation::IncompatibleModes {
            let ba = bubble_b(&p.bubble_grad);
            k_ua += cb.transpose() * ba * p.weight;
            k_aa += ba.transpose() * c * ba * p.weight;
        }

        for a in 0..8 {
            for bnode in 0..8 {
                let m = mat.density * p.n[a] * p.n[bnode] * p.weight;
                for i in 0..3 {
                    mass[(3 * a + i, 3 * bnode + i)] += m;
                }
            }
        }
    }

    if formulation == ElementFormulation::IncompatibleModes {
        let chol = k_aa
            .cholesky()
            .ok_or(Error::SingularElement { element: id, det_j: vol })?;
        let inv_au = chol.solve(&k_ua.transpose());
        k_uu -= k_ua * inv_au;
        if mat.piezo {
            let inv_aphi = chol.solve(&k_aphi);
            k_uphi -= k_ua * inv_aphi;
            k_phiphi += k_aphi.transpose() * inv_aphi;
        }
    }

    symmetrize(&mut k_uu);
    symmetrize(&mut mass);
    let kp = k_phiphi;
    k_phiphi = (kp + kp.transpose()) * 0.5;

    Ok(ElementMatrices {
        k_uu,
        k_uphi,
        k_phiphi,
        mass,
        volume: vol,
    })
}

fn bubble_b(bg: &Matrix3<f64>) -> Mat6x9 {
    let mut full = Mat6x24::zeros();
    for m in 0..3 {
        let g = bg.row(m).transpose();
        strain_rows(&mut full, 3 * m, &g);
    }
    full.fixed_columns::<9>(0).into_owned()
}

fn symmetrize(m: &mut Mat24) {
    for i in 0..24 {
        for j in (i + 1)..24 {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Strain (Voigt) and potential gradient at natural point `xi` for nodal
/// displacements `u` (24) and potentials `phi` (8). Uses the compatible field
/// only.
pub fn point_fields(
    coords: &[Vector3<f64>; 8],
    xi: [f64; 3],
    u: &[f64; 24],
    phi: &[f64; 8],
) -> (nalgebra::Vector6<f64>, Vector3<f64>) {
    let dn = shape_derivatives(xi);
    let j = jacobian(coords, &dn);
    let grad = dn * j.try_inverse().unwrap_or_else(Matrix3::zeros);
    let mut b = Mat6x24::zeros();
    for a in 0..8 {
        strain_rows(&mut b, 3 * a, &grad.row(a).transpose());
    }
    let uv = SMatrix::<f64, 24, 1>::from_column_slice(u);
    let strain = b * uv;
    let mut gphi = Vector3::zeros();
    for a in 0..8 {
        gphi += grad.row(a).transpose() * phi[a];
    }
    (strain, gphi)
}
