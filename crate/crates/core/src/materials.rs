//! Constitutive data: radially poled PZT-5H and the stator metals.
//!
//! Voigt order throughout the crate is `[xx, yy, zz, yz, xz, xy]` with
//! engineering shear strains; the piezoelectric tensors are in stress-charge
//! form (`T = cE S - eᵀ E`, `D = e S + εS E`) with the poling direction along
//! local axis 3.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::units::EPSILON_0;

pub type Mat3x6 = SMatrix<f64, 3, 6>;

#[derive(Clone, Debug, PartialEq)]
pub struct PiezoMaterial {
    pub name: String,
    pub citation: String,
    pub elastic_stiffness_ce: Matrix6<f64>,
    pub piezo_coupling_e: Mat3x6,
    pub permittivity_eps_s: Matrix3<f64>,
    pub density: f64,
    /// Poling direction in the frame the tensors are expressed in.
    pub poling_axis: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticMaterial {
    pub name: String,
    pub citation: String,
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub density: f64,
}

/// PZT-5H, transversely isotropic about the poling axis.
///
/// Stiffness, coupling and clamped permittivity follow the Clevite/Morgan
/// PZT-5H data set as it is distributed with the common FE material
/// libraries; `c66` is set to `(c11 - c12) / 2` so the 6mm symmetry is exact.
pub fn pzt5h_default() -> PiezoMaterial {
    let c11 = 127.205e9;
    let c12 = 80.2122e9;
    let c13 = 84.6702e9;
    let c33 = 117.436e9;
    let c44 = 22.9885e9;
    let c66 = 0.5 * (c11 - c12);
    #[rustfmt::skip]
    let ce = Matrix6::new(
        c11, c12, c13, 0.0, 0.0, 0.0,
        c12, c11, c13, 0.0, 0.0, 0.0,
        c13, c13, c33, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, c44, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, c44, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, c66,
    );
    let e31 = -6.62281;
    let e33 = 23.2403;
    let e15 = 17.0345;
    #[rustfmt::skip]
    let e = Mat3x6::new(
        0.0, 0.0, 0.0, 0.0, e15, 0.0,
        0.0, 0.0, 0.0, e15, 0.0, 0.0,
        e31, e31, e33, 0.0, 0.0, 0.0,
    );
    let eps = Matrix3::from_diagonal(&Vector3::new(1704.4, 1704.4, 1433.6)) * EPSILON_0;
    PiezoMaterial {
        name: "PZT-5H".into(),
        citation: "Morgan Electro Ceramics PZT-5H (Navy Type VI) data sheet; D. Berlincourt, \
                   H. Krueger, C. Near, Clevite Technical Paper TP-226"
            .into(),
        elastic_stiffness_ce: ce,
        piezo_coupling_e: e,
        permittivity_eps_s: eps,
        density: 7500.0,
        poling_axis: Vector3::z(),
    }
}

/// Free-machining brass C36000.
pub fn c360_brass() -> ElasticMaterial {
    ElasticMaterial {
        name: "C360 brass".into(),
        citation: "Copper Development Association, C36000 free-cutting brass: \
                   E = 97 GPa, nu = 0.31, rho = 8500 kg/m3"
            .into(),
        youngs_modulus: 97e9,
        poissons_ratio: 0.31,
        density: 8500.0,
    }
}

/// Annealed pure copper (C10100 class).
pub fn pure_copper() -> ElasticMaterial {
    ElasticMaterial {
        name: "Copper".into(),
        citation: "ASM Handbook Vol. 2, pure copper: E = 110 GPa, nu = 0.35, rho = 8960 kg/m3".into(),
        youngs_modulus: 110e9,
        poissons_ratio: 0.35,
        density: 8960.0,
    }
}

impl ElasticMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::Validation {
                key: "youngs_modulus".into(),
                message: format!("must be positive, got {}", self.youngs_modulus),
            });
        }
        if !(self.poissons_ratio > 0.0 && self.poissons_ratio < 0.5) {
            return Err(Error::Validation {
                key: "poissons_ratio".into(),
                message: format!("must lie in (0, 0.5), got {}", self.poissons_ratio),
            });
        }
        if !(self.density > 0.0) {
            return Err(Error::Validation {
                key: "density".into(),
                message: format!("must be positive, got {}", self.density),
            });
        }
        Ok(())
    }

    /// Isotropic stiffness in Voigt form.
    pub fn stiffness(&self) -> Matrix6<f64> {
        let (e, nu) = (self.youngs_modulus, self.poissons_ratio);
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = lambda;
            }
            c[(i, i)] += 2.0 * mu;
            c[(i + 3, i + 3)] = mu;
        }
        c
    }

    pub fn with_modulus_scale(&self, scale: f64) -> Self {
        ElasticMaterial {
            youngs_modulus: self.youngs_modulus * scale,
            ..self.clone()
        }
    }
}

impl PiezoMaterial {
    pub fn validate(&self) -> Result<()> {
        if !is_spd6(&self.elastic_stiffness_ce) {
            return Err(Error::Validation {
                key: "pzt.elastic_stiffness_ce".into(),
                message: "must be symmetric positive definite".into(),
            });
        }
        if !is_spd3(&self.permittivity_eps_s) {
            return Err(Error::Validation {
                key: "pzt.permittivity_eps_s".into(),
                message: "must be symmetric positive definite".into(),
            });
        }
        if !(self.density > 0.0) {
            return Err(Error::Validation {
                key: "pzt.density".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn with_stiffness_scale(&self, scale: f64) -> Self {
        PiezoMaterial {
            elastic_stiffness_ce: self.elastic_stiffness_ce * scale,
            ..self.clone()
        }
    }

    /// Electric enthalpy density `½SᵀcS + Sᵀeᵀ∇φ − ½∇φᵀε∇φ` for a strain and
    /// potential gradient.
    pub fn enthalpy_density(&self, strain: &nalgebra::Vector6<f64>, grad_phi: &Vector3<f64>) -> f64 {
        0.5 * strain.dot(&(self.elastic_stiffness_ce * strain))
            + strain.dot(&(self.piezo_coupling_e.transpose() * grad_phi))
            - 0.5 * grad_phi.dot(&(self.permittivity_eps_s * grad_phi))
    }
}

/// Kelvin (Mandel) form `W c W`, `W = diag(1, 1, 1, √2, √2, √2)`. Unlike
/// the engineering-shear Voigt matrix it is a proper second-order tensor on
/// the 6-dimensional strain space, so its eigenvalues are frame invariant.
pub fn kelvin_form(c: &Matrix6<f64>) -> Matrix6<f64> {
    let s = std::f64::consts::SQRT_2;
    let w = Matrix6::from_diagonal(&nalgebra::Vector6::new(1.0, 1.0, 1.0, s, s, s));
    w * c * w
}

fn is_spd6(m: &Matrix6<f64>) -> bool {
    let sym = (m - m.transpose()).abs().max() <= 1e-10 * m.abs().max();
    sym && (*m).cholesky().is_some()
}

fn is_spd3(m: &Matrix3<f64>) -> bool {
    let sym = (m - m.transpose()).abs().max() <= 1e-10 * m.abs().max();
    sym && (*m).cholesky().is_some()
}

/// Voigt index of the symmetric tensor pair `(i, j)`.
pub(crate) fn voigt(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        (0, 1) => 5,
        _ => unreachable!(),
    }
}

/// Rotation whose columns are the local axes expressed in global components:
/// local 1 = axial × radial (tangential), local 2 = axial, local 3 = radial.
pub fn element_frame(radial_dir: &Vector3<f64>, axial_dir: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let tol = 1e-10;
    if (radial_dir.norm() - 1.0).abs() > tol || (axial_dir.norm() - 1.0).abs() > tol {
        return Err(Error::FrameDegenerate(format!(
            "frame vectors must be unit length (|r| = {}, |a| = {})",
            radial_dir.norm(),
            axial_dir.norm()
        )));
    }
    if radial_dir.dot(axial_dir).abs() > tol {
        return Err(Error::FrameDegenerate(format!(
            "radial and axial directions are not orthogonal (dot = {:.3e})",
            radial_dir.dot(axial_dir)
        )));
    }
    let tangential = axial_dir.cross(radial_dir);
    Ok(Matrix3::from_columns(&[tangential, *axial_dir, *radial_dir]))
}

/// Expresses `material` (given in its local frame) in the global frame whose
/// local axis 3 points along `radial_dir`.
pub fn rotate_to_element_frame(
    material: &PiezoMaterial,
    radial_dir: &Vector3<f64>,
    axial_dir: &Vector3<f64>,
) -> Result<PiezoMaterial> {
    let rot = element_frame(radial_dir, axial_dir)?;
    Ok(rotate_with(material, &rot))
}

pub fn rotate_with(material: &PiezoMaterial, rot: &Matrix3<f64>) -> PiezoMaterial {
    PiezoMaterial {
        elastic_stiffness_ce: rotate_stiffness(&material.elastic_stiffness_ce, rot),
        piezo_coupling_e: rotate_coupling(&material.piezo_coupling_e, rot),
        permittivity_eps_s: rot * material.permittivity_eps_s * rot.transpose(),
        poling_axis: rot * material.poling_axis,
        ..material.clone()
    }
}

/// Fourth-order tensor rotation `c'_ijkl = R_ia R_jb R_kc R_ld c_abcd`,
/// done one index at a time.
pub fn rotate_stiffness(c: &Matrix6<f64>, r: &Matrix3<f64>) -> Matrix6<f64> {
    let mut t = [[[[0.0; 3]; 3]; 3]; 3];
    for (i, ti) in t.iter_mut().enumerate() {
        for (j, tij) in ti.iter_mut().enumerate() {
            for (k, tijk) in tij.iter_mut().enumerate() {
                for (l, v) in tijk.iter_mut().enumerate() {
                    *v = c[(voigt(i, j), voigt(k, l))];
                }
            }
        }
    }
    for axis in 0..4 {
        let mut out = [[[[0.0; 3]; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut s = 0.0;
                        for a in 0..3 {
                            let idx = match axis {
                                0 => (a, j, k, l),
                                1 => (i, a, k, l),
                                2 => (i, j, a, l),
                                _ => (i, j, k, a),
                            };
                            let free = [i, j, k, l][axis];
                            s += r[(free, a)] * t[idx.0][idx.1][idx.2][idx.3];
                        }
                        out[i][j][k][l] = s;
                    }
                }
            }
        }
        t = out;
    }
    let pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
    let mut c_rot = Matrix6::zeros();
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for (q, &(k, l)) in pairs.iter().enumerate() {
            c_rot[(p, q)] = t[i][j][k][l];
        }
    }
    // Restore exact symmetry lost to round-off.
    (c_rot + c_rot.transpose()) * 0.5
}

/// Third-order tensor rotation `e'_ijk = R_ia R_jb R_kc e_abc`.
pub fn rotate_coupling(e: &Mat3x6, r: &Matrix3<f64>) -> Mat3x6 {
    let mut t = [[[0.0; 3]; 3]; 3];
    for (i, ti) in t.iter_mut().enumerate() {
        for (j, tij) in ti.iter_mut().enumerate() {
            for (k, v) in tij.iter_mut().enumerate() {
                *v = e[(i, voigt(j, k))];
            }
        }
    }
    let mut out = Mat3x6::zeros();
    let pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
    for i in 0..3 {
        for (p, &(j, k)) in pairs.iter().enumerate() {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        s += r[(i, a)] * r[(j, b)] * r[(k, c)] * t[a][b][c];
                    }
                }
            }
            out[(i, p)] = s;
        }
    }
    out
}

/// Rayleigh damping `C = αM + βK`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayleighDamping {
    pub alpha: f64,
    pub beta: f64,
}

impl RayleighDamping {
    pub const NONE: RayleighDamping = RayleighDamping { alpha: 0.0, beta: 0.0 };

    /// Stiffness-proportional damping giving ratio `zeta` at `omega` (rad/s).
    pub fn for_modal_ratio(zeta: f64, omega: f64) -> Self {
        RayleighDamping {
            alpha: 0.0,
            beta: 2.0 * zeta / omega,
        }
    }

    /// Modal damping ratio at circular frequency `omega`.
    pub fn ratio_at(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return if self.alpha > 0.0 { f64::INFINITY } else { 0.0 };
        }
        0.5 * (self.alpha / omega + self.beta * omega)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::DampingNegative {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Materials for one analysis: the piezo tube and the stator metal.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialSet {
    pub pzt: PiezoMaterial,
    pub metal: ElasticMaterial,
}

impl Default for MaterialSet {
    fn default() -> Self {
        MaterialSet {
            pzt: pzt5h_default(),
            metal: c360_brass(),
        }
    }
}

impl MaterialSet {
    pub fn with_metal(metal: ElasticMaterial) -> Self {
        MaterialSet {
            pzt: pzt5h_default(),
            metal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pzt.validate()?;
        self.metal.validate()
    }

    pub fn citations(&self) -> Vec<String> {
        vec![
            format!("{}: {}", self.pzt.name, self.pzt.citation),
            format!("{}: {}", self.metal.name, self.metal.citation),
        ]
    }

    /// Provenance dump of the active constants.
    pub fn to_json(&self) -> serde_json::Value {
        let rows6 = |m: &Matrix6<f64>| -> Vec<Vec<f64>> {
            (0..6).map(|i| (0..6).map(|j| m[(i, j)]).collect()).collect()
        };
        let e = &self.pzt.piezo_coupling_e;
        let eps = &self.pzt.permittivity_eps_s;
        json!({
            "pzt": {
                "name": self.pzt.name,
                "citation": self.pzt.citation,
                "density_kg_m3": self.pzt.density,
                "elastic_stiffness_ce_pa": rows6(&self.pzt.elastic_stiffness_ce),
                "piezo_coupling_e_c_m2": (0..3).map(|i| (0..6).map(|j| e[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "permittivity_eps_s_f_m": (0..3).map(|i| (0..3).map(|j| eps[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "poling": "radial (through the tube wall)",
            },
            "metal": {
                "name": self.metal.name,
                "citation": self.metal.citation,
                "youngs_modulus_pa": self.metal.youngs_modulus,
                "poissons_ratio": self.metal.poissons_ratio,
                "density_kg_m3": self.metal.density,
            }
        })
    }
}
