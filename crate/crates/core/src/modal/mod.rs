//! Eigen extraction near a target frequency, nodal-diameter classification
//! and tooth-tip displacement metrics.

pub mod lanczos;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::{CondensedSystem, DofMap};
use crate::mesh::{vtk, Mesh};
pub use lanczos::EigenOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub frequency_hz: f64,
    pub eigenvalue: f64,
    /// Mass-normalized shape on the reduced mechanical DOFs.
    #[serde(skip)]
    pub shape: Vec<f64>,
    pub residual: f64,
    pub nodal_diameter: usize,
    pub nd_ambiguous: bool,
    /// Share of the tip-ring displacement energy that is radial.
    pub radial_fraction: f64,
    /// Largest radial displacement on the tooth-tip ring, mass-normalized
    /// units (m/√kg).
    pub max_radial_tip_displacement: f64,
    /// `(z, max |u_r|)` along the inner wall, ascending in z.
    pub axial_profile: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub shift_target_hz: f64,
    pub lanczos_steps: usize,
}

pub fn hz_to_lambda(f: f64) -> f64 {
    (2.0 * PI * f).powi(2)
}

pub fn lambda_to_hz(l: f64) -> f64 {
    l.max(0.0).sqrt() / (2.0 * PI)
}

/// The `count` modes nearest `target_hz`, ascending in frequency. Shapes are
/// mass-normalized; classification fields are filled by [`ModeSet::annotate`].
pub fn solve_modes(sys: &CondensedSystem, target_hz: f64, count: usize, opts: &EigenOptions) -> Result<ModeSet> {
    if !(target_hz > 0.0) || count == 0 {
        return Err(Error::invalid("target frequency must be positive and count at least 1"));
    }
    let sol = lanczos::eigs_near(sys, hz_to_lambda(target_hz), count, opts)?;
    Ok(ModeSet {
        modes: sol
            .pairs
            .into_iter()
            .map(|p| Mode {
                frequency_hz: lambda_to_hz(p.lambda),
                eigenvalue: p.lambda,
                shape: p.vector,
                residual: p.residual,
                nodal_diameter: 0,
                nd_ambiguous: true,
                radial_fraction: 0.0,
                max_radial_tip_displacement: 0.0,
                axial_profile: Vec::new(),
            })
            .collect(),
        shift_target_hz: target_hz,
        lanczos_steps: sol.lanczos_steps,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodalDiameter {
    pub index: usize,
    pub ambiguous: bool,
    /// Fourier magnitude per index, 0 included.
    pub spectrum: Vec<f64>,
}

/// Radial displacement at `nodes`.
fn radial(mesh: &Mesh, nodal: &[[f64; 3]], n: usize) -> f64 {
    let t = mesh.angle(n);
    nodal[n][0] * t.cos() + nodal[n][1] * t.sin()
}

/// Dominant circumferential Fourier index of the radial displacement on the
/// tooth-tip ring. Index 0 is excluded from the argmax; when it dominates or
/// the two strongest indices are within 10 % the result is flagged.
pub fn classify_nodal_diameter(nodal: &[[f64; 3]], mesh: &Mesh) -> Result<NodalDiameter> {
    let ring = mesh.contact_ring_nodes();
    if ring.len() < 3 {
        return Err(Error::invalid("tooth contact ring is empty"));
    }
    let theta: Vec<f64> = ring.iter().map(|&n| mesh.angle(n)).collect();
    let m = ring.len();
    // Trapezoid weights on the non-uniform ring.
    let w: Vec<f64> = (0..m)
        .map(|i| {
            let prev = theta[(i + m - 1) % m];
            let next = theta[(i + 1) % m];
            0.5 * (next - prev).rem_euclid(2.0 * PI)
        })
        .collect();
    let ur: Vec<f64> = ring.iter().map(|&n| radial(mesh, nodal, n)).collect();
    let n_max = m / 2;
    let spectrum: Vec<f64> = (0..=n_max)
        .map(|k| {
            let (mut c, mut s) = (0.0, 0.0);
            for i in 0..m {
                c += w[i] * ur[i] * (k as f64 * theta[i]).cos();
                s += w[i] * ur[i] * (k as f64 * theta[i]).sin();
            }
            c.hypot(s) / PI
        })
        .collect();
    let mut idx: Vec<usize> = (1..=n_max).collect();
    idx.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]));
    let top = idx[0];
    let second = idx.get(1).map_or(0.0, |&i| spectrum[i]);
    // The breathing component is measured as a mean, not a half amplitude.
    let zero = 0.5 * spectrum[0];
    if zero >= spectrum[top] {
        return Ok(NodalDiameter {
            index: 0,
            ambiguous: true,
            spectrum,
        });
    }
    let ambiguous = second >= 0.9 * spectrum[top];
    Ok(NodalDiameter {
        index: top,
        ambiguous,
        spectrum,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TipMetrics {
    pub max_radial: f64,
    pub axial_profile: Vec<(f64, f64)>,
}

/// Tip displacement of `mode` scaled by `excitation_scale`.
pub fn tip_displacement_metrics(mode: &Mode, excitation_scale: f64) -> TipMetrics {
    TipMetrics {
        max_radial: excitation_scale.abs() * mode.max_radial_tip_displacement,
        axial_profile: mode
            .axial_profile
            .iter()
            .map(|&(z, a)| (z, excitation_scale.abs() * a))
            .collect(),
    }
}

impl Mode {
    pub fn nodal_displacements(&self, dof_map: &DofMap) -> Vec<[f64; 3]> {
        dof_map.expand(&self.shape)
    }

    /// Fills classification and tip metrics from the mesh.
    pub fn annotate(&mut self, mesh: &Mesh, dof_map: &DofMap) -> Result<()> {
        let nodal = self.nodal_displacements(dof_map);
        let nd = classify_nodal_diameter(&nodal, mesh)?;
        self.nodal_diameter = nd.index;
        self.nd_ambiguous = nd.ambiguous;
        let ring = mesh.contact_ring_nodes();
        let (mut er, mut et) = (0.0, 0.0);
        let mut max_r: f64 = 0.0;
        for &n in &ring {
            let ur = radial(mesh, &nodal, n);
            let u = nodal[n];
            er += ur * ur;
            et += u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
            max_r = max_r.max(ur.abs());
        }
        self.radial_fraction = if et > 0.0 { er / et } else { 0.0 };
        self.max_radial_tip_displacement = max_r;
        self.axial_profile = mesh
            .inner_wall_levels()
            .into_iter()
            .map(|(z, nodes)| {
                let a = nodes.iter().map(|&n| radial(mesh, &nodal, n).abs()).fold(0.0, f64::max);
                (z, a)
            })
            .collect();
        Ok(())
    }

    /// True when the radial amplitude never grows going down from the tip,
    /// allowing `slack` relative noise.
    pub fn profile_decreases_towards_base(&self, slack: f64) -> bool {
        let p = &self.axial_profile;
        let top = p.last().map_or(0.0, |v| v.1);
        p.windows(2).all(|w| w[0].1 <= w[1].1 + slack * top)
    }
}

impl ModeSet {
    pub fn annotate(&mut self, mesh: &Mesh, dof_map: &DofMap) -> Result<()> {
        for m in self.modes.iter_mut() {
            m.annotate(mesh, dof_map)?;
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.frequency_hz).collect()
    }

    /// Largest `|φᵢᵀ M φⱼ − δᵢⱼ|`.
    pub fn orthonormality_error(&self, sys: &CondensedSystem) -> f64 {
        let n = sys.n_u();
        let mut worst: f64 = 0.0;
        let mut mx = vec![0.0; n];
        for (i, a) in self.modes.iter().enumerate() {
            sys.mass_mul(&a.shape, &mut mx);
            for (j, b) in self.modes.iter().enumerate() {
                let d = crate::fem::sparse::dot(&b.shape, &mx) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Index of the lowest-frequency radial-dominant mode with each nodal
    /// diameter in `diameters`.
    pub fn track_by_nodal_diameter(&self, diameters: &[usize]) -> Vec<Option<usize>> {
        diameters
            .iter()
            .map(|&nd| {
                self.modes
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.nodal_diameter == nd && m.radial_fraction > 0.5)
                    .map(|(i, _)| i)
                    .next()
            })
            .collect()
    }

    /// Frequency table CSV: `mode,freq_hz,nodal_diameter,max_disp_m`.
    /// `max_disp_m` is multiplied by `scale` (1 for mass-normalized units).
    pub fn write_csv(&self, path: &Path, scale: f64) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
        w.write_record(["mode", "freq_hz", "nodal_diameter", "max_disp_m"])
            .map_err(|e| Error::io(path, e))?;
        for (i, m) in self.modes.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:.6}", m.frequency_hz),
                m.nodal_diameter.to_string(),
                format!("{:.6e}", scale * m.max_radial_tip_displacement),
            ])
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One VTK file per mode with the shape as point vectors.
    pub fn write_vtk(&self, mesh: &Mesh, dof_map: &DofMap, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            let nodal = m.nodal_displacements(dof_map);
            let text = vtk::mesh_to_vtk(mesh, &[("mode_shape", &nodal)]);
            let p = dir.join(format!("mode_{:02}.vtk", i + 1));
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Scale that maps the mass-normalized tip displacement of a reference mode
/// onto a reference amplitude.
pub fn displacement_calibration(reference: &Mode, target_m: f64) -> Result<f64> {
    if !(reference.max_radial_tip_displacement > 0.0) {
        return Err(Error::invalid("reference mode has no tip displacement"));
    }
    Ok(target_m / reference.max_radial_tip_displacement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_stator_spec;
    use crate::mesh::generate_mesh;

    fn field(mesh: &Mesh, f: impl Fn(f64) -> f64) -> Vec<[f64; 3]> {
        (0..mesh.n_nodes())
            .map(|n| {
                let t = mesh.angle(n);
                let ur = f(t);
                [ur * t.cos(), ur * t.sin(), 0.0]
            })
            .collect()
    }

    #[test]
    fn synthetic_harmonic_is_classified() {
        let mesh = generate_mesh(&default_stator_spec(), 1).unwrap();
        for k in 1..=8 {
            let nd = classify_nodal_diameter(&field(&mesh, |t| (k as f64 * t + 0.3).cos()), &mesh).unwrap();
            assert_eq!(nd.index, k);
            assert!(!nd.ambiguous, "k = {k}: {:?}", nd.spectrum);
        }
    }

    #[test]
    fn breathing_shape_is_flagged() {
        let mesh = generate_mesh(&default_stator_spec(), 1).unwrap();
        let nd = classify_nodal_diameter(&field(&mesh, |_| 1.0), &mesh).unwrap();
        assert_eq!(nd.index, 0);
        assert!(nd.ambiguous);
    }

    #[test]
    fn zero_scale_gives_zero_displacement() {
        let m = Mode {
            frequency_hz: 1.0,
            eigenvalue: 1.0,
            shape: vec![],
            residual: 0.0,
            nodal_diameter: 2,
            nd_ambiguous: false,
            radial_fraction: 1.0,
            max_radial_tip_displacement: 3.0,
            axial_profile: vec![(0.0, 1.0), (1.0, 3.0)],
        };
        let t = tip_displacement_metrics(&m, 0.0);
        assert_eq!(t.max_radial, 0.0);
        assert!(t.axial_profile.iter().all(|p| p.1 == 0.0));
        assert!(m.profile_decreases_towards_base(0.0));
    }
}
