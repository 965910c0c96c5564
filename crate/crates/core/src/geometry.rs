//! Parametric description of the internal-type stator.
//!
//! Layout (z up, base at z = 0):
//!
//! ```text
//!   z_top  +------+---+   <- tooth tips (tapered inner face), notched band
//!          | ring |PZT|
//!          |      |   |
//!   h_c    +--+---+---+
//!             |cl |       <- thin compliance tube, bottom fixed
//!   0         +---+
//!        r_in    r_bond r_out
//! ```
//!
//! The PZT tube is bonded to the outer circumference of the metal ring with
//! shared nodes, so the ring's outer radius is taken equal to the tube's inner
//! radius.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::inch;

/// Which wall the thin compliance tube under the ring is flush with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplianceSide {
    Inner,
    Outer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
/// Missing keys take the prototype values when deserialized.
#[serde(default, deny_unknown_fields)]
pub struct StatorSpec {
    /// PZT tube outer diameter, m.
    pub tube_outer_diameter: f64,
    /// PZT tube wall, m.
    pub tube_wall_thickness: f64,
    /// PZT tube height (and height of the driven ring), m.
    pub tube_height: f64,
    /// Machined OD of the stator top, m. The epoxy gap to the PZT is closed in
    /// the model; this value is only checked for consistency.
    pub stator_top_od: f64,
    /// Radial thickness of the metal ring behind the PZT, teeth included, m.
    pub stator_wall_thickness: f64,
    pub tooth_count: usize,
    /// Circumferential width of each notch, m.
    pub notch_width: f64,
    /// Axial depth of each notch measured from the top face, m.
    pub notch_depth: f64,
    /// Radial depth of each notch measured from the inner face, m.
    pub notch_radial_depth: f64,
    /// Chamfer of the tooth inner face, opening towards the top, degrees.
    pub taper_angle: f64,
    pub compliance_layer_height: f64,
    pub compliance_layer_thickness: f64,
    pub compliance_side: ComplianceSide,
    /// Number of etched electrode sectors on the PZT outer wall.
    pub electrode_sectors: usize,
    pub base_fixed: bool,
}

impl Default for StatorSpec {
    fn default() -> Self {
        default_stator_spec()
    }
}

/// The prototype's dimensions, converted from inches.
pub fn default_stator_spec() -> StatorSpec {
    StatorSpec {
        tube_outer_diameter: inch(1.00),
        tube_wall_thickness: inch(0.020),
        tube_height: inch(0.25),
        stator_top_od: inch(0.95),
        stator_wall_thickness: inch(0.06),
        tooth_count: 22,
        notch_width: inch(0.02),
        notch_depth: inch(0.10),
        notch_radial_depth: inch(0.06),
        taper_angle: 1.0,
        compliance_layer_height: inch(0.08),
        compliance_layer_thickness: inch(0.03),
        compliance_side: ComplianceSide::Inner,
        electrode_sectors: 20,
        base_fixed: true,
    }
}

/// Radii and heights derived from a [`StatorSpec`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatorDims {
    pub r_pzt_out: f64,
    pub r_bond: f64,
    pub r_inner: f64,
    pub r_notch_outer: f64,
    pub r_compliance_in: f64,
    pub r_compliance_out: f64,
    pub z_ring_bottom: f64,
    pub z_notch_bottom: f64,
    pub z_top: f64,
    /// tan(taper): radial opening per unit height inside the notched band.
    pub taper_slope: f64,
}

impl StatorDims {
    /// Inner radius of the tooth face at height `z`.
    pub fn tooth_inner_radius(&self, z: f64) -> f64 {
        if z <= self.z_notch_bottom {
            self.r_inner
        } else {
            self.r_inner + self.taper_slope * (z - self.z_notch_bottom)
        }
    }
}

impl StatorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::GeometryInfeasible(m));
        let lengths = [
            ("tube_outer_diameter", self.tube_outer_diameter),
            ("tube_wall_thickness", self.tube_wall_thickness),
            ("tube_height", self.tube_height),
            ("stator_top_od", self.stator_top_od),
            ("stator_wall_thickness", self.stator_wall_thickness),
            ("notch_width", self.notch_width),
            ("notch_depth", self.notch_depth),
            ("notch_radial_depth", self.notch_radial_depth),
            ("compliance_layer_height", self.compliance_layer_height),
            ("compliance_layer_thickness", self.compliance_layer_thickness),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be a positive length, got {v}"));
            }
        }
        if self.tooth_count < 3 {
            return bad(format!("tooth_count must be >= 3, got {}", self.tooth_count));
        }
        if self.electrode_sectors == 0 {
            return bad("electrode_sectors must be positive".into());
        }
        if !(0.0..=5.0).contains(&self.taper_angle) {
            return bad(format!("taper_angle must lie in [0, 5] deg, got {}", self.taper_angle));
        }
        if self.stator_top_od >= self.tube_outer_diameter {
            return bad("stator_top_od must be smaller than the PZT tube OD".into());
        }
        let d = self.dims_unchecked();
        if self.stator_top_od > 2.0 * d.r_bond + 1e-12 {
            return bad("stator top does not fit inside the PZT tube".into());
        }
        if d.r_inner <= 0.0 {
            return bad("stator wall thickness exceeds the available radius".into());
        }
        if self.notch_radial_depth > self.stator_wall_thickness + 1e-12 {
            return bad("notch radial depth exceeds the stator wall".into());
        }
        if self.compliance_layer_thickness > self.stator_wall_thickness + 1e-12 {
            return bad("compliance layer is thicker than the stator wall".into());
        }
        if self.notch_depth > self.tube_height + 1e-12 {
            return bad("notch depth exceeds the ring height".into());
        }
        let inner_circumference = 2.0 * PI * d.r_inner;
        if self.notch_width * self.tooth_count as f64 >= inner_circumference {
            return bad(format!(
                "{} notches of width {:.3e} m do not fit on the inner circumference {:.3e} m",
                self.tooth_count, self.notch_width, inner_circumference
            ));
        }
        let top_shift = d.taper_slope * self.notch_depth;
        if top_shift >= self.notch_radial_depth.min(self.stator_wall_thickness) {
            return bad("taper removes the whole tooth".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> Result<StatorDims> {
        self.validate()?;
        Ok(self.dims_unchecked())
    }

    fn dims_unchecked(&self) -> StatorDims {
        let r_pzt_out = 0.5 * self.tube_outer_diameter;
        let r_bond = r_pzt_out - self.tube_wall_thickness;
        let r_inner = r_bond - self.stator_wall_thickness;
        let (r_compliance_in, r_compliance_out) = match self.compliance_side {
            ComplianceSide::Outer => (r_bond - self.compliance_layer_thickness, r_bond),
            ComplianceSide::Inner => (r_inner, r_inner + self.compliance_layer_thickness),
        };
        let z_ring_bottom = self.compliance_layer_height;
        let z_top = z_ring_bottom + self.tube_height;
        StatorDims {
            r_pzt_out,
            r_bond,
            r_inner,
            r_notch_outer: r_inner + self.notch_radial_depth,
            r_compliance_in,
            r_compliance_out,
            z_ring_bottom,
            z_notch_bottom: z_top - self.notch_depth,
            z_top,
            taper_slope: self.taper_angle.to_radians().tan(),
        }
    }

    /// Angular width of one notch. Notch walls are radial in the mesh; the
    /// angle is chosen so the wedge has the same cross-section area as the
    /// parallel-walled slot.
    pub fn notch_angle(&self) -> f64 {
        let d = self.dims_unchecked();
        self.notch_width / (0.5 * (d.r_inner + d.r_notch_outer))
    }

    /// Radius of the tooth-tip contact ring at the top face.
    pub fn contact_radius(&self) -> f64 {
        let d = self.dims_unchecked();
        d.tooth_inner_radius(d.z_top)
    }

    pub fn pzt_volume(&self) -> f64 {
        let d = self.dims_unchecked();
        PI * (d.r_pzt_out.powi(2) - d.r_bond.powi(2)) * self.tube_height
    }

    /// Metal volume with straight-walled notches and the tapered tooth face.
    pub fn metal_volume(&self) -> f64 {
        let d = self.dims_unchecked();
        let compliance = PI
            * (d.r_compliance_out.powi(2) - d.r_compliance_in.powi(2))
            * self.compliance_layer_height;
        let plain = PI * (d.r_bond.powi(2) - d.r_inner.powi(2)) * (d.z_notch_bottom - d.z_ring_bottom);
        // Notched band: annulus area is quadratic in z, slot area linear, so
        // Simpson's rule is exact.
        let area = |z: f64| {
            let r_in = d.tooth_inner_radius(z);
            let annulus = PI * (d.r_bond.powi(2) - r_in.powi(2));
            let slots = self.tooth_count as f64 * self.notch_width * (d.r_notch_outer - r_in);
            annulus - slots
        };
        let (a, b) = (d.z_notch_bottom, d.z_top);
        let band = (b - a) / 6.0 * (area(a) + 4.0 * area(0.5 * (a + b)) + area(b));
        compliance + plain + band
    }

    pub fn total_volume(&self) -> f64 {
        self.pzt_volume() + self.metal_volume()
    }
}
