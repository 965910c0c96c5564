//! Run configuration: TOML with one table per pipeline concern.
//!
//! ```toml
//! seed = 7
//!
//! [geometry]              # any StatorSpec field, SI units
//! stator_wall_thickness = 1.524e-3
//!
//! [materials]
//! metal = "c360"          # or "copper"
//! stiffness_scale = 1.0
//!
//! [drive]
//! vpp = 282.0             # or v0 = 141.0, not both
//! frequency = "auto:mode5" # or a number in Hz
//! phase_order = "forward"
//!
//! [analysis]
//! refinement = 1
//!
//! [rotor]
//! motor = "hcm1"
//! preloads_g = [0.0, 10.0, 50.0]
//!
//! [report]
//! checks = false
//! ```
//!
//! Every key is optional; an empty file gives the prototype configuration.

use std::path::PathBuf;

use hcm_core::contact::{hcm1_anchors, hcm2_anchors, MotorAnchors};
use hcm_core::drive::{Channel, FORWARD_ORDER, REVERSED_ORDER};
use hcm_core::error::{Error, Result};
use hcm_core::fem::hex8::ElementFormulation;
use hcm_core::geometry::StatorSpec;
use hcm_core::materials::{c360_brass, pure_copper, MaterialSet};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub geometry: StatorSpec,
    pub materials: MaterialsConfig,
    pub drive: DriveConfig,
    pub analysis: AnalysisConfig,
    pub rotor: RotorConfig,
    pub report: ReportConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metal {
    #[default]
    C360,
    Copper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    pub metal: Metal,
    pub metal_youngs_modulus: Option<f64>,
    pub metal_poissons_ratio: Option<f64>,
    pub metal_density: Option<f64>,
    pub pzt_density: Option<f64>,
    /// Scales every elastic stiffness (metal and PZT).
    pub stiffness_scale: f64,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        MaterialsConfig {
            metal: Metal::C360,
            metal_youngs_modulus: None,
            metal_poissons_ratio: None,
            metal_density: None,
            pzt_density: None,
            stiffness_scale: 1.0,
        }
    }
}

/// Drive frequency: a number in Hz, or `"auto:modeN"` for the solved
/// frequency of mode number N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrequencySetting {
    Hz(f64),
    Auto(String),
}

impl Default for FrequencySetting {
    fn default() -> Self {
        FrequencySetting::Auto("auto:mode5".into())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseOrder {
    #[default]
    Forward,
    Reversed,
}

impl PhaseOrder {
    pub fn channels(self) -> [Channel; 4] {
        match self {
            PhaseOrder::Forward => FORWARD_ORDER,
            PhaseOrder::Reversed => REVERSED_ORDER,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub v0: Option<f64>,
    pub vpp: Option<f64>,
    pub frequency: FrequencySetting,
    pub phase_order: PhaseOrder,
    /// Defaults to a quarter of the electrode sector count.
    pub nodal_diameter: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransientMethod {
    #[default]
    Modal,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub refinement: usize,
    pub formulation: ElementFormulation,
    pub mode_count: usize,
    pub mode_target_hz: f64,
    pub transient_method: TransientMethod,
    pub duration: f64,
    pub steps_per_period: f64,
    /// Modal damping ratio at the drive frequency (stiffness-proportional).
    pub damping_ratio: f64,
    /// Explicit Rayleigh coefficients; both must be given to override.
    pub rayleigh_alpha: Option<f64>,
    pub rayleigh_beta: Option<f64>,
    pub sweep_lo_hz: f64,
    pub sweep_hi_hz: f64,
    pub sweep_df_hz: f64,
    pub sweep_prominence: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            refinement: 1,
            formulation: ElementFormulation::IncompatibleModes,
            mode_count: 30,
            mode_target_hz: 30e3,
            transient_method: TransientMethod::Modal,
            duration: 2.5e-3,
            steps_per_period: 40.0,
            damping_ratio: 0.01,
            rayleigh_alpha: None,
            rayleigh_beta: None,
            sweep_lo_hz: 1e3,
            sweep_hi_hz: 60e3,
            sweep_df_hz: 100.0,
            sweep_prominence: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motor {
    #[default]
    Hcm1,
    Hcm2,
}

impl Motor {
    pub fn anchors(self) -> MotorAnchors {
        match self {
            Motor::Hcm1 => hcm1_anchors(),
            Motor::Hcm2 => hcm2_anchors(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotorConfig {
    pub motor: Motor,
    pub preloads_g: Vec<f64>,
    pub speed_voltages_vpp: Vec<f64>,
    /// Measured `voltage_vpp,speed_rpm` points to fit.
    pub speed_data: Option<PathBuf>,
    /// Measured `preload_g,torque_mNm` points to compare.
    pub torque_data: Option<PathBuf>,
}

impl Default for RotorConfig {
    fn default() -> Self {
        RotorConfig {
            motor: Motor::Hcm1,
            preloads_g: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            speed_voltages_vpp: vec![46.0, 94.0, 141.0, 188.0, 235.0, 282.0],
            speed_data: None,
            torque_data: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub title: String,
    /// `mode,freq_khz,source` table; the built-in bench table if absent.
    pub measured_table: Option<PathBuf>,
    /// Evaluate the built-in checks and fail the run if any does not hold.
    pub checks: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            title: "Hollow cylindrical motor simulation".into(),
            measured_table: None,
            checks: false,
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        message: message.into(),
    }
}

/// Line and column (1-based) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    (line, col)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.materials()?;
        match (self.drive.v0, self.drive.vpp) {
            (Some(v0), Some(vpp)) if (2.0 * v0 - vpp).abs() > 1e-9 * vpp.abs().max(1.0) => {
                return Err(invalid("drive.vpp", format!("{vpp} Vpp conflicts with drive.v0 = {v0} V (Vpp = 2 V0)")));
            }
            _ => {}
        }
        let v0 = self.amplitude_v0();
        if !(v0.is_finite() && v0 >= 0.0) {
            return Err(invalid("drive.v0", format!("must be >= 0, got {v0}")));
        }
        match &self.drive.frequency {
            FrequencySetting::Hz(f) if !(*f > 0.0) => {
                return Err(invalid("drive.frequency", format!("must be > 0 Hz, got {f}")));
            }
            FrequencySetting::Hz(_) => {}
            FrequencySetting::Auto(_) => {
                self.auto_mode()?;
            }
        }
        let nd = self.nodal_diameter();
        if self.geometry.electrode_sectors != 4 * nd {
            return Err(invalid(
                "drive.nodal_diameter",
                format!("{} sectors cannot drive nodal diameter {nd}", self.geometry.electrode_sectors),
            ));
        }
        let a = &self.analysis;
        if !(1..=6).contains(&a.refinement) {
            return Err(invalid("analysis.refinement", format!("must lie in 1..=6, got {}", a.refinement)));
        }
        if a.mode_count == 0 {
            return Err(invalid("analysis.mode_count", "must be positive"));
        }
        if !(a.mode_target_hz > 0.0) {
            return Err(invalid("analysis.mode_target_hz", "must be > 0"));
        }
        if !(a.steps_per_period >= 20.0) {
            return Err(invalid("analysis.steps_per_period", format!("must be >= 20, got {}", a.steps_per_period)));
        }
        if !(a.duration > 0.0) {
            return Err(invalid("analysis.duration", "must be > 0"));
        }
        if !(a.damping_ratio >= 0.0 && a.damping_ratio < 1.0) {
            return Err(invalid("analysis.damping_ratio", format!("must lie in [0, 1), got {}", a.damping_ratio)));
        }
        if a.rayleigh_alpha.is_some() != a.rayleigh_beta.is_some() {
            return Err(invalid("analysis.rayleigh_beta", "give both Rayleigh coefficients or neither"));
        }
        if !(a.sweep_lo_hz > 0.0 && a.sweep_hi_hz > a.sweep_lo_hz && a.sweep_df_hz > 0.0) {
            return Err(invalid("analysis.sweep_hi_hz", "sweep needs 0 < lo < hi and df > 0"));
        }
        if self.rotor.preloads_g.iter().any(|g| !(*g >= 0.0)) {
            return Err(invalid("rotor.preloads_g", "preloads must be >= 0"));
        }
        if self.rotor.speed_voltages_vpp.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("rotor.speed_voltages_vpp", "voltages must be > 0"));
        }
        Ok(())
    }

    pub fn amplitude_v0(&self) -> f64 {
        match (self.drive.v0, self.drive.vpp) {
            (Some(v0), _) => v0,
            (None, Some(vpp)) => 0.5 * vpp,
            (None, None) => 0.5 * self.rotor.motor.anchors().speed_vpp,
        }
    }

    pub fn nodal_diameter(&self) -> usize {
        self.drive.nodal_diameter.unwrap_or(self.geometry.electrode_sectors / 4)
    }

    /// Mode number for `auto:modeN`, or `None` for an explicit frequency.
    pub fn auto_mode(&self) -> Result<Option<usize>> {
        match &self.drive.frequency {
            FrequencySetting::Hz(_) => Ok(None),
            FrequencySetting::Auto(s) => s
                .strip_prefix("auto:mode")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| *n >= 1)
                .map(Some)
                .ok_or_else(|| invalid("drive.frequency", format!("expected a number or \"auto:modeN\", got {s:?}"))),
        }
    }

    pub fn materials(&self) -> Result<MaterialSet> {
        let m = &self.materials;
        let mut metal = match m.metal {
            Metal::C360 => c360_brass(),
            Metal::Copper => pure_copper(),
        };
        if let Some(e) = m.metal_youngs_modulus {
            metal.youngs_modulus = e;
        }
        if let Some(nu) = m.metal_poissons_ratio {
            metal.poissons_ratio = nu;
        }
        if let Some(rho) = m.metal_density {
            metal.density = rho;
        }
        if !(m.stiffness_scale > 0.0) {
            return Err(invalid("materials.stiffness_scale", "must be > 0"));
        }
        let mut set = hcm_core::model::scale_moduli(&MaterialSet::with_metal(metal), m.stiffness_scale);
        if let Some(rho) = m.pzt_density {
            set.pzt.density = rho;
        }
        set.validate().map_err(|e| match e {
            Error::Validation { key, message } => invalid(&format!("materials.{key}"), message),
            other => other,
        })?;
        Ok(set)
    }

    /// Resolved configuration as TOML, for the report.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
