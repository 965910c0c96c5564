//! Four-phase quadrature drive and its mapping onto electrode sectors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drive channels, in the canonical order used by [`signal_at`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    SinPlus,
    CosPlus,
    SinMinus,
    CosMinus,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::SinPlus, Channel::CosPlus, Channel::SinMinus, Channel::CosMinus];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Phase lead over `sin+`.
    pub fn phase(self) -> f64 {
        self.index() as f64 * 0.5 * PI
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::SinPlus => "sin+",
            Channel::CosPlus => "cos+",
            Channel::SinMinus => "sin-",
            Channel::CosMinus => "cos-",
        }
    }
}

/// Channel order around the circumference for the canonical pattern.
pub const FORWARD_ORDER: [Channel; 4] = Channel::ALL;

/// `sin+` and `sin-` swapped: the wave travels the other way.
pub const REVERSED_ORDER: [Channel; 4] = [Channel::SinMinus, Channel::CosPlus, Channel::SinPlus, Channel::CosMinus];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSignalSpec {
    /// Peak amplitude, V. Peak-to-peak is twice this.
    pub amplitude_v0: f64,
    pub frequency_hz: f64,
    pub phase_order: [Channel; 4],
    /// Channel feeding each electrode sector.
    pub sector_assignment: Vec<Channel>,
}

impl DriveSignalSpec {
    /// Canonical pattern for `n_sectors` sectors driving nodal diameter `nd`.
    pub fn new(amplitude_v0: f64, frequency_hz: f64, n_sectors: usize, nd: usize) -> Result<Self> {
        Self::with_order(amplitude_v0, frequency_hz, n_sectors, nd, FORWARD_ORDER)
    }

    pub fn with_order(
        amplitude_v0: f64,
        frequency_hz: f64,
        n_sectors: usize,
        nd: usize,
        phase_order: [Channel; 4],
    ) -> Result<Self> {
        let spec = DriveSignalSpec {
            amplitude_v0,
            frequency_hz,
            phase_order,
            sector_assignment: assign_sectors_with(n_sectors, nd, phase_order)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_v0.is_finite() && self.amplitude_v0 >= 0.0) {
            return Err(Error::invalid(format!("drive amplitude must be >= 0, got {}", self.amplitude_v0)));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::invalid(format!("drive frequency must be > 0, got {}", self.frequency_hz)));
        }
        let mut seen = [false; 4];
        for c in self.phase_order {
            seen[c.index()] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::IncompatiblePattern("phase order must be a permutation of the four channels".into()));
        }
        Ok(())
    }

    pub fn vpp(&self) -> f64 {
        2.0 * self.amplitude_v0
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency_hz
    }

    /// Voltage on each electrode sector at time `t`.
    pub fn sector_voltages(&self, t: f64) -> Vec<f64> {
        let ch = signal_at(self, t);
        self.sector_assignment.iter().map(|c| ch[c.index()]).collect()
    }

    /// Same drive with the amplitude of one channel pair removed, leaving a
    /// single standing wave.
    pub fn without_cos_pair(&self) -> MaskedDrive<'_> {
        MaskedDrive {
            drive: self,
            enabled: [true, false, true, false],
        }
    }
}

/// A drive with some channels switched off.
#[derive(Clone, Copy, Debug)]
pub struct MaskedDrive<'a> {
    pub drive: &'a DriveSignalSpec,
    pub enabled: [bool; 4],
}

/// Anything that yields sector voltages over time.
pub trait SectorVoltages {
    fn frequency_hz(&self) -> f64;
    fn n_sectors(&self) -> usize;
    fn voltages_into(&self, t: f64, out: &mut [f64]);
}

impl SectorVoltages for DriveSignalSpec {
    fn frequency_hz(&self) -> f64 {
        self.frequency_hz
    }
    fn n_sectors(&self) -> usize {
        self.sector_assignment.len()
    }
    fn voltages_into(&self, t: f64, out: &mut [f64]) {
        let ch = signal_at(self, t);
        for (o, c) in out.iter_mut().zip(&self.sector_assignment) {
            *o = ch[c.index()];
        }
    }
}

impl SectorVoltages for MaskedDrive<'_> {
    fn frequency_hz(&self) -> f64 {
        self.drive.frequency_hz
    }
    fn n_sectors(&self) -> usize {
        self.drive.sector_assignment.len()
    }
    fn voltages_into(&self, t: f64, out: &mut [f64]) {
        let ch = signal_at(self.drive, t);
        for (o, c) in out.iter_mut().zip(&self.drive.sector_assignment) {
            *o = if self.enabled[c.index()] { ch[c.index()] } else { 0.0 };
        }
    }
}

/// Channel voltages `(sin+, cos+, sin-, cos-)` at time `t`.
pub fn signal_at(spec: &DriveSignalSpec, t: f64) -> [f64; 4] {
    let arg = 2.0 * PI * spec.frequency_hz * t;
    let s = spec.amplitude_v0 * arg.sin();
    let c = spec.amplitude_v0 * (arg + 0.5 * PI).sin();
    [s, c, -s, -c]
}

/// Canonical sector pattern: four sectors per wavelength, channels in
/// `sin+, cos+, sin-, cos-` order.
pub fn assign_sectors(n_sectors: usize, nodal_diameter: usize) -> Result<Vec<Channel>> {
    assign_sectors_with(n_sectors, nodal_diameter, FORWARD_ORDER)
}

pub fn assign_sectors_with(n_sectors: usize, nodal_diameter: usize, order: [Channel; 4]) -> Result<Vec<Channel>> {
    if n_sectors == 0 || !n_sectors.is_multiple_of(4) {
        return Err(Error::IncompatiblePattern(format!(
            "{n_sectors} sectors cannot carry a four-phase pattern"
        )));
    }
    if n_sectors != 4 * nodal_diameter {
        return Err(Error::IncompatiblePattern(format!(
            "{n_sectors} sectors give a quarter-wavelength pattern for nodal diameter {}, not {nodal_diameter}",
            n_sectors / 4
        )));
    }
    Ok((0..n_sectors).map(|k| order[k % 4]).collect())
}
