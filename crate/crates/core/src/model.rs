//! The stator model end to end: geometry, mesh, condensed system and the
//! mode families that carry the motor's numbering.

use crate::error::{Error, Result};
use crate::fem::assembly::{apply_constraints, assemble, condense_electric, AssemblyOptions, CondensedSystem};
use crate::geometry::StatorSpec;
use crate::materials::MaterialSet;
use crate::mesh::{generate_mesh, Mesh};
use crate::modal::{solve_modes, EigenOptions, ModeSet};
use crate::transient::{tip_probes, Probe};

/// Mode numbers used for the stator: mode `k` is the nodal-diameter-`k`
/// family.
pub const MODE_NUMBERS: [usize; 6] = [2, 3, 4, 5, 6, 7];

pub struct StatorModel {
    pub spec: StatorSpec,
    pub materials: MaterialSet,
    pub refinement: usize,
    pub mesh: Mesh,
    pub system: CondensedSystem,
    pub probes: Vec<Probe>,
}

impl StatorModel {
    pub fn build(spec: &StatorSpec, materials: &MaterialSet, refinement: usize, opts: AssemblyOptions) -> Result<Self> {
        materials.validate()?;
        let mesh = generate_mesh(spec, refinement)?;
        let full = assemble(&mesh, materials, opts)?;
        let system = condense_electric(&apply_constraints(&full, spec.base_fixed)?)?;
        let probes = tip_probes(&mesh, &system.dof_map)?;
        Ok(StatorModel {
            spec: spec.clone(),
            materials: materials.clone(),
            refinement,
            mesh,
            system,
            probes,
        })
    }

    /// Eigenpairs nearest `target_hz`, classified by nodal diameter.
    pub fn modes(&self, target_hz: f64, count: usize, opts: &EigenOptions) -> Result<ModeSet> {
        let mut set = solve_modes(&self.system, target_hz, count, opts)?;
        set.annotate(&self.mesh, &self.system.dof_map)?;
        Ok(set)
    }
}

/// `(mode number, eigenmode index)` for every entry of [`MODE_NUMBERS`].
pub fn track_modes(set: &ModeSet) -> Vec<(usize, Option<usize>)> {
    MODE_NUMBERS.iter().copied().zip(set.track_by_nodal_diameter(&MODE_NUMBERS)).collect()
}

/// Frequency of mode number `k`, if tracked.
pub fn mode_frequency(set: &ModeSet, k: usize) -> Option<f64> {
    set.track_by_nodal_diameter(&[k])[0].map(|i| set.modes[i].frequency_hz)
}

/// Same materials with every elastic stiffness scaled; coupling and
/// permittivity are unchanged.
pub fn scale_moduli(materials: &MaterialSet, scale: f64) -> MaterialSet {
    MaterialSet {
        pzt: materials.pzt.with_stiffness_scale(scale),
        metal: materials.metal.with_modulus_scale(scale),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulusCalibration {
    pub scale: f64,
    pub iterations: usize,
    pub modes: ModeSet,
}

/// Finds the global stiffness scale that puts mode number `mode` at
/// `target_hz`. Starts from the elastic estimate `(f_target / f)²` and
/// refines by secant steps, since piezoelectric stiffening does not scale.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_modulus(
    spec: &StatorSpec,
    materials: &MaterialSet,
    refinement: usize,
    opts: AssemblyOptions,
    eigen: &EigenOptions,
    count: usize,
    mode: usize,
    target_hz: f64,
) -> Result<ModulusCalibration> {
    let solve = |scale: f64| -> Result<(f64, ModeSet)> {
        let model = StatorModel::build(spec, &scale_moduli(materials, scale), refinement, opts)?;
        let set = model.modes(target_hz, count, eigen)?;
        let f = mode_frequency(&set, mode)
            .ok_or_else(|| Error::invalid(format!("mode {mode} not found near {target_hz:.1} Hz")))?;
        Ok((f, set))
    };
    let (f0, set0) = solve(1.0)?;
    let (mut s_prev, mut f_prev) = (1.0, f0);
    let mut s = (target_hz / f0).powi(2);
    let mut best = (1.0, set0, (f0 / target_hz - 1.0).abs());
    for it in 1..=6 {
        let (f, set) = solve(s)?;
        let err = (f / target_hz - 1.0).abs();
        if err < best.2 {
            best = (s, set, err);
        }
        if err < 1e-5 {
            return Ok(ModulusCalibration {
                scale: s,
                iterations: it,
                modes: best.1,
            });
        }
        // Secant on f² against the scale.
        let slope = (f * f - f_prev * f_prev) / (s - s_prev);
        let next = if slope > 0.0 { s + (target_hz * target_hz - f * f) / slope } else { s * (target_hz / f).powi(2) };
        (s_prev, f_prev, s) = (s, f, next);
    }
    Ok(ModulusCalibration {
        scale: best.0,
        iterations: 6,
        modes: best.1,
    })
}
