//! Shared fixture: a small piezoelectric ring with an nd = 2 electrode pattern.

#![allow(dead_code)]

use std::sync::OnceLock;

use hcm_core::fem::assembly::{apply_constraints, assemble, condense_electric, AssemblyOptions, CondensedSystem};
use hcm_core::materials::MaterialSet;
use hcm_core::mesh::primitives::ring_mesh;
use hcm_core::mesh::Region;
use hcm_core::modal::{solve_modes, EigenOptions, ModeSet};
use hcm_core::transient::{tip_probes, Probe};

pub const ND: usize = 2;
pub const SECTORS: usize = 4 * ND;

pub struct Ring {
    pub sys: CondensedSystem,
    pub probes: Vec<Probe>,
    pub modes: ModeSet,
    pub f_op: f64,
}

pub fn ring() -> &'static Ring {
    static RING: OnceLock<Ring> = OnceLock::new();
    RING.get_or_init(|| {
        let mesh = ring_mesh(10e-3, 11e-3, 4e-3, 1, 48, 4, Region::Pzt, SECTORS).unwrap();
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        let sys = condense_electric(&apply_constraints(&sys, true).unwrap()).unwrap();
        let probes = tip_probes(&mesh, &sys.dof_map).unwrap();
        let mut modes = solve_modes(&sys, 1.0, 40, &EigenOptions::default()).unwrap();
        modes.annotate(&mesh, &sys.dof_map).unwrap();
        let op = modes.track_by_nodal_diameter(&[ND])[0].expect("nd = 2 radial mode");
        let f_op = modes.modes[op].frequency_hz;
        Ring {
            sys,
            probes,
            modes,
            f_op,
        }
    })
}
