//! Invariants of the generated stator mesh.

use std::collections::HashMap;
use std::f64::consts::PI;

use hcm_core::error::Error;
use hcm_core::geometry::{default_stator_spec, ComplianceSide, StatorSpec};
use hcm_core::mesh::{angular_divisions, gcd, generate_mesh, Mesh, SurfaceTag};
use proptest::prelude::*;

fn face_key(mut nodes: [usize; 4]) -> [usize; 4] {
    nodes.sort_unstable();
    nodes
}

fn tagged_faces(m: &Mesh) -> HashMap<([usize; 4], SurfaceTag), usize> {
    let mut out = HashMap::new();
    for (f, t) in &m.surfaces {
        *out.entry((face_key(m.face_nodes(*f)), *t)).or_insert(0) += 1;
    }
    out
}

/// True when rotating by `angle` maps nodes onto nodes and every tagged face
/// onto a face with the same tag, electrode indices shifted by `shift`.
fn maps_onto_itself(m: &Mesh, angle: f64, shift: usize) -> bool {
    let rotated = m.rotated(angle);
    let Some(corr) = m.node_correspondence(&rotated, 1e-9) else {
        return false;
    };
    let faces = tagged_faces(m);
    m.surfaces.iter().all(|(f, t)| {
        let moved = face_key(m.face_nodes(*f).map(|n| corr[n]));
        let tag = match t {
            SurfaceTag::Electrode(k) => SurfaceTag::Electrode((k + shift) % m.n_sectors),
            other => *other,
        };
        faces.contains_key(&(moved, tag))
    })
}

#[test]
fn volume_converges_to_the_solid() {
    let spec = default_stator_spec();
    let exact = spec.total_volume();
    for r in [2, 3] {
        let m = generate_mesh(&spec, r).unwrap();
        let rel = (m.total_volume() - exact).abs() / exact;
        assert!(rel < 0.01, "refinement {r}: volume off by {rel}");
    }
}

#[test]
fn element_count_grows_and_sectors_stay_resolved() {
    let spec = default_stator_spec();
    let mut last = 0;
    for r in 1..=3 {
        let m = generate_mesh(&spec, r).unwrap();
        assert!(m.n_elements() > last);
        last = m.n_elements();
        let nt = angular_divisions(spec.electrode_sectors, r);
        assert_eq!(nt % (4 * spec.electrode_sectors), 0);
        assert!(nt / spec.electrode_sectors >= 2 * r);
        m.validate_tags().unwrap();
        m.check_quality().unwrap();
    }
}

#[test]
fn electrodes_have_equal_area() {
    let spec = default_stator_spec();
    for r in [1, 2] {
        let m = generate_mesh(&spec, r).unwrap();
        let a = m.electrode_areas();
        assert_eq!(a.len(), spec.electrode_sectors);
        let (lo, hi) = a.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        assert!((hi - lo) / lo < 0.005, "refinement {r}: {a:?}");
    }
}

#[test]
fn mesh_repeats_with_the_common_period_of_teeth_and_sectors() {
    let spec = default_stator_spec();
    let m = generate_mesh(&spec, 1).unwrap();
    let n = spec.electrode_sectors;
    let g = gcd(n, spec.tooth_count);
    assert!(maps_onto_itself(&m, 2.0 * PI / g as f64, n / g));
    // One sector pitch is not a symmetry: 22 teeth do not repeat every 18°.
    assert!(!maps_onto_itself(&m, 2.0 * PI / n as f64, 1));

    // With a tooth count that is a multiple of the sector count, one sector
    // pitch is a symmetry.
    let aligned = StatorSpec {
        tooth_count: 20,
        ..spec
    };
    let m = generate_mesh(&aligned, 1).unwrap();
    assert!(maps_onto_itself(&m, 2.0 * PI / n as f64, 1));
}

#[test]
fn overlapping_teeth_are_infeasible() {
    let mut spec = default_stator_spec();
    spec.notch_width = 4e-3;
    assert!(matches!(generate_mesh(&spec, 1), Err(Error::GeometryInfeasible(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn perturbed_specs_give_valid_meshes(
        wall in 0.8e-3f64..1.6e-3,
        notch_frac in 0.5f64..1.0,
        teeth in 12usize..30,
        taper in 0.0f64..2.0,
        inner in any::<bool>(),
    ) {
        let mut spec = default_stator_spec();
        spec.stator_wall_thickness = wall;
        spec.notch_radial_depth = notch_frac * wall;
        spec.tooth_count = teeth;
        spec.taper_angle = taper;
        spec.compliance_side = if inner { ComplianceSide::Inner } else { ComplianceSide::Outer };
        let m = generate_mesh(&spec, 1).unwrap();
        m.check_quality().unwrap();
        m.validate_tags().unwrap();
        let rel = (m.total_volume() - spec.total_volume()).abs() / spec.total_volume();
        prop_assert!(rel < 0.03, "volume off by {}", rel);
        let a = m.electrode_areas();
        let (lo, hi) = a.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        prop_assert!((hi - lo) / lo < 0.005);
    }
}

