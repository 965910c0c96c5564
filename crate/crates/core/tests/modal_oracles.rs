//! Element, assembly and eigen solver checks against closed-form and dense
//! references.

mod oracles;

use hcm_core::fem::assembly::{apply_constraints, assemble, condense_electric, AssemblyOptions, CondensedSystem};
use hcm_core::materials::MaterialSet;
use hcm_core::mesh::primitives::ring_mesh;
use hcm_core::mesh::{Mesh, Region};
use hcm_core::modal::{hz_to_lambda, lambda_to_hz, solve_modes, EigenOptions};

fn condensed(mesh: &Mesh, fix_base: bool) -> CondensedSystem {
    let sys = assemble(mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
    condense_electric(&apply_constraints(&sys, fix_base).unwrap()).unwrap()
}

#[test]
fn free_ring_matches_inextensional_theory() {
    let [e2, e3] = oracles::ring_theory_errors();
    assert!(e2 < 0.03 && e3 < 0.03, "n=2 {e2:.4}, n=3 {e3:.4}");
}

#[test]
fn lanczos_matches_dense_solve_on_a_tiny_piezo_block() {
    let (n, err) = oracles::dense_vs_lanczos_error();
    assert!(n <= 300);
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn unit_cube_stiffness_matches_closed_form() {
    let err = oracles::element_stiffness_error();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn distorted_patch_reproduces_linear_field() {
    let err = oracles::patch_test_error();
    assert!(err < 1e-9, "{err:e}");
}

#[test]
fn free_free_piezo_block_has_six_rigid_modes() {
    let (zeros, gap) = oracles::free_free_rigid_modes();
    assert_eq!(zeros, 6);
    assert!(gap > 1e-6, "{gap:e}");
}

fn plain_tube() -> Mesh {
    ring_mesh(10e-3, 11e-3, 5e-3, 2, 96, 6, Region::Metal, 0).unwrap()
}

#[test]
fn results_do_not_depend_on_the_shift() {
    let mesh = plain_tube();
    let sys = condensed(&mesh, true);
    let a = solve_modes(&sys, 14e3, 12, &EigenOptions::default()).unwrap();
    let lo = a.modes[2].frequency_hz;
    let hi = a.modes[5].frequency_hz;
    // Two shifts on either side of the cluster formed by modes 2..=5.
    let b = solve_modes(&sys, 0.99 * lo, 12, &EigenOptions { seed: 7, ..Default::default() }).unwrap();
    let c = solve_modes(&sys, 1.01 * hi, 12, &EigenOptions { seed: 9, ..Default::default() }).unwrap();
    for m in &a.modes[2..=5] {
        for other in [&b, &c] {
            let near = other
                .modes
                .iter()
                .map(|o| (o.eigenvalue / m.eigenvalue - 1.0).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(near < 1e-9, "{} Hz moved by {near:e}", m.frequency_hz);
        }
    }
}

#[test]
fn unnotched_tube_has_degenerate_pairs_and_orthonormal_modes() {
    let mesh = plain_tube();
    let sys = condensed(&mesh, true);
    let mut set = solve_modes(&sys, 20e3, 12, &EigenOptions::default()).unwrap();
    set.annotate(&mesh, &sys.dof_map).unwrap();
    assert!(set.orthonormality_error(&sys) < 1e-8);
    let mut paired = 0;
    for m in set.modes.iter().filter(|m| m.nodal_diameter >= 1 && !m.nd_ambiguous) {
        let partner = set
            .modes
            .iter()
            .filter(|o| !std::ptr::eq(*o, m) && o.nodal_diameter == m.nodal_diameter)
            .map(|o| (o.frequency_hz / m.frequency_hz - 1.0).abs())
            .fold(f64::INFINITY, f64::min);
        if partner.is_finite() {
            assert!(partner < 1e-3, "nd {} split {partner:e}", m.nodal_diameter);
            paired += 1;
        }
    }
    assert!(paired >= 4, "only {paired} paired modes in {:?}", set.frequencies());
    for m in &set.modes {
        assert!(m.residual < 1e-8);
        assert!((lambda_to_hz(hz_to_lambda(m.frequency_hz)) / m.frequency_hz - 1.0).abs() < 1e-12);
    }
}
