//! Independent reference computations for the element, assembly and eigen
//! layers. Each returns the measured discrepancy so callers pick the bound.

#![allow(dead_code)]

use std::f64::consts::PI;

use hcm_core::fem::assembly::{apply_constraints, assemble, condense_electric, AssemblyOptions, CondensedSystem};
use hcm_core::fem::hex8::{element_matrices, ElementFormulation, ElementMaterial, NODE_NATURAL};
use hcm_core::materials::{c360_brass, pzt5h_default, Mat3x6, MaterialSet};
use hcm_core::mesh::primitives::{box_mesh, ring_mesh};
use hcm_core::mesh::{Mesh, Region};
use hcm_core::modal::{classify_nodal_diameter, solve_modes, EigenOptions};
use hcm_core::par::Execution;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

fn voigt(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (1, 2) => 3,
        (0, 2) => 4,
        _ => 5,
    }
}

/// Exact stiffness of the trilinear unit cube `[0, 1]³`, node order as the
/// element. Shape functions are products of `x` or `1 − x` per direction, so
/// every entry is a product of the 1-D integrals 1/3, 1/6, 1/2 and ±1.
pub fn unit_cube_stiffness(c: &Matrix6<f64>) -> DMatrix<f64> {
    let corner: Vec<[usize; 3]> = NODE_NATURAL
        .iter()
        .map(|n| [(n[0] > 0.0) as usize, (n[1] > 0.0) as usize, (n[2] > 0.0) as usize])
        .collect();
    let slope = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
    // ∫ ∂_k N_a ∂_l N_b over the cube.
    let integral = |a: usize, b: usize, k: usize, l: usize| -> f64 {
        (0..3)
            .map(|d| {
                let (sa, sb) = (slope(corner[a][d]), slope(corner[b][d]));
                match (d == k, d == l) {
                    (true, true) => sa * sb,
                    (true, false) => sa * 0.5,
                    (false, true) => sb * 0.5,
                    (false, false) => {
                        if corner[a][d] == corner[b][d] {
                            1.0 / 3.0
                        } else {
                            1.0 / 6.0
                        }
                    }
                }
            })
            .product()
    };
    let mut k = DMatrix::zeros(24, 24);
    for a in 0..8 {
        for b in 0..8 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for kk in 0..3 {
                        for l in 0..3 {
                            s += c[(voigt(i, kk), voigt(j, l))] * integral(a, b, kk, l);
                        }
                    }
                    k[(3 * a + i, 3 * b + j)] = s;
                }
            }
        }
    }
    k
}

fn elastic(c: Matrix6<f64>) -> ElementMaterial {
    ElementMaterial {
        stiffness: c,
        coupling: Mat3x6::zeros(),
        permittivity: Matrix3::zeros(),
        density: 1.0,
        piezo: false,
    }
}

/// Largest entry error of the integrated unit-cube stiffness against the
/// closed form, relative to the largest entry, for an isotropic and the
/// normalized PZT-5H stiffness.
pub fn element_stiffness_error() -> f64 {
    let coords: [Vector3<f64>; 8] =
        std::array::from_fn(|a| Vector3::from_iterator(NODE_NATURAL[a].iter().map(|x| 0.5 * (x + 1.0))));
    let mut iso = c360_brass();
    iso.youngs_modulus = 1.0;
    let pzt = pzt5h_default().elastic_stiffness_ce;
    let mut worst: f64 = 0.0;
    for c in [iso.stiffness(), pzt / pzt[(0, 0)]] {
        let em = element_matrices(0, &coords, &elastic(c), ElementFormulation::Full).unwrap();
        let want = unit_cube_stiffness(&c);
        let scale = want.amax();
        for i in 0..24 {
            for j in 0..24 {
                worst = worst.max((em.k_uu[(i, j)] - want[(i, j)]).abs() / scale);
            }
        }
    }
    worst
}

/// Interior-node error of a linear field on a distorted 2×2×2 patch, worst
/// over the three formulations, relative to the exact displacement.
pub fn patch_test_error() -> f64 {
    let mut mesh = box_mesh(0.0, 2e-3, 2e-3, 2e-3, 2, 2, 2, Region::Metal).unwrap();
    let centre = (0..mesh.n_nodes())
        .find(|&n| mesh.nodes[n].iter().all(|&x| (x - 1e-3).abs() < 1e-12))
        .unwrap();
    mesh.nodes[centre] = [1.13e-3, 0.91e-3, 1.07e-3];
    let a = Matrix3::new(1.0, 0.3, -0.2, 0.1, -0.7, 0.4, 0.25, 0.5, 0.9) * 1e-4;
    let b = Vector3::new(1e-6, -2e-6, 3e-6);
    let exact = |p: [f64; 3]| a * Vector3::from(p) + b;
    let mut worst: f64 = 0.0;
    for f in [
        ElementFormulation::Full,
        ElementFormulation::SelectiveReduced,
        ElementFormulation::IncompatibleModes,
    ] {
        let opts = AssemblyOptions {
            formulation: f,
            execution: Execution::Sequential,
        };
        let k = assemble(&mesh, &MaterialSet::default(), opts).unwrap().k_uu.to_dense();
        let free: Vec<usize> = (0..3).map(|i| 3 * centre + i).collect();
        let mut u = DVector::zeros(3 * mesh.n_nodes());
        for n in 0..mesh.n_nodes() {
            let v = exact(mesh.nodes[n]);
            u.rows_mut(3 * n, 3).copy_from(&v);
        }
        for &d in &free {
            u[d] = 0.0;
        }
        let rhs = -(&k * &u);
        let kff = DMatrix::from_fn(3, 3, |i, j| k[(free[i], free[j])]);
        let rf = DVector::from_iterator(3, free.iter().map(|&d| rhs[d]));
        let sol = kff.lu().solve(&rf).unwrap();
        let want = exact(mesh.nodes[centre]);
        worst = worst.max((Vector3::new(sol[0], sol[1], sol[2]) - want).norm() / want.norm());
    }
    worst
}

fn condensed(mesh: &Mesh, fix_base: bool) -> CondensedSystem {
    let sys = assemble(mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
    condense_electric(&apply_constraints(&sys, fix_base).unwrap()).unwrap()
}

/// Eigenvalues of `K* x = λ M x` by Cholesky reduction, ascending.
pub fn dense_eigenvalues(sys: &CondensedSystem) -> Vec<f64> {
    let k = sys.k_star_dense();
    let m = sys.mass.to_dense();
    let li = m.cholesky().unwrap().l().try_inverse().unwrap();
    let a = &li * k * li.transpose();
    let a: DMatrix<f64> = (&a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Free-free piezo block: number of eigenvalues below 1e-10 of the largest,
/// and the gap ratio of the first elastic eigenvalue.
pub fn free_free_rigid_modes() -> (usize, f64) {
    let mesh = box_mesh(0.0, 2e-3, 1e-3, 1e-3, 2, 1, 1, Region::Pzt).unwrap();
    let ev = dense_eigenvalues(&condensed(&mesh, false));
    let top = ev[ev.len() - 1];
    let zeros = ev.iter().filter(|x| x.abs() < 1e-10 * top).count();
    (zeros, ev[zeros.min(ev.len() - 1)] / top)
}

/// Largest relative gap between shift-invert Lanczos and the dense solve on
/// a piezo block of at most 300 DOFs.
pub fn dense_vs_lanczos_error() -> (usize, f64) {
    let mesh = box_mesh(2e-3, 0.6e-3, 1e-3, 2e-3, 2, 2, 2, Region::Pzt).unwrap();
    let sys = condensed(&mesh, true);
    let dense = dense_eigenvalues(&sys);
    let sigma = dense[4] * 1.01;
    let sol = hcm_core::modal::lanczos::eigs_near(&sys, sigma, 8, &EigenOptions::default()).unwrap();
    let mut want = dense.clone();
    want.sort_by(|a, b| (a - sigma).abs().total_cmp(&(b - sigma).abs()));
    want.truncate(8);
    want.sort_by(f64::total_cmp);
    let err = sol
        .pairs
        .iter()
        .zip(&want)
        .map(|(p, w)| (p.lambda / w - 1.0).abs())
        .fold(0.0, f64::max);
    (sys.n_u(), err)
}

/// In-plane flexural frequency of a thin free ring (inextensional theory).
pub fn ring_theory_hz(n: f64, e: f64, rho: f64, radius: f64, thickness: f64) -> f64 {
    let i_over_a = thickness * thickness / 12.0;
    let base = (e * i_over_a / (rho * radius.powi(4))).sqrt();
    base * n * (n * n - 1.0) / (n * n + 1.0).sqrt() / (2.0 * PI)
}

/// Relative error of the n = 2 and n = 3 in-plane modes of a free brass ring.
pub fn ring_theory_errors() -> [f64; 2] {
    let (radius, t) = (10e-3, 0.5e-3);
    let mesh = ring_mesh(radius - t / 2.0, radius + t / 2.0, t, 2, 120, 1, Region::Metal, 0).unwrap();
    let sys = condensed(&mesh, false);
    let brass = c360_brass();
    let f = [2.0, 3.0].map(|n| ring_theory_hz(n, brass.youngs_modulus, brass.density, radius, t));
    let set = solve_modes(&sys, f[0], 16, &EigenOptions::default()).unwrap();
    let mut found = [None, None];
    for m in &set.modes {
        let u = sys.dof_map.expand(&m.shape);
        let axial: f64 = u.iter().map(|v| v[2] * v[2]).sum();
        let total: f64 = u.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum();
        if m.frequency_hz < 1.0 || axial > 0.01 * total {
            continue;
        }
        let nd = classify_nodal_diameter(&u, &mesh).unwrap();
        if (2..=3).contains(&nd.index) && found[nd.index - 2].is_none() {
            found[nd.index - 2] = Some(m.frequency_hz);
        }
    }
    [0, 1].map(|i| found[i].map_or(f64::INFINITY, |g: f64| (g / f[i] - 1.0).abs()))
}
