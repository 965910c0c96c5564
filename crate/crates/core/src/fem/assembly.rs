//! Global assembly, boundary conditions and static condensation of the
//! electric unknowns.
//!
//! Mechanical DOF `3n + i` is component `i` of node `n`. Potential DOFs exist
//! on PZT nodes only. After [`apply_constraints`] the potential unknowns are
//! ordered interior first, then one master per electrode sector.

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::hex8::{self, ElementFormulation, ElementMaterial, ElementMatrices};
use super::sparse::{Csc, PatternBuilder, SparseLdlt, SymCsc};
use crate::error::{Error, Result};
use crate::materials::{rotate_to_element_frame, ElasticMaterial, Mat3x6, MaterialSet, PiezoMaterial};
use crate::mesh::{Mesh, Region, SurfaceTag};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub formulation: ElementFormulation,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            formulation: ElementFormulation::IncompatibleModes,
            execution: Execution::Parallel,
        }
    }
}

/// Index bookkeeping shared by all system matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub n_nodes: usize,
    /// Global mechanical DOF id (`3n + i`) of each row of `k_uu`.
    pub u_dofs: Vec<usize>,
    /// Nodes driven by each potential unknown: one node for ordinary DOFs,
    /// the whole electrode for a master.
    pub phi_nodes: Vec<Vec<usize>>,
    pub n_phi_interior: usize,
    pub n_electrodes: usize,
}

impl DofMap {
    pub fn n_u(&self) -> usize {
        self.u_dofs.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phi_nodes.len()
    }

    /// Expands a reduced displacement vector to one `[ux, uy, uz]` per node.
    pub fn expand(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.n_nodes];
        for (k, &g) in self.u_dofs.iter().enumerate() {
            out[g / 3][g % 3] = u[k];
        }
        out
    }

    /// Position of each global mechanical DOF in the reduced vector.
    pub fn u_index(&self) -> Vec<Option<usize>> {
        let mut idx = vec![None; 3 * self.n_nodes];
        for (k, &g) in self.u_dofs.iter().enumerate() {
            idx[g] = Some(k);
        }
        idx
    }
}

/// Boundary data derived from the surface tags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constraints {
    pub fixed_nodes: Vec<usize>,
    pub grounded_nodes: Vec<usize>,
    /// Nodes of each electrode sector that belong to that sector only.
    /// Nodes on the etch line between two sectors stay free.
    pub electrode_groups: Vec<Vec<usize>>,
    pub applied: bool,
    pub base_fixed: bool,
}

#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub mass: SymCsc,
    pub k_uu: SymCsc,
    /// `n_u × n_phi`; the electric rows use its transpose.
    pub k_uphi: Csc,
    pub k_phiphi: SymCsc,
    pub dof_map: DofMap,
    pub constraints: Constraints,
}

/// Constitutive matrices of element `e` in the global frame.
pub fn element_material(
    mesh: &Mesh,
    e: usize,
    pzt: Option<&PiezoMaterial>,
    metal: Option<&ElasticMaterial>,
) -> Result<ElementMaterial> {
    match mesh.regions[e] {
        Region::Pzt => {
            let m = pzt.ok_or(Error::MissingMaterial(Region::Pzt))?;
            let c = mesh.element_centroid(e);
            let radial = Vector3::new(c[0], c[1], 0.0);
            let n = radial.norm();
            if n == 0.0 {
                return Err(Error::FrameDegenerate(format!("PZT element {e} sits on the axis")));
            }
            let g = rotate_to_element_frame(m, &(radial / n), &Vector3::z())?;
            Ok(ElementMaterial {
                stiffness: g.elastic_stiffness_ce,
                coupling: g.piezo_coupling_e,
                permittivity: g.permittivity_eps_s,
                density: g.density,
                piezo: true,
            })
        }
        Region::Metal => {
            let m = metal.ok_or(Error::MissingMaterial(Region::Metal))?;
            Ok(ElementMaterial {
                stiffness: m.stiffness(),
                coupling: Mat3x6::zeros(),
                permittivity: nalgebra::Matrix3::zeros(),
                density: m.density,
                piezo: false,
            })
        }
    }
}

/// Element matrices of element `e`.
pub fn element_system(
    mesh: &Mesh,
    e: usize,
    pzt: Option<&PiezoMaterial>,
    metal: Option<&ElasticMaterial>,
    formulation: ElementFormulation,
) -> Result<ElementMatrices> {
    let mat = element_material(mesh, e, pzt, metal)?;
    hex8::element_matrices(e, &mesh.element_coords(e), &mat, formulation)
}

pub fn assemble(mesh: &Mesh, materials: &MaterialSet, opts: AssemblyOptions) -> Result<SystemMatrices> {
    assemble_with(mesh, Some(&materials.pzt), Some(&materials.metal), opts)
}

const BATCH: usize = 1024;

/// Assembly with optional materials; a region without a material is an
/// error only if the mesh contains that region.
///
/// Element matrices are computed in parallel batches and scattered in
/// element order, so the result is bit-identical for any worker count.
pub fn assemble_with(
    mesh: &Mesh,
    pzt: Option<&PiezoMaterial>,
    metal: Option<&ElasticMaterial>,
    opts: AssemblyOptions,
) -> Result<SystemMatrices> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot assemble an empty mesh"));
    }
    for region in [Region::Pzt, Region::Metal] {
        let present = mesh.regions.contains(&region);
        let have = match region {
            Region::Pzt => pzt.is_some(),
            Region::Metal => metal.is_some(),
        };
        if present && !have {
            return Err(Error::MissingMaterial(region));
        }
    }
    let nn = mesh.n_nodes();
    let n_u = 3 * nn;
    let mut phi_of_node = vec![usize::MAX; nn];
    let mut phi_nodes = Vec::new();
    for e in 0..mesh.n_elements() {
        if mesh.regions[e] == Region::Pzt {
            for &n in &mesh.elements[e] {
                if phi_of_node[n] == usize::MAX {
                    phi_of_node[n] = 0;
                }
            }
        }
    }
    for (n, p) in phi_of_node.iter_mut().enumerate() {
        if *p == 0 {
            *p = phi_nodes.len();
            phi_nodes.push(vec![n]);
        }
    }
    let n_phi = phi_nodes.len();

    // Patterns from node adjacency, expanded to 3×3 blocks.
    let mut node_adj: Vec<Vec<usize>> = vec![Vec::new(); nn];
    for el in &mesh.elements {
        for &a in el {
            for &b in el {
                if a <= b {
                    node_adj[b].push(a);
                }
            }
        }
    }
    for v in node_adj.iter_mut() {
        v.sort_unstable();
        v.dedup();
    }
    let mut pu = PatternBuilder::symmetric(n_u);
    for (b, adj) in node_adj.iter().enumerate() {
        for &a in adj {
            for i in 0..3 {
                for j in 0..3 {
                    pu.insert(3 * a + i, 3 * b + j);
                }
            }
        }
    }
    let k_uu_pattern = pu.build_symmetric();
    let mut pc = PatternBuilder::general(n_u, n_phi);
    let mut pp = PatternBuilder::symmetric(n_phi);
    for e in 0..mesh.n_elements() {
        if mesh.regions[e] != Region::Pzt {
            continue;
        }
        let el = &mesh.elements[e];
        for &b in el {
            let pb = phi_of_node[b];
            for &a in el {
                for i in 0..3 {
                    pc.insert(3 * a + i, pb);
                }
                pp.insert(phi_of_node[a], pb);
            }
        }
    }
    let mut k_uu = k_uu_pattern.clone();
    let mut mass = k_uu_pattern;
    let mut k_uphi = pc.build_general();
    let mut k_phiphi = pp.build_symmetric();

    let ne = mesh.n_elements();
    let mut start = 0;
    while start < ne {
        let end = (start + BATCH).min(ne);
        let batch: Vec<Result<ElementMatrices>> = par::map_indexed(end - start, opts.execution, |k| {
            element_system(mesh, start + k, pzt, metal, opts.formulation)
        });
        for (k, em) in batch.into_iter().enumerate() {
            let em = em?;
            let e = start + k;
            let el = &mesh.elements[e];
            for (bl, &bn) in el.iter().enumerate() {
                for (al, &an) in el.iter().enumerate() {
                    if an > bn {
                        continue;
                    }
                    for i in 0..3 {
                        for j in 0..3 {
                            let (r, c) = (3 * an + i, 3 * bn + j);
                            if an == bn && r > c {
                                continue;
                            }
                            let slot = k_uu.slot(r, c).expect("pattern covers element");
                            k_uu.values[slot] += em.k_uu[(3 * al + i, 3 * bl + j)];
                            mass.values[slot] += em.mass[(3 * al + i, 3 * bl + j)];
                        }
                    }
                }
            }
            if mesh.regions[e] == Region::Pzt {
                for (bl, &bn) in el.iter().enumerate() {
                    let pb = phi_of_node[bn];
                    for (al, &an) in el.iter().enumerate() {
                        for i in 0..3 {
                            k_uphi.add(3 * an + i, pb, em.k_uphi[(3 * al + i, bl)]);
                        }
                        let pa = phi_of_node[an];
                        if pa <= pb {
                            k_phiphi.add(pa, pb, em.k_phiphi[(al, bl)]);
                        }
                    }
                }
            }
        }
        start = end;
    }

    let constraints = constraints_from_tags(mesh);
    Ok(SystemMatrices {
        mass,
        k_uu,
        k_uphi,
        k_phiphi,
        dof_map: DofMap {
            n_nodes: nn,
            u_dofs: (0..n_u).collect(),
            phi_nodes,
            n_phi_interior: n_phi,
            n_electrodes: 0,
        },
        constraints,
    })
}

fn constraints_from_tags(mesh: &Mesh) -> Constraints {
    let fixed_nodes = mesh.tagged_nodes(SurfaceTag::FixedBase);
    let grounded_nodes = mesh.tagged_nodes(SurfaceTag::InnerGnd);
    let mut owner: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_nodes()];
    for (f, t) in &mesh.surfaces {
        if let SurfaceTag::Electrode(k) = t {
            for n in mesh.face_nodes(*f) {
                if !owner[n].contains(k) {
                    owner[n].push(*k);
                }
            }
        }
    }
    let mut electrode_groups = vec![Vec::new(); mesh.n_sectors];
    for (n, o) in owner.iter().enumerate() {
        if o.len() == 1 && grounded_nodes.binary_search(&n).is_err() {
            electrode_groups[o[0]].push(n);
        }
    }
    Constraints {
        fixed_nodes,
        grounded_nodes,
        electrode_groups,
        applied: false,
        base_fixed: false,
    }
}

/// Removes fixed mechanical DOFs (when `fix_base`), grounds the inner wall
/// and merges each electrode into one master potential.
pub fn apply_constraints(sys: &SystemMatrices, fix_base: bool) -> Result<SystemMatrices> {
    if sys.constraints.applied {
        return Err(Error::invalid("constraints already applied"));
    }
    let c = &sys.constraints;
    if fix_base && c.fixed_nodes.is_empty() {
        return Err(Error::EmptyConstraintSet("no faces tagged as fixed base".into()));
    }
    let nn = sys.dof_map.n_nodes;
    let mut fixed = vec![false; 3 * nn];
    if fix_base {
        for &n in &c.fixed_nodes {
            for i in 0..3 {
                fixed[3 * n + i] = true;
            }
        }
    }
    let mut u_map = vec![None; 3 * nn];
    let mut u_dofs = Vec::new();
    for (g, f) in fixed.iter().enumerate() {
        if !f {
            u_map[g] = Some(u_dofs.len());
            u_dofs.push(g);
        }
    }
    let n_u = u_dofs.len();

    // Potential columns of the unconstrained system are one per PZT node.
    let n_phi_old = sys.dof_map.n_phi();
    let mut phi_of_node = vec![usize::MAX; nn];
    for (p, nodes) in sys.dof_map.phi_nodes.iter().enumerate() {
        phi_of_node[nodes[0]] = p;
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Kind {
        Ground,
        Master(usize),
        Interior,
    }
    let mut kind = vec![Kind::Interior; n_phi_old];
    for &n in &c.grounded_nodes {
        if phi_of_node[n] != usize::MAX {
            kind[phi_of_node[n]] = Kind::Ground;
        }
    }
    for (k, g) in c.electrode_groups.iter().enumerate() {
        for &n in g {
            let p = phi_of_node[n];
            if p != usize::MAX && kind[p] == Kind::Interior {
                kind[p] = Kind::Master(k);
            }
        }
    }
    let n_e = c.electrode_groups.len();
    let mut new_of_old = vec![usize::MAX; n_phi_old];
    let mut phi_nodes: Vec<Vec<usize>> = Vec::new();
    for p in 0..n_phi_old {
        if kind[p] == Kind::Interior {
            new_of_old[p] = phi_nodes.len();
            phi_nodes.push(sys.dof_map.phi_nodes[p].clone());
        }
    }
    let n_i = phi_nodes.len();
    for k in 0..n_e {
        phi_nodes.push(Vec::new());
        let _ = k;
    }
    for p in 0..n_phi_old {
        if let Kind::Master(k) = kind[p] {
            new_of_old[p] = n_i + k;
            phi_nodes[n_i + k].extend(sys.dof_map.phi_nodes[p].iter().copied());
        }
    }
    let n_phi = n_i + n_e;

    let k_uu = sys.k_uu.restrict(&u_map, n_u);
    let mass = sys.mass.restrict(&u_map, n_u);

    // Coupling: rows restricted, columns summed into masters.
    let mut pc = PatternBuilder::general(n_u, n_phi);
    for col in 0..n_phi_old {
        if new_of_old[col] == usize::MAX {
            continue;
        }
        for (r, _) in sys.k_uphi.column(col) {
            if let Some(nr) = u_map[r] {
                pc.insert(nr, new_of_old[col]);
            }
        }
    }
    let mut k_uphi = pc.build_general();
    for col in 0..n_phi_old {
        if new_of_old[col] == usize::MAX {
            continue;
        }
        for (r, v) in sys.k_uphi.column(col) {
            if let Some(nr) = u_map[r] {
                k_uphi.add(nr, new_of_old[col], v);
            }
        }
    }
    let mut pp = PatternBuilder::symmetric(n_phi);
    for (r, cc, _) in sys.k_phiphi.triplets() {
        let (a, b) = (new_of_old[r], new_of_old[cc]);
        if a != usize::MAX && b != usize::MAX {
            pp.insert(a, b);
        }
    }
    let mut k_phiphi = pp.build_symmetric();
    for (r, cc, v) in sys.k_phiphi.triplets() {
        let (a, b) = (new_of_old[r], new_of_old[cc]);
        if a != usize::MAX && b != usize::MAX {
            // Off-diagonal entries stored once stand for two; when both ends
            // merge into the same master they land on its diagonal twice.
            let w = if r != cc && a == b { 2.0 } else { 1.0 };
            k_phiphi.add(a, b, w * v);
        }
    }

    Ok(SystemMatrices {
        mass,
        k_uu,
        k_uphi,
        k_phiphi,
        dof_map: DofMap {
            n_nodes: nn,
            u_dofs,
            phi_nodes,
            n_phi_interior: n_i,
            n_electrodes: n_e,
        },
        constraints: Constraints {
            applied: true,
            base_fixed: fix_base,
            ..c.clone()
        },
    })
}

impl SystemMatrices {
    /// `½uᵀK_uu u + uᵀK_uφ φ − ½φᵀK_φφ φ`.
    pub fn enthalpy(&self, u: &[f64], phi: &[f64]) -> f64 {
        let mut kp = vec![0.0; self.dof_map.n_u()];
        self.k_uphi.mul_vec_acc(1.0, phi, &mut kp);
        0.5 * self.k_uu.quad_form(u) + super::sparse::dot(u, &kp) - 0.5 * self.k_phiphi.quad_form(phi)
    }

    pub fn matrix_market_dump(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mass.write_matrix_market(&dir.join("M.mtx"))?;
        self.k_uu.write_matrix_market(&dir.join("K_uu.mtx"))?;
        self.k_uphi.write_matrix_market(&dir.join("K_uphi.mtx"))?;
        self.k_phiphi.write_matrix_market(&dir.join("K_phiphi.mtx"))
    }
}

/// Mechanical system after eliminating the interior potentials.
///
/// `K* = K_uu + K_uφ,i K_φφ,ii⁻¹ K_φu,i` is never formed; products and
/// shifted solves go through the interior dielectric factor or an augmented
/// symmetric system.
#[derive(Debug)]
pub struct CondensedSystem {
    pub mass: SymCsc,
    pub k_uu: SymCsc,
    pub k_uphi_i: Csc,
    pub k_phiphi_ii: SymCsc,
    /// `n_u × n_electrodes`, column-major: force per volt on each electrode.
    pub electrode_load_map: Vec<Vec<f64>>,
    /// `K_φφ,ii⁻¹ K_φφ,ie`, used to recover interior potentials.
    interior_from_electrodes: Vec<Vec<f64>>,
    dielectric: Option<SparseLdlt>,
    pub dof_map: DofMap,
}

pub fn condense_electric(sys: &SystemMatrices) -> Result<CondensedSystem> {
    if !sys.constraints.applied {
        return Err(Error::invalid("apply constraints before condensing"));
    }
    let dm = &sys.dof_map;
    let (n_u, n_i, n_e) = (dm.n_u(), dm.n_phi_interior, dm.n_electrodes);
    let i_map: Vec<Option<usize>> = (0..dm.n_phi()).map(|p| (p < n_i).then_some(p)).collect();
    let u_all: Vec<Option<usize>> = (0..n_u).map(Some).collect();
    let k_uphi_i = sys.k_uphi.restrict(&u_all, n_u, &i_map, n_i);
    let k_phiphi_ii = sys.k_phiphi.restrict(&i_map, n_i);

    let dielectric = if n_i > 0 {
        let f = SparseLdlt::factorize(&k_phiphi_ii).map_err(|e| Error::DielectricSingular(e.to_string()))?;
        // Positive definiteness check through a residual on a probe vector.
        let probe: Vec<f64> = (0..n_i).map(|k| 1.0 + (k % 7) as f64).collect();
        let x = f.solve(&probe);
        let mut r = vec![0.0; n_i];
        k_phiphi_ii.mul_vec(&x, &mut r);
        let err = r.iter().zip(&probe).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = probe.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if !(err <= 1e-6 * scale) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DielectricSingular(format!(
                "interior dielectric solve residual {err:.3e}"
            )));
        }
        Some(f)
    } else {
        None
    };

    let mut load = Vec::with_capacity(n_e);
    let mut interior = Vec::with_capacity(n_e);
    for e in 0..n_e {
        let col = n_i + e;
        // K_φφ,ie column e (interior rows) from the symmetric storage.
        let mut kie = vec![0.0; n_i];
        for (r, c, v) in sys.k_phiphi.triplets() {
            if c == col && r < n_i {
                kie[r] += v;
            } else if r == col && c < n_i {
                kie[c] += v;
            }
        }
        let y = match &dielectric {
            Some(f) => f.solve(&kie),
            None => Vec::new(),
        };
        let mut l = vec![0.0; n_u];
        for (r, v) in sys.k_uphi.column(col) {
            l[r] -= v;
        }
        if n_i > 0 {
            k_uphi_i.mul_vec_acc(1.0, &y, &mut l);
        }
        load.push(l);
        interior.push(y);
    }

    Ok(CondensedSystem {
        mass: sys.mass.clone(),
        k_uu: sys.k_uu.clone(),
        k_uphi_i,
        k_phiphi_ii,
        electrode_load_map: load,
        interior_from_electrodes: interior,
        dielectric,
        dof_map: sys.dof_map.clone(),
    })
}

impl CondensedSystem {
    pub fn n_u(&self) -> usize {
        self.k_uu.n
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrode_load_map.len()
    }

    /// `y = K* x`.
    pub fn k_star_mul(&self, x: &[f64], y: &mut [f64]) {
        self.k_uu.mul_vec(x, y);
        if let Some(f) = &self.dielectric {
            let mut t = vec![0.0; self.k_phiphi_ii.n];
            self.k_uphi_i.mul_t_vec_acc(1.0, x, &mut t);
            f.solve_in_place(&mut t);
            self.k_uphi_i.mul_vec_acc(1.0, &t, y);
        }
    }

    pub fn mass_mul(&self, x: &[f64], y: &mut [f64]) {
        self.mass.mul_vec(x, y);
    }

    /// Equivalent nodal forces for electrode voltages `v`.
    pub fn electrode_forces(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (col, &vk) in self.electrode_load_map.iter().zip(v) {
            if vk != 0.0 {
                for (o, c) in out.iter_mut().zip(col) {
                    *o += vk * c;
                }
            }
        }
    }

    /// Interior potentials for displacement `u` and electrode voltages `v`.
    pub fn interior_potentials(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n_i = self.k_phiphi_ii.n;
        let mut t = vec![0.0; n_i];
        if let Some(f) = &self.dielectric {
            self.k_uphi_i.mul_t_vec_acc(1.0, u, &mut t);
            f.solve_in_place(&mut t);
        }
        for (y, &vk) in self.interior_from_electrodes.iter().zip(v) {
            for (a, b) in t.iter_mut().zip(y) {
                *a -= vk * b;
            }
        }
        t
    }

    /// Dense `K*` for small systems and tests.
    pub fn k_star_dense(&self) -> DMatrix<f64> {
        let n = self.n_u();
        let mut k = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut y = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.k_star_mul(&e, &mut y);
            k.set_column(j, &nalgebra::DVector::from_column_slice(&y));
            e[j] = 0.0;
        }
        (k.clone() + k.transpose()) * 0.5
    }

    /// Factorization of `a K* + b M` through the augmented system
    /// `[a K_uu + b M, a K_uφ,i; a K_φu,i, −a K_φφ,ii]`.
    pub fn shifted_solver(&self, a: f64, b: f64) -> Result<ShiftedSolver> {
        let n_u = self.n_u();
        let n_i = self.k_phiphi_ii.n;
        let n = n_u + n_i;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let same_pattern = self.k_uu.col_ptr == self.mass.col_ptr && self.k_uu.row_idx == self.mass.row_idx;
        if same_pattern {
            for c in 0..n_u {
                for k in self.k_uu.col_ptr[c]..self.k_uu.col_ptr[c + 1] {
                    row_idx.push(self.k_uu.row_idx[k]);
                    values.push(a * self.k_uu.values[k] + b * self.mass.values[k]);
                }
                col_ptr.push(row_idx.len());
            }
        } else {
            let mut p = PatternBuilder::symmetric(n_u);
            for (r, c, _) in self.k_uu.triplets().chain(self.mass.triplets()) {
                p.insert(r, c);
            }
            let mut s = p.build_symmetric();
            for (r, c, v) in self.k_uu.triplets() {
                s.add(r, c, a * v);
            }
            for (r, c, v) in self.mass.triplets() {
                s.add(r, c, b * v);
            }
            col_ptr = s.col_ptr;
            row_idx = s.row_idx;
            values = s.values;
        }
        for c in 0..n_i {
            for (r, v) in self.k_uphi_i.column(c) {
                row_idx.push(r);
                values.push(a * v);
            }
            for k in self.k_phiphi_ii.col_ptr[c]..self.k_phiphi_ii.col_ptr[c + 1] {
                row_idx.push(n_u + self.k_phiphi_ii.row_idx[k]);
                values.push(-a * self.k_phiphi_ii.values[k]);
            }
            col_ptr.push(row_idx.len());
        }
        let aug = SymCsc {
            n,
            col_ptr,
            row_idx,
            values,
        };
        let ldlt = SparseLdlt::factorize(&aug)?;
        Ok(ShiftedSolver { ldlt, n_u, n })
    }
}

/// Solves `(a K* + b M) x = f`.
#[derive(Debug)]
pub struct ShiftedSolver {
    ldlt: SparseLdlt,
    n_u: usize,
    n: usize,
}

impl ShiftedSolver {
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n];
        rhs[..self.n_u].copy_from_slice(f);
        self.ldlt.solve_in_place(&mut rhs);
        rhs.truncate(self.n_u);
        rhs
    }

    pub fn factor_nnz(&self) -> usize {
        self.ldlt.factor_nnz()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{c360_brass, pzt5h_default};
    use crate::mesh::primitives::{box_mesh, ring_mesh};
    use nalgebra::{DVector, Matrix3};

    fn opts(formulation: ElementFormulation, execution: Execution) -> AssemblyOptions {
        AssemblyOptions { formulation, execution }
    }

    fn distorted_patch() -> Mesh {
        let mut m = box_mesh(0.0, 2e-3, 2e-3, 2e-3, 2, 2, 2, Region::Metal).unwrap();
        // Centre node of the 3x3x3 lattice.
        let c = (9 + 3) + 1;
        m.nodes[c] = [1.13e-3, 0.91e-3, 1.07e-3];
        // Slide a face-centre node within its face as well.
        m.nodes[9 + 1] = [1.1e-3, 0.0, 0.93e-3];
        m
    }

    #[test]
    fn single_element_matches_element_matrices() {
        let mesh = box_mesh(0.0, 1e-3, 2e-3, 1.5e-3, 1, 1, 1, Region::Metal).unwrap();
        let mat = MaterialSet::default();
        let sys = assemble(&mesh, &mat, AssemblyOptions::default()).unwrap();
        let em = element_system(&mesh, 0, None, Some(&mat.metal), ElementFormulation::IncompatibleModes).unwrap();
        let k = sys.k_uu.to_dense();
        let m = sys.mass.to_dense();
        let el = mesh.elements[0];
        let g = |l: usize| 3 * el[l / 3] + l % 3;
        for i in 0..24 {
            for j in 0..24 {
                assert_eq!(k[(g(i), g(j))], em.k_uu[(i, j)]);
                assert_eq!(m[(g(i), g(j))], em.mass[(i, j)]);
            }
        }
        let total: f64 = m.iter().sum::<f64>() / 3.0;
        approx::assert_relative_eq!(total, mat.metal.density * 3e-9, max_relative = 1e-12);
    }

    #[test]
    fn patch_test_recovers_linear_field() {
        let mesh = distorted_patch();
        let a = Matrix3::new(1.0, 0.3, -0.2, 0.1, -0.7, 0.4, 0.25, 0.5, 0.9) * 1e-4;
        let b = Vector3::new(1e-6, -2e-6, 3e-6);
        let exact = |p: [f64; 3]| a * Vector3::from(p) + b;
        for f in [
            ElementFormulation::Full,
            ElementFormulation::SelectiveReduced,
            ElementFormulation::IncompatibleModes,
        ] {
            let sys = assemble(&mesh, &MaterialSet::default(), opts(f, Execution::Sequential)).unwrap();
            let k = sys.k_uu.to_dense();
            let interior: Vec<usize> = (0..mesh.n_nodes())
                .filter(|&n| {
                    let p = mesh.nodes[n];
                    p.iter().all(|&x| x > 1e-9 && x < 2e-3 - 1e-9)
                })
                .collect();
            assert_eq!(interior.len(), 1);
            let free: Vec<usize> = interior.iter().flat_map(|&n| (0..3).map(move |i| 3 * n + i)).collect();
            let mut u = DVector::zeros(3 * mesh.n_nodes());
            for n in 0..mesh.n_nodes() {
                let v = exact(mesh.nodes[n]);
                for i in 0..3 {
                    u[3 * n + i] = v[i];
                }
            }
            for &d in &free {
                u[d] = 0.0;
            }
            let rhs = -(&k * &u);
            let kff = DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])]);
            let rf = DVector::from_iterator(free.len(), free.iter().map(|&d| rhs[d]));
            let sol = kff.lu().solve(&rf).unwrap();
            let want = exact(mesh.nodes[interior[0]]);
            for i in 0..3 {
                assert!((sol[i] - want[i]).abs() < 1e-9 * want.norm(), "{f:?}: {} vs {}", sol[i], want[i]);
            }
        }
    }

    fn rigid_modes(mesh: &Mesh) -> Vec<Vec<f64>> {
        let n = mesh.n_nodes();
        let mut out = Vec::new();
        for d in 0..3 {
            let mut v = vec![0.0; 3 * n];
            for k in 0..n {
                v[3 * k + d] = 1.0;
            }
            out.push(v);
        }
        for axis in 0..3 {
            let w = Vector3::ith(axis, 1.0);
            let mut v = vec![0.0; 3 * n];
            for k in 0..n {
                let r = w.cross(&Vector3::from(mesh.nodes[k]));
                v[3 * k..3 * k + 3].copy_from_slice(r.as_slice());
            }
            out.push(v);
        }
        out
    }

    fn two_material_ring() -> Mesh {
        let mut m = ring_mesh(4e-3, 5e-3, 2e-3, 2, 16, 2, Region::Pzt, 4).unwrap();
        for e in 0..m.n_elements() {
            if m.element_centroid(e)[2] < 1e-3 {
                m.regions[e] = Region::Metal;
            }
        }
        m
    }

    #[test]
    fn rigid_motions_are_in_the_null_space() {
        let mesh = two_material_ring();
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        let scale = sys.k_uu.max_abs();
        for v in rigid_modes(&mesh) {
            let mut y = vec![0.0; v.len()];
            sys.k_uu.mul_vec(&v, &mut y);
            let vmax = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
            assert!(y.iter().all(|x| x.abs() < 1e-9 * scale * vmax));
            let mut t = vec![0.0; sys.dof_map.n_phi()];
            sys.k_uphi.mul_t_vec_acc(1.0, &v, &mut t);
            assert!(t.iter().all(|x| x.abs() < 1e-9 * scale * vmax));
        }
    }

    #[test]
    fn free_free_block_has_six_zero_modes() {
        let mesh = box_mesh(0.0, 2e-3, 1e-3, 1e-3, 2, 1, 1, Region::Metal).unwrap();
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        let k = sys.k_uu.to_dense();
        let m = sys.mass.to_dense();
        let l = m.cholesky().unwrap().l();
        let li = l.clone().try_inverse().unwrap();
        let a = &li * k * li.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let top = ev[ev.len() - 1];
        assert!(ev[..6].iter().all(|x| x.abs() < 1e-10 * top));
        assert!(ev[6] > 1e-4 * top);
    }

    #[test]
    fn global_enthalpy_is_the_sum_of_element_enthalpies() {
        let mesh = two_material_ring();
        let mat = MaterialSet::default();
        let sys = assemble(&mesh, &mat, AssemblyOptions::default()).unwrap();
        let u: Vec<f64> = (0..sys.dof_map.n_u()).map(|i| ((i * 37 % 101) as f64 - 50.0) * 1e-9).collect();
        let phi: Vec<f64> = (0..sys.dof_map.n_phi()).map(|i| (i * 13 % 17) as f64 - 8.0).collect();
        let mut node_phi = vec![0.0; mesh.n_nodes()];
        for (p, nodes) in sys.dof_map.phi_nodes.iter().enumerate() {
            node_phi[nodes[0]] = phi[p];
        }
        let mut sum = 0.0;
        for e in 0..mesh.n_elements() {
            let em = element_system(&mesh, e, Some(&mat.pzt), Some(&mat.metal), ElementFormulation::IncompatibleModes)
                .unwrap();
            let el = mesh.elements[e];
            let ue = nalgebra::SVector::<f64, 24>::from_fn(|r, _| u[3 * el[r / 3] + r % 3]);
            let pe = nalgebra::SVector::<f64, 8>::from_fn(|r, _| node_phi[el[r]]);
            sum += 0.5 * ue.dot(&(em.k_uu * ue)) + ue.dot(&(em.k_uphi * pe)) - 0.5 * pe.dot(&(em.k_phiphi * pe));
        }
        approx::assert_relative_eq!(sys.enthalpy(&u, &phi), sum, max_relative = 1e-10);
    }

    #[test]
    fn all_metal_condensation_is_identity() {
        let mesh = ring_mesh(4e-3, 5e-3, 2e-3, 1, 12, 2, Region::Metal, 0).unwrap();
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        let c = condense_electric(&apply_constraints(&sys, true).unwrap()).unwrap();
        assert_eq!(c.n_electrodes(), 0);
        let kd = c.k_star_dense();
        let ku = c.k_uu.to_dense();
        assert_eq!((kd - ku).abs().max(), 0.0);
    }

    /// Dense oracle: eliminate the interior potentials by direct inversion.
    #[test]
    fn condensation_matches_dense_elimination() {
        let mesh = box_mesh(1e-3, 0.5e-3, 1e-3, 1e-3, 2, 1, 1, Region::Pzt).unwrap();
        let sys = apply_constraints(
            &assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap(),
            true,
        )
        .unwrap();
        let c = condense_electric(&sys).unwrap();
        let n_i = sys.dof_map.n_phi_interior;
        assert!(n_i > 0);
        let kuu = sys.k_uu.to_dense();
        let kup = sys.k_uphi.to_dense();
        let kpp = sys.k_phiphi.to_dense();
        let kui = kup.columns(0, n_i).into_owned();
        let kue = kup.columns(n_i, 1).into_owned();
        let kii = kpp.view((0, 0), (n_i, n_i)).into_owned();
        let kie = kpp.view((0, n_i), (n_i, 1)).into_owned();
        let kii_inv = kii.try_inverse().unwrap();
        let kstar = &kuu + &kui * &kii_inv * kui.transpose();
        let got = c.k_star_dense();
        let err = (&got - &kstar).abs().max() / kstar.abs().max();
        assert!(err < 1e-10, "K* mismatch {err:e}");
        let load = -(&kue - &kui * &kii_inv * &kie);
        for r in 0..c.n_u() {
            assert!((c.electrode_load_map[0][r] - load[r]).abs() <= 1e-10 * load.abs().max());
        }
        // The condensed static response agrees with the full saddle-point solve.
        let n_u = c.n_u();
        let mut full = DMatrix::zeros(n_u + n_i, n_u + n_i);
        full.view_mut((0, 0), (n_u, n_u)).copy_from(&kuu);
        full.view_mut((0, n_u), (n_u, n_i)).copy_from(&kui);
        full.view_mut((n_u, 0), (n_i, n_u)).copy_from(&kui.transpose());
        full.view_mut((n_u, n_u), (n_i, n_i)).copy_from(&(-kpp.view((0, 0), (n_i, n_i)).into_owned()));
        let mut rhs = DVector::zeros(n_u + n_i);
        rhs.rows_mut(0, n_u).copy_from(&(-&kue * 10.0));
        rhs.rows_mut(n_u, n_i).copy_from(&(&kie * 10.0));
        let x = full.lu().solve(&rhs).unwrap();
        let mut f = vec![0.0; n_u];
        c.electrode_forces(&[10.0], &mut f);
        let u = kstar.lu().solve(&DVector::from_vec(f)).unwrap();
        let xu = x.rows(0, n_u);
        assert!((&u - xu).abs().max() < 1e-9 * u.abs().max());
        let phi_i = c.interior_potentials(u.as_slice(), &[10.0]);
        for k in 0..n_i {
            assert!((phi_i[k] - x[n_u + k]).abs() < 1e-8 * 10.0);
        }
    }

    #[test]
    fn shifted_solver_inverts_the_shifted_operator() {
        let mesh = box_mesh(1e-3, 0.5e-3, 1e-3, 1e-3, 2, 2, 1, Region::Pzt).unwrap();
        let sys = apply_constraints(
            &assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap(),
            true,
        )
        .unwrap();
        let c = condense_electric(&sys).unwrap();
        let (a, b) = (1.0, -3.0e10);
        let s = c.shifted_solver(a, b).unwrap();
        let f: Vec<f64> = (0..c.n_u()).map(|i| (i % 5) as f64 - 2.0).collect();
        let x = s.solve(&f);
        let mut kx = vec![0.0; c.n_u()];
        let mut mx = vec![0.0; c.n_u()];
        c.k_star_mul(&x, &mut kx);
        c.mass_mul(&x, &mut mx);
        let r: f64 = kx.iter().zip(&mx).zip(&f).map(|((k, m), f)| (a * k + b * m - f).abs()).fold(0.0, f64::max);
        assert!(r < 1e-8 * f.iter().fold(0.0f64, |s, v| s.max(v.abs())));
    }

    #[test]
    fn net_electrode_force_vanishes_on_a_free_body() {
        let mesh = ring_mesh(4e-3, 4.5e-3, 2e-3, 2, 24, 2, Region::Pzt, 4).unwrap();
        let sys = apply_constraints(
            &assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap(),
            false,
        )
        .unwrap();
        let c = condense_electric(&sys).unwrap();
        let mut f = vec![0.0; c.n_u()];
        c.electrode_forces(&[100.0; 4], &mut f);
        let fmax = f.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(fmax > 0.0);
        for d in 0..3 {
            let net: f64 = f.iter().skip(d).step_by(3).sum();
            assert!(net.abs() < 1e-10 * fmax * f.len() as f64, "direction {d}: {net:e}");
        }
    }

    #[test]
    fn sequential_and_parallel_assembly_are_bit_identical() {
        let mesh = two_material_ring();
        let mat = MaterialSet::default();
        let f = ElementFormulation::IncompatibleModes;
        let s = assemble(&mesh, &mat, opts(f, Execution::Sequential)).unwrap();
        let p = assemble(&mesh, &mat, opts(f, Execution::Parallel)).unwrap();
        assert_eq!(s.k_uu, p.k_uu);
        assert_eq!(s.mass, p.mass);
        assert_eq!(s.k_uphi, p.k_uphi);
        assert_eq!(s.k_phiphi, p.k_phiphi);
    }

    #[test]
    fn one_master_per_sector_and_ground_removed() {
        let mesh = ring_mesh(4e-3, 4.5e-3, 2e-3, 2, 24, 2, Region::Pzt, 4).unwrap();
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        let c = apply_constraints(&sys, true).unwrap();
        assert_eq!(c.dof_map.n_electrodes, 4);
        assert_eq!(c.dof_map.n_phi(), c.dof_map.n_phi_interior + 4);
        let grounded = &c.constraints.grounded_nodes;
        for nodes in &c.dof_map.phi_nodes {
            assert!(nodes.iter().all(|n| grounded.binary_search(n).is_err()));
        }
        assert_eq!(c.dof_map.n_u(), 3 * (mesh.n_nodes() - c.constraints.fixed_nodes.len()));
        assert!(apply_constraints(&c, true).is_err());
    }

    #[test]
    fn missing_fixed_base_is_reported() {
        let mut mesh = ring_mesh(4e-3, 5e-3, 2e-3, 1, 12, 1, Region::Metal, 0).unwrap();
        mesh.surfaces.retain(|(_, t)| *t != SurfaceTag::FixedBase);
        let sys = assemble(&mesh, &MaterialSet::default(), AssemblyOptions::default()).unwrap();
        assert!(matches!(apply_constraints(&sys, true), Err(Error::EmptyConstraintSet(_))));
        assert!(apply_constraints(&sys, false).is_ok());
    }

    #[test]
    fn missing_material_is_reported() {
        let mesh = box_mesh(0.0, 1e-3, 1e-3, 1e-3, 1, 1, 1, Region::Pzt).unwrap();
        let r = assemble_with(&mesh, None, Some(&c360_brass()), AssemblyOptions::default());
        assert!(matches!(r, Err(Error::MissingMaterial(Region::Pzt))));
        let ok = assemble_with(&mesh, Some(&pzt5h_default()), None, AssemblyOptions::default());
        assert!(ok.is_ok());
    }
}
