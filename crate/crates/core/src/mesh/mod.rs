//! Structured hexahedral mesh of the stator in cylindrical coordinates.
//!
//! The grid is a tensor product of radial breakpoints, uniform angular
//! stations and axial layers. Material gaps (the notches and the space
//! beside the compliance tube) are masked out. Inside the tooth band the
//! angular stations are warped so that notch walls fall exactly on the notch
//! edges; the warp fades out towards the PZT outer wall, which keeps the
//! electrode faces uniform.

pub mod primitives;
pub mod vtk;

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::hex8::{self, FACE_NODES};
use crate::geometry::StatorSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Pzt,
    Metal,
}

/// Surface tags. Electrode sectors are numbered from 0 in the direction of
/// increasing angle, sector 0 starting at θ = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurfaceTag {
    Electrode(usize),
    InnerGnd,
    FixedBase,
    ToothContact,
}

impl SurfaceTag {
    pub fn code(self) -> i64 {
        match self {
            SurfaceTag::InnerGnd => 0,
            SurfaceTag::FixedBase => 1,
            SurfaceTag::ToothContact => 2,
            SurfaceTag::Electrode(k) => 100 + k as i64,
        }
    }

    pub fn from_code(code: i64) -> Option<SurfaceTag> {
        match code {
            0 => Some(SurfaceTag::InnerGnd),
            1 => Some(SurfaceTag::FixedBase),
            2 => Some(SurfaceTag::ToothContact),
            c if c >= 100 => Some(SurfaceTag::Electrode((c - 100) as usize)),
            _ => None,
        }
    }
}

/// Local face `local` (0..6, see [`FACE_NODES`]) of element `element`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    pub element: usize,
    pub local: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 8]>,
    pub regions: Vec<Region>,
    pub surfaces: Vec<(Face, SurfaceTag)>,
    pub characteristic_size: f64,
    pub n_sectors: usize,
}

#[derive(Clone, Debug)]
struct Grid {
    radii: Vec<f64>,
    z: Vec<f64>,
    n_theta: usize,
    notch_mask: Vec<bool>,
    warp: Vec<f64>,
}

/// Number of angular elements: the smallest multiple of `4 n_sectors` that
/// reaches 160, times the refinement level.
pub fn angular_divisions(n_sectors: usize, refinement: usize) -> usize {
    let unit = 4 * n_sectors;
    unit * 160usize.div_ceil(unit) * refinement
}

fn subdivide(breaks: &[f64], h: f64, min_count: impl Fn(f64, f64) -> usize) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
        let n = n.max(min_count(a, b));
        for s in 1..=n {
            out.push(a + (b - a) * s as f64 / n as f64);
        }
    }
    out
}

fn sorted_breaks(mut v: Vec<f64>, tol: f64) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < tol);
    v
}

/// Angular warp: piecewise-linear map of station index to angle that puts
/// station `s_k` and `s_k + n` on the notch edges.
fn notch_warp(spec: &StatorSpec, n_theta: usize) -> Option<(Vec<f64>, Vec<bool>)> {
    let dtheta = 2.0 * PI / n_theta as f64;
    let alpha = spec.notch_angle();
    let n_notch = ((alpha / dtheta).round() as usize).max(1);
    let nt = spec.tooth_count;
    let mut anchors: Vec<(i64, f64)> = Vec::with_capacity(2 * nt);
    let mut mask = vec![false; n_theta];
    for k in 0..nt {
        let c = (k as f64 + 0.5) * 2.0 * PI / nt as f64;
        // First notch station, round((2k + 1) n_θ / (2 n_t) − n_notch / 2), in
        // integers so that ties break the same way for every notch.
        let num = ((2 * k + 1) * n_theta) as i64 - (nt * n_notch) as i64;
        let den = 2 * nt as i64;
        let s = (2 * num + den).div_euclid(2 * den);
        anchors.push((s, c - 0.5 * alpha));
        anchors.push((s + n_notch as i64, c + 0.5 * alpha));
        for j in 0..n_notch as i64 {
            mask[(s + j).rem_euclid(n_theta as i64) as usize] = true;
        }
    }
    // Every tooth needs at least one element and stations must stay ordered.
    for w in anchors.windows(2) {
        if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
            return None;
        }
    }
    let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
    if first.0 + n_theta as i64 <= last.0 {
        return None;
    }
    let mut ext = Vec::with_capacity(anchors.len() + 2);
    ext.push((last.0 - n_theta as i64, last.1 - 2.0 * PI));
    ext.extend(anchors.iter().copied());
    ext.push((first.0 + n_theta as i64, first.1 + 2.0 * PI));
    let mut warp = vec![0.0; n_theta];
    for (j, w) in warp.iter_mut().enumerate() {
        let j = j as i64;
        let seg = ext.windows(2).find(|s| s[0].0 <= j && j <= s[1].0).expect("covered");
        let t = (j - seg[0].0) as f64 / (seg[1].0 - seg[0].0) as f64;
        *w = seg[0].1 + t * (seg[1].1 - seg[0].1);
    }
    Some((warp, mask))
}

/// Builds the tagged hexahedral mesh. `refinement` scales all divisions.
pub fn generate_mesh(spec: &StatorSpec, refinement: usize) -> Result<Mesh> {
    if !(1..=6).contains(&refinement) {
        return Err(Error::Validation {
            key: "refinement".into(),
            message: format!("must lie in 1..=6, got {refinement}"),
        });
    }
    let d = spec.dims()?;
    let r = refinement as f64;
    let h_r = 0.5e-3 / r;
    let h_z = 0.65e-3 / r;
    let tol = 1e-9;

    let radial_breaks = sorted_breaks(
        vec![
            d.r_inner,
            d.r_notch_outer,
            d.r_compliance_in,
            d.r_compliance_out,
            d.r_bond,
            d.r_pzt_out,
        ],
        tol,
    );
    let radii = subdivide(&radial_breaks, h_r, |a, _| {
        if a >= d.r_bond - tol {
            refinement
        } else {
            1
        }
    });
    let z_breaks = sorted_breaks(vec![0.0, d.z_ring_bottom, d.z_notch_bottom, d.z_top], tol);
    let z = subdivide(&z_breaks, h_z, |_, _| 1);

    let mut n_theta = angular_divisions(spec.electrode_sectors, refinement);
    let (warp, notch_mask) = loop {
        if let Some(w) = notch_warp(spec, n_theta) {
            break w;
        }
        n_theta += 4 * spec.electrode_sectors;
        if n_theta > 4096 {
            return Err(Error::GeometryInfeasible(
                "notch pattern cannot be resolved on the angular grid".into(),
            ));
        }
    };
    let grid = Grid {
        radii,
        z,
        n_theta,
        notch_mask,
        warp,
    };
    build(spec, &grid, refinement)
}

fn build(spec: &StatorSpec, g: &Grid, refinement: usize) -> Result<Mesh> {
    let d = spec.dims()?;
    let (nr, nz, nt) = (g.radii.len() - 1, g.z.len() - 1, g.n_theta);
    let tol = 1e-9;
    let i_bond = g
        .radii
        .iter()
        .position(|&r| (r - d.r_bond).abs() < tol)
        .expect("bond radius is a breakpoint");

    let region_of = |i: usize, j: usize, k: usize| -> Option<Region> {
        let rc = 0.5 * (g.radii[i] + g.radii[i + 1]);
        let zc = 0.5 * (g.z[k] + g.z[k + 1]);
        if zc < d.z_ring_bottom {
            (rc > d.r_compliance_in && rc < d.r_compliance_out).then_some(Region::Metal)
        } else if rc > d.r_bond {
            Some(Region::Pzt)
        } else if zc > d.z_notch_bottom && rc < d.r_notch_outer && g.notch_mask[j] {
            None
        } else {
            Some(Region::Metal)
        }
    };

    // Node numbering in (k, j, i) order over the stations actually used.
    let grid_id = |i: usize, j: usize, k: usize| (k * nt + j % nt) * (nr + 1) + i;
    let mut used = vec![false; (nz + 1) * nt * (nr + 1)];
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..nt {
            for i in 0..nr {
                if let Some(reg) = region_of(i, j, k) {
                    let ids = [
                        grid_id(i, j, k),
                        grid_id(i + 1, j, k),
                        grid_id(i + 1, j + 1, k),
                        grid_id(i, j + 1, k),
                        grid_id(i, j, k + 1),
                        grid_id(i + 1, j, k + 1),
                        grid_id(i + 1, j + 1, k + 1),
                        grid_id(i, j + 1, k + 1),
                    ];
                    for &id in &ids {
                        used[id] = true;
                    }
                    cells.push(((i, j, k), ids, reg));
                }
            }
        }
    }
    let mut node_of = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    let blend_span = d.r_pzt_out - d.r_notch_outer;
    for k in 0..=nz {
        for j in 0..nt {
            for i in 0..=nr {
                let id = grid_id(i, j, k);
                if !used[id] {
                    continue;
                }
                node_of[id] = nodes.len();
                let r0 = g.radii[i];
                let zk = g.z[k];
                let theta_u = 2.0 * PI * j as f64 / nt as f64;
                let w = if r0 <= d.r_notch_outer + tol {
                    1.0
                } else {
                    ((d.r_pzt_out - r0) / blend_span).clamp(0.0, 1.0)
                };
                let theta = theta_u + w * (g.warp[j] - theta_u);
                let mut rr = r0;
                if zk > d.z_notch_bottom + tol && r0 < d.r_notch_outer - tol {
                    let depth = d.r_notch_outer - d.r_inner;
                    rr += d.taper_slope * (zk - d.z_notch_bottom) * (1.0 - (r0 - d.r_inner) / depth);
                }
                nodes.push([rr * theta.cos(), rr * theta.sin(), zk]);
            }
        }
    }

    let per_sector = nt / spec.electrode_sectors;
    let mut elements = Vec::with_capacity(cells.len());
    let mut regions = Vec::with_capacity(cells.len());
    let mut surfaces = Vec::new();
    for (e, ((i, j, k), ids, reg)) in cells.iter().enumerate() {
        elements.push(ids.map(|id| node_of[id]));
        regions.push(*reg);
        if *reg == Region::Pzt && i + 1 == nr {
            let sector = (j / per_sector).min(spec.electrode_sectors - 1);
            surfaces.push((Face { element: e, local: 1 }, SurfaceTag::Electrode(sector)));
        }
        if *reg == Region::Pzt && *i == i_bond {
            surfaces.push((Face { element: e, local: 0 }, SurfaceTag::InnerGnd));
        }
        if *k == 0 {
            surfaces.push((Face { element: e, local: 4 }, SurfaceTag::FixedBase));
        }
        if *reg == Region::Metal && *i == 0 && k + 1 == nz {
            surfaces.push((Face { element: e, local: 0 }, SurfaceTag::ToothContact));
        }
    }
    surfaces.sort();

    let mut mesh = Mesh {
        nodes,
        elements,
        regions,
        surfaces,
        characteristic_size: 0.0,
        n_sectors: spec.electrode_sectors,
    };
    mesh.check_quality()?;
    let vol = mesh.total_volume();
    mesh.characteristic_size = (vol / mesh.elements.len() as f64).cbrt();
    mesh.validate_tags()?;
    let _ = refinement;
    Ok(mesh)
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() || self.elements.is_empty()
    }

    pub fn node(&self, n: usize) -> Vector3<f64> {
        Vector3::from(self.nodes[n])
    }

    pub fn element_coords(&self, e: usize) -> [Vector3<f64>; 8] {
        self.elements[e].map(|n| self.node(n))
    }

    pub fn element_centroid(&self, e: usize) -> Vector3<f64> {
        self.element_coords(e).iter().sum::<Vector3<f64>>() / 8.0
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        hex8::volume(&self.element_coords(e))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_volume(e)).sum()
    }

    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.n_elements())
            .filter(|&e| self.regions[e] == region)
            .map(|e| self.element_volume(e))
            .sum()
    }

    /// Fails on the first element with a non-positive Jacobian at any
    /// quadrature point or corner.
    pub fn check_quality(&self) -> Result<()> {
        for e in 0..self.n_elements() {
            let c = self.element_coords(e);
            let mut worst = f64::INFINITY;
            for det in hex8::gauss_jacobians(&c) {
                worst = worst.min(det);
            }
            for xi in hex8::NODE_NATURAL {
                let det = hex8::jacobian(&c, &hex8::shape_derivatives(xi)).determinant();
                worst = worst.min(det);
            }
            if !(worst > 0.0) {
                return Err(Error::MeshQualityFailure { element: e, det_j: worst });
            }
        }
        Ok(())
    }

    pub fn face_nodes(&self, f: Face) -> [usize; 4] {
        FACE_NODES[f.local as usize].map(|a| self.elements[f.element][a])
    }

    /// Area of a bilinear face by 2×2 Gauss quadrature.
    pub fn face_area(&self, f: Face) -> f64 {
        let p = self.face_nodes(f).map(|n| self.node(n));
        let gp = 0.577_350_269_189_625_8;
        let mut area = 0.0;
        for (s, t) in [(-gp, -gp), (gp, -gp), (gp, gp), (-gp, gp)] {
            let ds = ((p[1] - p[0]) * (1.0 - t) + (p[2] - p[3]) * (1.0 + t)) * 0.25;
            let dt = ((p[3] - p[0]) * (1.0 - s) + (p[2] - p[1]) * (1.0 + s)) * 0.25;
            area += ds.cross(&dt).norm();
        }
        area
    }

    pub fn faces_tagged(&self, tag: SurfaceTag) -> impl Iterator<Item = Face> + '_ {
        self.surfaces.iter().filter(move |(_, t)| *t == tag).map(|(f, _)| *f)
    }

    /// Distinct nodes on all faces with the given tag, ascending.
    pub fn tagged_nodes(&self, tag: SurfaceTag) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces_tagged(tag).flat_map(|f| self.face_nodes(f)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn electrode_areas(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n_sectors];
        for (f, t) in &self.surfaces {
            if let SurfaceTag::Electrode(k) = t {
                a[*k] += self.face_area(*f);
            }
        }
        a
    }

    /// Nodes on the top edge of the tooth contact faces, sorted by angle.
    pub fn contact_ring_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = Vec::new();
        let z_top = self.nodes.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p[2]));
        for f in self.faces_tagged(SurfaceTag::ToothContact) {
            for n in self.face_nodes(f) {
                if (self.nodes[n][2] - z_top).abs() < 1e-12 {
                    v.push(n);
                }
            }
        }
        v.sort_unstable();
        v.dedup();
        v.sort_by(|&a, &b| self.angle(a).total_cmp(&self.angle(b)));
        v
    }

    /// Angle of a node in [0, 2π).
    pub fn angle(&self, n: usize) -> f64 {
        let p = self.nodes[n];
        p[1].atan2(p[0]).rem_euclid(2.0 * PI)
    }

    pub fn radius(&self, n: usize) -> f64 {
        let p = self.nodes[n];
        p[0].hypot(p[1])
    }

    /// Nodes of the innermost wall grouped by height, ascending in z. At each
    /// height level the nodes at the smallest radius are kept.
    pub fn inner_wall_levels(&self) -> Vec<(f64, Vec<usize>)> {
        let mut order: Vec<usize> = (0..self.n_nodes()).collect();
        order.sort_by(|&a, &b| self.nodes[a][2].total_cmp(&self.nodes[b][2]));
        let mut levels: Vec<(f64, Vec<usize>)> = Vec::new();
        for n in order {
            let z = self.nodes[n][2];
            match levels.last_mut() {
                Some((zl, v)) if (z - *zl).abs() < 1e-10 => v.push(n),
                _ => levels.push((z, vec![n])),
            }
        }
        for (_, v) in levels.iter_mut() {
            let r_min = v.iter().map(|&n| self.radius(n)).fold(f64::INFINITY, f64::min);
            v.retain(|&n| self.radius(n) < r_min + 1e-7);
        }
        levels
    }

    /// Checks the tag invariants: faces exist, electrodes only on the PZT
    /// outer wall, ground only on the PZT inner wall, no face with two
    /// electrode tags, and a contact ring that goes all the way round.
    pub fn validate_tags(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        let mut seen = std::collections::HashMap::new();
        let radii: Vec<f64> = (0..self.n_nodes()).map(|n| self.radius(n)).collect();
        let pzt_nodes: Vec<usize> = (0..self.n_elements())
            .filter(|&e| self.regions[e] == Region::Pzt)
            .flat_map(|e| self.elements[e])
            .collect();
        let r_out = pzt_nodes.iter().map(|&n| radii[n]).fold(0.0, f64::max);
        let r_in = pzt_nodes.iter().map(|&n| radii[n]).fold(f64::INFINITY, f64::min);
        for (f, t) in &self.surfaces {
            if f.element >= self.n_elements() || f.local >= 6 {
                return bad(format!("surface tag {t:?} refers to a missing face {f:?}"));
            }
            if let SurfaceTag::Electrode(k) = t {
                if *k >= self.n_sectors {
                    return bad(format!("electrode index {k} out of range"));
                }
                if let Some(prev) = seen.insert(*f, *k) {
                    return bad(format!("face {f:?} carries electrodes {prev} and {k}"));
                }
            }
            let on = |r: f64| self.face_nodes(*f).iter().all(|&n| (radii[n] - r).abs() < 1e-9);
            match t {
                SurfaceTag::Electrode(_) if self.regions[f.element] != Region::Pzt || !on(r_out) => {
                    return bad(format!("electrode face {f:?} is not on the PZT outer wall"));
                }
                SurfaceTag::InnerGnd if self.regions[f.element] != Region::Pzt || !on(r_in) => {
                    return bad(format!("ground face {f:?} is not on the PZT inner wall"));
                }
                _ => {}
            }
        }
        self.check_contact_ring()
    }

    fn check_contact_ring(&self) -> Result<()> {
        let faces: Vec<Face> = self.faces_tagged(SurfaceTag::ToothContact).collect();
        if faces.is_empty() {
            return Err(Error::invalid("no tooth contact faces"));
        }
        // Angular intervals of the faces, merged; every remaining gap (a
        // notch) must be narrower than the tooth pitch.
        let mut spans: Vec<(f64, f64)> = faces
            .iter()
            .map(|&f| {
                let angles: Vec<f64> = self.face_nodes(f).iter().map(|&n| self.angle(n)).collect();
                let a0 = angles.iter().copied().fold(f64::INFINITY, f64::min);
                let a1 = angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if a1 - a0 > PI {
                    // Face straddles θ = 0.
                    let hi = angles.iter().copied().filter(|a| *a < PI).fold(0.0, f64::max);
                    let lo = angles.iter().copied().filter(|a| *a >= PI).fold(2.0 * PI, f64::min);
                    (lo - 2.0 * PI, hi)
                } else {
                    (a0, a1)
                }
            })
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for s in spans {
            match merged.last_mut() {
                Some(m) if s.0 <= m.1 + 1e-9 => m.1 = m.1.max(s.1),
                _ => merged.push(s),
            }
        }
        let mut gaps = Vec::new();
        for w in merged.windows(2) {
            gaps.push(w[1].0 - w[0].1);
        }
        gaps.push(merged[0].0 + 2.0 * PI - merged[merged.len() - 1].1);
        let max_gap = gaps.iter().copied().fold(0.0, f64::max);
        let covered: f64 = merged.iter().map(|m| m.1 - m.0).sum();
        let pitch = 2.0 * PI / merged.len() as f64;
        if covered < PI || max_gap >= pitch {
            return Err(Error::invalid(format!(
                "tooth contact faces do not form a ring (largest gap {:.3} rad)",
                max_gap
            )));
        }
        Ok(())
    }

    /// Copy of the mesh rotated about the z axis.
    pub fn rotated(&self, angle: f64) -> Mesh {
        let (s, c) = angle.sin_cos();
        let mut m = self.clone();
        for p in m.nodes.iter_mut() {
            *p = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
        }
        m
    }

    /// Maps each node of `other` onto a node of `self` within `tol`, or
    /// returns `None` if some node has no partner.
    pub fn node_correspondence(&self, other: &Mesh, tol: f64) -> Option<Vec<usize>> {
        let key = |p: &[f64; 3]| ((p[0] / tol).round() as i64, (p[1] / tol).round() as i64, (p[2] / tol).round() as i64);
        let mut index = std::collections::HashMap::new();
        for (n, p) in self.nodes.iter().enumerate() {
            index.insert(key(p), n);
        }
        let mut out = Vec::with_capacity(other.n_nodes());
        'nodes: for p in &other.nodes {
            let (kx, ky, kz) = key(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(&n) = index.get(&(kx + dx, ky + dy, kz + dz)) {
                            let q = self.nodes[n];
                            if (q[0] - p[0]).hypot(q[1] - p[1]).hypot(q[2] - p[2]) < tol {
                                out.push(n);
                                continue 'nodes;
                            }
                        }
                    }
                }
            }
            return None;
        }
        Some(out)
    }

    /// Summary numbers for reports.
    pub fn stats(&self) -> MeshStats {
        MeshStats {
            nodes: self.n_nodes(),
            elements: self.n_elements(),
            pzt_elements: self.regions.iter().filter(|r| **r == Region::Pzt).count(),
            metal_elements: self.regions.iter().filter(|r| **r == Region::Metal).count(),
            tagged_faces: self.surfaces.len(),
            volume_m3: self.total_volume(),
            characteristic_size_m: self.characteristic_size,
            n_sectors: self.n_sectors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub nodes: usize,
    pub elements: usize,
    pub pzt_elements: usize,
    pub metal_elements: usize,
    pub tagged_faces: usize,
    pub volume_m3: f64,
    pub characteristic_size_m: f64,
    pub n_sectors: usize,
}

/// Greatest common divisor, used for the rotational symmetry of the mesh.
pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
