//! Small structured meshes used by benchmarks and tests: a rectangular
//! block and a plain (unnotched) ring.

use std::f64::consts::PI;

use super::{Face, Mesh, Region, SurfaceTag};
use crate::error::{Error, Result};

/// Block `[x0, x0 + lx] × [0, ly] × [0, lz]` with `nx × ny × nz` elements.
///
/// Tags: `FixedBase` on z = 0; for PZT blocks, `InnerGnd` on x = x0 and
/// `Electrode(0)` on x = x0 + lx.
#[allow(clippy::too_many_arguments)]
pub fn box_mesh(
    x0: f64,
    lx: f64,
    ly: f64,
    lz: f64,
    nx: usize,
    ny: usize,
    nz: usize,
    region: Region,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 || nz == 0 || !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
        return Err(Error::GeometryInfeasible("block needs positive sizes and counts".into()));
    }
    let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    x0 + lx * i as f64 / nx as f64,
                    ly * j as f64 / ny as f64,
                    lz * k as f64 / nz as f64,
                ]);
            }
        }
    }
    let mut elements = Vec::new();
    let mut surfaces = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let e = elements.len();
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
                if k == 0 {
                    surfaces.push((Face { element: e, local: 4 }, SurfaceTag::FixedBase));
                }
                if region == Region::Pzt && i == 0 {
                    surfaces.push((Face { element: e, local: 0 }, SurfaceTag::InnerGnd));
                }
                if region == Region::Pzt && i + 1 == nx {
                    surfaces.push((Face { element: e, local: 1 }, SurfaceTag::Electrode(0)));
                }
            }
        }
    }
    surfaces.sort();
    let n_el = elements.len();
    Ok(Mesh {
        nodes,
        elements,
        regions: vec![region; n_el],
        surfaces,
        characteristic_size: (lx * ly * lz / n_el as f64).cbrt(),
        n_sectors: usize::from(region == Region::Pzt),
    })
}

/// Plain ring `r_in..r_out`, height `h`, uniform divisions.
///
/// Tags: `FixedBase` on the bottom, `ToothContact` on the inner wall of the
/// top layer, and for PZT rings `InnerGnd` on the inner wall and
/// `n_sectors` equal electrodes on the outer wall.
#[allow(clippy::too_many_arguments)]
pub fn ring_mesh(
    r_in: f64,
    r_out: f64,
    h: f64,
    nr: usize,
    nt: usize,
    nz: usize,
    region: Region,
    n_sectors: usize,
) -> Result<Mesh> {
    if !(r_in > 0.0 && r_out > r_in && h > 0.0) || nr == 0 || nt < 3 || nz == 0 {
        return Err(Error::GeometryInfeasible("ring needs r_out > r_in > 0 and h > 0".into()));
    }
    if region == Region::Pzt && (n_sectors == 0 || !nt.is_multiple_of(n_sectors)) {
        return Err(Error::GeometryInfeasible(format!(
            "{nt} angular divisions cannot be split into {n_sectors} sectors"
        )));
    }
    let id = |i: usize, j: usize, k: usize| (k * nt + j % nt) * (nr + 1) + i;
    let mut nodes = Vec::with_capacity((nr + 1) * nt * (nz + 1));
    for k in 0..=nz {
        for j in 0..nt {
            let t = 2.0 * PI * j as f64 / nt as f64;
            for i in 0..=nr {
                let r = r_in + (r_out - r_in) * i as f64 / nr as f64;
                nodes.push([r * t.cos(), r * t.sin(), h * k as f64 / nz as f64]);
            }
        }
    }
    let sectors = if region == Region::Pzt { n_sectors } else { 0 };
    let mut elements = Vec::new();
    let mut surfaces = Vec::new();
    for k in 0..nz {
        for j in 0..nt {
            for i in 0..nr {
                let e = elements.len();
                elements.push([
                    id(i, j, k),
                    id(i + 1, j, k),
                    id(i + 1, j + 1, k),
                    id(i, j + 1, k),
                    id(i, j, k + 1),
                    id(i + 1, j, k + 1),
                    id(i + 1, j + 1, k + 1),
                    id(i, j + 1, k + 1),
                ]);
                if k == 0 {
                    surfaces.push((Face { element: e, local: 4 }, SurfaceTag::FixedBase));
                }
                if i == 0 && k + 1 == nz {
                    surfaces.push((Face { element: e, local: 0 }, SurfaceTag::ToothContact));
                }
                if sectors > 0 && i == 0 {
                    surfaces.push((Face { element: e, local: 0 }, SurfaceTag::InnerGnd));
                }
                if sectors > 0 && i + 1 == nr {
                    surfaces.push((Face { element: e, local: 1 }, SurfaceTag::Electrode(j / (nt / sectors))));
                }
            }
        }
    }
    surfaces.sort();
    let n_el = elements.len();
    let vol = PI * (r_out * r_out - r_in * r_in) * h;
    Ok(Mesh {
        nodes,
        elements,
        regions: vec![region; n_el],
        surfaces,
        characteristic_size: (vol / n_el as f64).cbrt(),
        n_sectors: sectors,
    })
}
