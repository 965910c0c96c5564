//! Legacy ASCII VTK (UNSTRUCTURED_GRID) export and import.
//!
//! Hexahedra are written first (cell type 12), followed by one quad (type 9)
//! per tagged face. Cell data carries `region` (0 metal, 1 PZT, −1 on faces),
//! `surface_tag` (see [`SurfaceTag::code`], −1 on volumes) and the parent
//! element / local face of each quad, which makes the import lossless.

use std::fmt::Write as _;
use std::path::Path;

use super::{Face, Mesh, Region, SurfaceTag};
use crate::error::{Error, Result};

const VTK_HEXAHEDRON: u32 = 12;
const VTK_QUAD: u32 = 9;

fn region_code(r: Region) -> i64 {
    match r {
        Region::Metal => 0,
        Region::Pzt => 1,
    }
}

pub fn export_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    if mesh.is_empty() {
        return Err(Error::io(path, "refusing to write an empty mesh"));
    }
    let text = mesh_to_vtk(mesh, &[]);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Named point vector fields appended as POINT_DATA.
pub type PointVectors<'a> = (&'a str, &'a [[f64; 3]]);

/// Serializes the mesh plus optional point vector fields.
pub fn mesh_to_vtk(mesh: &Mesh, point_vectors: &[PointVectors<'_>]) -> String {
    let ne = mesh.n_elements();
    let nf = mesh.surfaces.len();
    let mut s = String::with_capacity(64 * (mesh.n_nodes() + ne));
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("hollow cylinder stator mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    s.push_str("FIELD FieldData 2\n");
    let _ = writeln!(s, "characteristic_size 1 1 double\n{:?}", mesh.characteristic_size);
    let _ = writeln!(s, "n_sectors 1 1 int\n{}", mesh.n_sectors);
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for p in &mesh.nodes {
        // Debug formatting of f64 is the shortest string that round-trips.
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    let _ = writeln!(s, "CELLS {} {}", ne + nf, ne * 9 + nf * 5);
    for e in &mesh.elements {
        let _ = writeln!(s, "8 {} {} {} {} {} {} {} {}", e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7]);
    }
    for (f, _) in &mesh.surfaces {
        let n = mesh.face_nodes(*f);
        let _ = writeln!(s, "4 {} {} {} {}", n[0], n[1], n[2], n[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", ne + nf);
    for _ in 0..ne {
        let _ = writeln!(s, "{VTK_HEXAHEDRON}");
    }
    for _ in 0..nf {
        let _ = writeln!(s, "{VTK_QUAD}");
    }
    let _ = writeln!(s, "CELL_DATA {}", ne + nf);
    let mut scalar = |name: &str, vals: &mut dyn Iterator<Item = i64>| {
        let _ = writeln!(s, "SCALARS {name} int 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(s, "{v}");
        }
    };
    scalar(
        "region",
        &mut mesh.regions.iter().map(|r| region_code(*r)).chain((0..nf).map(|_| -1)),
    );
    scalar(
        "surface_tag",
        &mut (0..ne).map(|_| -1).chain(mesh.surfaces.iter().map(|(_, t)| t.code())),
    );
    scalar(
        "parent_element",
        &mut (0..ne as i64).chain(mesh.surfaces.iter().map(|(f, _)| f.element as i64)),
    );
    scalar(
        "parent_face",
        &mut (0..ne).map(|_| -1).chain(mesh.surfaces.iter().map(|(f, _)| f.local as i64)),
    );
    if !point_vectors.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
        for (name, data) in point_vectors {
            let _ = writeln!(s, "VECTORS {name} double");
            for v in data.iter() {
                let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
            }
        }
    }
    s
}

struct Tokens<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        Tokens { lines, pos: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines.get(self.pos).map_or(usize::MAX, |l| l.0)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::VtkFormat {
            line: self.line_no(),
            message: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<Vec<&'a str>> {
        let l = self.lines.get(self.pos).ok_or(Error::VtkFormat {
            line: usize::MAX,
            message: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok(l.1.clone())
    }

    fn numbers<T: std::str::FromStr>(&mut self, count: usize) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let line = self.line_no();
            for tok in self.next_line()? {
                out.push(tok.parse::<T>().map_err(|_| Error::VtkFormat {
                    line,
                    message: format!("bad number `{tok}`"),
                })?);
            }
        }
        if out.len() != count {
            return Err(self.err("too many values on a line"));
        }
        Ok(out)
    }
}

pub fn import_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vtk(&text)
}

pub fn parse_vtk(text: &str) -> Result<Mesh> {
    let mut t = Tokens::new(text);
    let header = t.next_line()?;
    if header.first() != Some(&"#") || !header.contains(&"vtk") {
        return Err(Error::VtkFormat {
            line: 1,
            message: "missing `# vtk DataFile` header".into(),
        });
    }
    t.next_line()?; // title
    if t.next_line()? != ["ASCII"] {
        return Err(t.err("only ASCII files are supported"));
    }
    if t.next_line()? != ["DATASET", "UNSTRUCTURED_GRID"] {
        return Err(t.err("expected DATASET UNSTRUCTURED_GRID"));
    }
    let mut characteristic_size = 0.0;
    let mut n_sectors = 0usize;
    let mut nodes: Vec<[f64; 3]> = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut types: Vec<u32> = Vec::new();
    let mut data: std::collections::HashMap<String, Vec<i64>> = Default::default();
    while t.pos < t.lines.len() {
        let head = t.next_line()?;
        match head[0] {
            "FIELD" => {
                let count: usize = head.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| t.err("bad FIELD"))?;
                for _ in 0..count {
                    let fh = t.next_line()?;
                    let n: usize = fh.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| t.err("bad field array"))?;
                    let vals = t.numbers::<f64>(n)?;
                    match fh[0] {
                        "characteristic_size" => characteristic_size = vals[0],
                        "n_sectors" => n_sectors = vals[0] as usize,
                        _ => {}
                    }
                }
            }
            "POINTS" => {
                let n: usize = head.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| t.err("bad POINTS"))?;
                let v = t.numbers::<f64>(3 * n)?;
                nodes = v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            }
            "CELLS" => {
                let n: usize = head.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| t.err("bad CELLS"))?;
                for _ in 0..n {
                    let line = t.line_no();
                    let toks = t.next_line()?;
                    let vals: Vec<usize> = toks
                        .iter()
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::VtkFormat {
                            line,
                            message: "bad cell connectivity".into(),
                        })?;
                    if vals.is_empty() || vals[0] + 1 != vals.len() {
                        return Err(Error::VtkFormat {
                            line,
                            message: "cell size does not match its node count".into(),
                        });
                    }
                    if vals[1..].iter().any(|&n| n >= nodes.len()) {
                        return Err(Error::VtkFormat {
                            line,
                            message: "cell refers to a missing point".into(),
                        });
                    }
                    cells.push(vals[1..].to_vec());
                }
            }
            "CELL_TYPES" => {
                let n: usize = head.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| t.err("bad CELL_TYPES"))?;
                types = t.numbers::<u32>(n)?;
            }
            "CELL_DATA" => {}
            "SCALARS" => {
                let name = head.get(1).ok_or_else(|| t.err("bad SCALARS"))?.to_string();
                t.next_line()?; // LOOKUP_TABLE
                let v = t.numbers::<i64>(cells.len())?;
                data.insert(name, v);
            }
            "POINT_DATA" => break,
            other => return Err(t.err(format!("unexpected section `{other}`"))),
        }
    }
    if types.len() != cells.len() {
        return Err(t.err("CELL_TYPES count does not match CELLS"));
    }
    let get = |name: &str| data.get(name).ok_or_else(|| Error::VtkFormat {
        line: usize::MAX,
        message: format!("missing cell data `{name}`"),
    });
    let (region, tag, parent, face) = (get("region")?, get("surface_tag")?, get("parent_element")?, get("parent_face")?);
    let mut mesh = Mesh {
        nodes,
        elements: Vec::new(),
        regions: Vec::new(),
        surfaces: Vec::new(),
        characteristic_size,
        n_sectors,
    };
    for (c, ty) in types.iter().enumerate() {
        match *ty {
            VTK_HEXAHEDRON => {
                let conn: [usize; 8] = cells[c].clone().try_into().map_err(|_| Error::VtkFormat {
                    line: usize::MAX,
                    message: format!("hexahedron {c} does not have 8 nodes"),
                })?;
                mesh.elements.push(conn);
                mesh.regions.push(if region[c] == 1 { Region::Pzt } else { Region::Metal });
            }
            VTK_QUAD => {
                let tag = SurfaceTag::from_code(tag[c]).ok_or_else(|| Error::VtkFormat {
                    line: usize::MAX,
                    message: format!("unknown surface tag {}", tag[c]),
                })?;
                mesh.surfaces.push((
                    Face {
                        element: parent[c] as usize,
                        local: face[c] as u8,
                    },
                    tag,
                ));
            }
            other => {
                return Err(Error::VtkFormat {
                    line: usize::MAX,
                    message: format!("unsupported cell type {other}"),
                })
            }
        }
    }
    for (f, _) in &mesh.surfaces {
        if f.element >= mesh.elements.len() || f.local >= 6 {
            return Err(Error::VtkFormat {
                line: usize::MAX,
                message: format!("surface refers to missing face {f:?}"),
            });
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::default_stator_spec;
    use crate::mesh::generate_mesh;

    #[test]
    fn round_trip_is_lossless() {
        let m = generate_mesh(&default_stator_spec(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vtk");
        export_mesh(&m, &p).unwrap();
        let back = import_mesh(&p).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_mesh_is_refused() {
        let m = Mesh {
            nodes: vec![],
            elements: vec![],
            regions: vec![],
            surfaces: vec![],
            characteristic_size: 0.0,
            n_sectors: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.vtk");
        assert!(matches!(export_mesh(&m, &p), Err(Error::IoFailure { .. })));
        assert!(!p.exists());
    }

    #[test]
    fn truncated_file_reports_a_format_error() {
        let m = generate_mesh(&default_stator_spec(), 1).unwrap();
        let text = mesh_to_vtk(&m, &[]);
        let cut = &text[..text.len() / 2];
        assert!(matches!(parse_vtk(cut), Err(Error::VtkFormat { .. })));
    }
}
