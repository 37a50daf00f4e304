//! Wavefront OBJ and XYZ text formats.
//!
//! Only `v` and `f` records are honored. Everything else (normals, texture
//! coordinates, groups, materials) is skipped and counted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, TriMesh, Vec3};
use crate::error::{Error, Result};

/// What the loader skipped while reading an OBJ file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjStats {
    pub skipped_records: usize,
    pub polygons_triangulated: usize,
}

struct RawObj {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    stats: ObjStats,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_coords<'a>(
    path: &Path,
    line_no: usize,
    mut fields: impl Iterator<Item = &'a str>,
) -> Result<Vec3> {
    let mut xyz = [0.0; 3];
    for c in xyz.iter_mut() {
        let tok = fields.next().ok_or_else(|| Error::Parse {
            path: path.into(),
            line: line_no,
            message: "expected three coordinates".into(),
        })?;
        *c = tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
            path: path.into(),
            line: line_no,
            message: format!("invalid coordinate {tok:?}"),
        })?;
    }
    Ok(xyz.into())
}

fn parse_obj_text(path: &Path, text: &str) -> Result<RawObj> {
    let mut vertices = Vec::new();
    let mut polygons: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut stats = ObjStats::default();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            None => {}
            Some("v") => vertices.push(parse_coords(path, line_no, fields)?),
            Some("f") => {
                let mut poly = Vec::new();
                for tok in fields {
                    // "i", "i/t", "i//n", "i/t/n": only the position index matters.
                    let idx = tok.split('/').next().unwrap_or("");
                    let raw: i64 = idx.parse().map_err(|_| Error::Parse {
                        path: path.into(),
                        line: line_no,
                        message: format!("invalid face index {tok:?}"),
                    })?;
                    // Negative indices count back from the latest vertex.
                    let resolved = if raw > 0 {
                        raw - 1
                    } else if raw < 0 {
                        vertices.len() as i64 + raw
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: line_no,
                            message: format!("face index {raw} is out of range"),
                        });
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: line_no,
                        message: format!("face has {} vertices, need at least 3", poly.len()),
                    });
                }
                polygons.push((line_no, poly));
            }
            Some(_) => stats.skipped_records += 1,
        }
    }

    let mut faces = Vec::with_capacity(polygons.len());
    for (line_no, poly) in polygons {
        if let Some(&bad) = poly.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::Parse {
                path: path.into(),
                line: line_no,
                message: format!(
                    "face index {} is out of range ({} vertices)",
                    bad + 1,
                    vertices.len()
                ),
            });
        }
        if poly.len() > 3 {
            stats.polygons_triangulated += 1;
        }
        for k in 1..poly.len() - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    Ok(RawObj { vertices, faces, stats })
}

/// Parses OBJ text into a mesh; `path` is only used in error messages.
pub fn parse_obj(path: &Path, text: &str) -> Result<(TriMesh, ObjStats)> {
    let raw = parse_obj_text(path, text)?;
    if raw.vertices.is_empty() || raw.faces.is_empty() {
        return Err(Error::EmptyFile(path.into()));
    }
    let mesh = TriMesh::new(raw.vertices, raw.faces).map_err(|e| match e {
        Error::InvalidMesh(m) => Error::InvalidMesh(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((mesh, raw.stats))
}

pub fn load_mesh_with_stats(path: impl AsRef<Path>) -> Result<(TriMesh, ObjStats)> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let (mesh, stats) = parse_obj(path, &text)?;
    if stats.skipped_records > 0 {
        log::warn!(
            "{}: skipped {} non-geometry records",
            path.display(),
            stats.skipped_records
        );
    }
    Ok((mesh, stats))
}

/// Loads an OBJ mesh, fan-triangulating polygons from their first vertex.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    load_mesh_with_stats(path).map(|(m, _)| m)
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(32 * (mesh.num_vertices() + mesh.num_faces()));
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an XYZ file (one `x y z` triple per line), or the vertices of an
/// OBJ file when the extension is `.obj`.
pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let is_obj = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    let points = if is_obj {
        parse_obj_text(path, &text)?.vertices
    } else {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let p = parse_coords(path, i + 1, &mut fields)?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    message: "expected exactly three coordinates".into(),
                });
            }
            points.push(p);
        }
        points
    };
    if points.is_empty() {
        return Err(Error::EmptyFile(path.into()));
    }
    PointCloud::new(points)
}

pub fn save_points(pc: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(32 * pc.len());
    for p in pc.points() {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
