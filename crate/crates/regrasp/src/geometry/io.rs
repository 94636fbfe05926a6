//! OBJ and PLY readers/writers for meshes and point clouds.
//!
//! OBJ is ASCII `v`/`f` only. PLY supports ASCII and binary little-endian,
//! float or double vertex properties, and an optional face element so the
//! same reader serves both meshes and plain point clouds. Writers emit
//! double-precision coordinates so files round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::{GeometryError, PointCloud, TriangleMesh};

/// Bookkeeping from a mesh load.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeshLoadReport {
    /// Faces dropped because they repeat a vertex index or have exactly zero
    /// area.
    pub degenerate_faces_dropped: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn face_area_is_zero(vertices: &[Vector3<f64>], f: &[u32; 3]) -> bool {
    let a = vertices[f[0] as usize];
    let b = vertices[f[1] as usize];
    let c = vertices[f[2] as usize];
    (b - a).cross(&(c - a)).norm_squared() == 0.0
}

/// Filters degenerate faces and assembles the mesh.
fn build_mesh(
    vertices: Vec<Vector3<f64>>,
    raw_faces: Vec<[u32; 3]>,
    path: &Path,
) -> Result<(TriangleMesh, MeshLoadReport), GeometryError> {
    let mut dropped = 0usize;
    let mut faces = Vec::with_capacity(raw_faces.len());
    for f in raw_faces {
        for &idx in &f {
            if idx as usize >= vertices.len() {
                return Err(parse_err(path, 0, format!("face index {idx} out of range")));
            }
        }
        let repeated = f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
        if repeated || face_area_is_zero(&vertices, &f) {
            dropped += 1;
        } else {
            faces.push(f);
        }
    }
    let mesh = TriangleMesh::new(vertices, faces)?;
    Ok((
        mesh,
        MeshLoadReport {
            degenerate_faces_dropped: dropped,
        },
    ))
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<(TriangleMesh, MeshLoadReport), GeometryError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    *c = tokens
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, lineno + 1, "bad vertex line"))?;
                }
                vertices.push(Vector3::from(coords));
            }
            Some("f") => {
                let idx: Vec<u32> = tokens
                    .map(|t| {
                        // "f v", "f v/vt", "f v/vt/vn" and "f v//vn" all start
                        // with the vertex index.
                        let first = t.split('/').next().unwrap_or(t);
                        first
                            .parse::<i64>()
                            .ok()
                            .filter(|&v| v >= 1)
                            .map(|v| (v - 1) as u32)
                            .ok_or_else(|| parse_err(path, lineno + 1, "bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(path, lineno + 1, "face needs >= 3 indices"));
                }
                // Fan-triangulate polygons.
                for i in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    build_mesh(vertices, faces, path)
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy)]
enum PlyScalar {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            "uchar" | "uint8" => Self::U8,
            "char" | "int8" => Self::I8,
            "ushort" | "uint16" => Self::U16,
            "short" | "int16" => Self::I16,
            "uint" | "uint32" => Self::U32,
            "int" | "int32" => Self::I32,
        _ => return None,
        })
    }

    fn read_f64<R: Read>(&self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
            Self::U8 => r.read_u8()? as f64,
            Self::I8 => r.read_i8()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
        })
    }
}

struct PlyElement {
    name: String,
    count: usize,
    // (property name, scalar type, optional list-count type)
    properties: Vec<(String, PlyScalar, Option<PlyScalar>)>,
}

struct PlyHeader {
    format: PlyFormat,
    elements: Vec<PlyElement>,
}

fn read_ply_header<R: BufRead>(r: &mut R, path: &Path) -> Result<PlyHeader, GeometryError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(parse_err(path, 1, "missing ply magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut lineno = 1;
    loop {
        line.clear();
        lineno += 1;
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(path, lineno, "unexpected end of header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(parse_err(path, lineno, format!("unsupported format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before element"))?;
                let count_ty = PlyScalar::parse(count_ty)
                    .ok_or_else(|| parse_err(path, lineno, "bad list count type"))?;
                let item_ty = PlyScalar::parse(item_ty)
                    .ok_or_else(|| parse_err(path, lineno, "bad list item type"))?;
                elem.properties
                    .push((name.to_string(), item_ty, Some(count_ty)));
            }
            ["property", ty, name] => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before element"))?;
                let ty = PlyScalar::parse(ty)
                    .ok_or_else(|| parse_err(path, lineno, format!("bad property type {ty}")))?;
                elem.properties.push((name.to_string(), ty, None));
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, lineno, format!("bad header line: {}", line.trim()))),
        }
    }
    Ok(PlyHeader {
        format: format.ok_or_else(|| parse_err(path, lineno, "missing format line"))?,
        elements,
    })
}

struct PlyContent {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
}

fn read_ply(path: &Path) -> Result<PlyContent, GeometryError> {
    let mut reader = BufReader::new(File::open(path)?);
    let header = read_ply_header(&mut reader, path)?;

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();

    // ASCII body handled token-wise; binary straight off the reader.
    let mut ascii_tokens: Vec<String> = Vec::new();
    if header.format == PlyFormat::Ascii {
        let mut body = String::new();
        reader.read_to_string(&mut body)?;
        ascii_tokens = body.split_whitespace().map(str::to_string).collect();
        ascii_tokens.reverse(); // pop from the end
    }
    let mut next_ascii = |path: &Path| -> Result<f64, GeometryError> {
        ascii_tokens
            .pop()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, 0, "truncated ascii body"))
    };

    for elem in &header.elements {
        let is_vertex = elem.name == "vertex";
        let is_face = elem.name == "face";
        for _ in 0..elem.count {
            let mut pos = [f64::NAN; 3];
            let mut nrm = [f64::NAN; 3];
            for (name, ty, list) in &elem.properties {
                if let Some(count_ty) = list {
                    let n = match header.format {
                        PlyFormat::Ascii => next_ascii(path)? as usize,
                        PlyFormat::BinaryLittleEndian => count_ty.read_f64(&mut reader)? as usize,
                    };
                    let mut items = Vec::with_capacity(n);
                    for _ in 0..n {
                        let v = match header.format {
                            PlyFormat::Ascii => next_ascii(path)?,
                            PlyFormat::BinaryLittleEndian => ty.read_f64(&mut reader)?,
                        };
                        items.push(v);
                    }
                    if is_face && (name == "vertex_indices" || name == "vertex_index") {
                        if items.len() < 3 {
                            return Err(parse_err(path, 0, "face with fewer than 3 indices"));
                        }
                        let idx: Vec<u32> = items.iter().map(|&v| v as u32).collect();
                        for i in 1..idx.len() - 1 {
                            faces.push([idx[0], idx[i], idx[i + 1]]);
                        }
                    }
                } else {
                    let v = match header.format {
                        PlyFormat::Ascii => next_ascii(path)?,
                        PlyFormat::BinaryLittleEndian => ty.read_f64(&mut reader)?,
                    };
                    if is_vertex {
                        match name.as_str() {
                            "x" => pos[0] = v,
                            "y" => pos[1] = v,
                            "z" => pos[2] = v,
                            "nx" => nrm[0] = v,
                            "ny" => nrm[1] = v,
                            "nz" => nrm[2] = v,
                            _ => {}
                        }
                    }
                }
            }
            if is_vertex {
                if pos.iter().any(|c| c.is_nan()) {
                    return Err(parse_err(path, 0, "vertex missing x/y/z"));
                }
                vertices.push(Vector3::from(pos));
                if nrm.iter().all(|c| !c.is_nan()) {
                    normals.push(Vector3::from(nrm));
                }
            }
        }
    }

    Ok(PlyContent {
        vertices,
        normals,
        faces,
    })
}

pub fn load_ply_mesh(
    path: impl AsRef<Path>,
) -> Result<(TriangleMesh, MeshLoadReport), GeometryError> {
    let path = path.as_ref();
    let content = read_ply(path)?;
    build_mesh(content.vertices, content.faces, path)
}

/// Loads a PLY as a point cloud, keeping normals when present and unit
/// length. Face data, if any, is ignored.
pub fn load_ply_cloud(path: impl AsRef<Path>) -> Result<PointCloud, GeometryError> {
    let content = read_ply(path.as_ref())?;
    if content.normals.len() == content.vertices.len()
        && content
            .normals
            .iter()
            .all(|n| (n.norm() - 1.0).abs() <= 1e-6)
    {
        PointCloud::with_normals(content.vertices, content.normals)
    } else {
        Ok(PointCloud::new(content.vertices))
    }
}

fn write_ply_header(
    w: &mut impl Write,
    ascii: bool,
    vertex_count: usize,
    with_normals: bool,
    face_count: Option<usize>,
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if ascii { "ascii" } else { "binary_little_endian" }
    )?;
    writeln!(w, "element vertex {vertex_count}")?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if with_normals {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property double {p}")?;
        }
    }
    if let Some(n) = face_count {
        writeln!(w, "element face {n}")?;
        writeln!(w, "property list uchar uint vertex_indices")?;
    }
    writeln!(w, "end_header")
}

pub fn save_ply_mesh(
    mesh: &TriangleMesh,
    path: impl AsRef<Path>,
    ascii: bool,
) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_header(&mut w, ascii, mesh.vertices().len(), false, Some(mesh.faces().len()))?;
    if ascii {
        for v in mesh.vertices() {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for f in mesh.faces() {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
    } else {
        for v in mesh.vertices() {
            for c in [v.x, v.y, v.z] {
                w.write_f64::<LittleEndian>(c)?;
            }
        }
        for f in mesh.faces() {
            w.write_u8(3)?;
            for &idx in f {
                w.write_u32::<LittleEndian>(idx)?;
            }
        }
    }
    Ok(())
}

pub fn save_ply_cloud(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    ascii: bool,
) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(File::create(path)?);
    let with_normals = cloud.normals().is_some();
    write_ply_header(&mut w, ascii, cloud.len(), with_normals, None)?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut row = vec![p.x, p.y, p.z];
        if let Some(ns) = cloud.normals() {
            row.extend([ns[i].x, ns[i].y, ns[i].z]);
        }
        if ascii {
            let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", text.join(" "))?;
        } else {
            for c in row {
                w.write_f64::<LittleEndian>(c)?;
            }
        }
    }
    Ok(())
}

/// Loads a mesh by file extension (`.obj`, `.ply`).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<(TriangleMesh, MeshLoadReport), GeometryError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply_mesh(path),
        other => Err(parse_err(
            path,
            0,
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn sample_mesh() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.25, 0.25, 1.5),
            ],
            vec![[0, 1, 2], [0, 1, 3], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = sample_mesh();
        save_obj(&mesh, &path).unwrap();
        let (back, report) = load_obj(&path).unwrap();
        assert_eq!(report.degenerate_faces_dropped, 0);
        assert_eq!(back.faces(), mesh.faces());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn ply_binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mesh = sample_mesh();
        save_ply_mesh(&mesh, &path, false).unwrap();
        let (back, _) = load_ply_mesh(&path).unwrap();
        assert_eq!(back.faces(), mesh.faces());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ply_ascii_cloud_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = PointCloud::with_normals(
            vec![Vector3::new(0.5, -0.25, 2.0), Vector3::new(0.0, 0.125, -1.0)],
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        save_ply_cloud(&cloud, &path, true).unwrap();
        let back = load_ply_cloud(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.normals().is_some());
        for (a, b) in cloud.points().iter().zip(back.points()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_faces_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 2\nf 1 2 4\n",
        )
        .unwrap();
        // Face 2 repeats an index; face 3 is collinear (zero area).
        let (mesh, report) = load_obj(&path).unwrap();
        assert_eq!(mesh.faces().len(), 1);
        assert_eq!(report.degenerate_faces_dropped, 2);
    }
}
