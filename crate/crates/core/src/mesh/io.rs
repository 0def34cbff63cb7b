//! OBJ and PLY reading and writing.
//!
//! OBJ colors use the common `v x y z r g b` extension. PLY is written either
//! as ASCII or binary little-endian with double positions and float colors;
//! the reader also accepts float positions and uchar colors.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::TriMesh;
use crate::error::{contract, Result, SnsError};

fn perr(line: usize, msg: impl Into<String>) -> SnsError {
    SnsError::Parse { line, msg: msg.into() }
}

pub fn load(path: &Path) -> Result<TriMesh> {
    let bytes = fs::read(path)?;
    match extension(path).as_str() {
        "obj" => parse_obj(&String::from_utf8_lossy(&bytes)),
        "ply" => parse_ply(&bytes),
        other => Err(contract(format!("unsupported mesh format `{other}`"))),
    }
}

pub fn save(mesh: &TriMesh, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "obj" => fs::write(path, write_obj(mesh))?,
        "ply" => fs::write(path, write_ply(mesh, PlyFormat::BinaryLittleEndian))?,
        other => return Err(contract(format!("unsupported mesh format `{other}`"))),
    }
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            Some("v") => {
                let vals: Vec<f64> = tok
                    .map(|t| t.parse::<f64>().map_err(|_| perr(line, format!("bad number `{t}`"))))
                    .collect::<Result<_>>()?;
                match vals.len() {
                    3 => vertices.push(Vector3::new(vals[0], vals[1], vals[2])),
                    6 => {
                        vertices.push(Vector3::new(vals[0], vals[1], vals[2]));
                        colors.push([vals[3], vals[4], vals[5]]);
                    }
                    n => return Err(perr(line, format!("vertex has {n} values, expected 3 or 6"))),
                }
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        match head.parse::<i64>() {
                            Ok(k) if k > 0 => Ok(k as usize - 1),
                            Ok(k) if k < 0 && (-k) as usize <= vertices.len() => Ok(vertices.len() - (-k) as usize),
                            _ => Err(perr(line, format!("bad face index `{t}`"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(perr(line, format!("face has {} corners, only triangles are supported", idx.len())));
                }
                if let Some(&k) = idx.iter().find(|&&k| k >= vertices.len()) {
                    return Err(perr(line, format!("face references vertex {} before it is defined", k + 1)));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(perr(0, "colors given for some vertices only"));
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if !colors.is_empty() {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                s += &format!("v {:.17e} {:.17e} {:.17e} {:.9} {:.9} {:.9}\n", v.x, v.y, v.z, c[0], c[1], c[2]);
            }
            None => s += &format!("v {:.17e} {:.17e} {:.17e}\n", v.x, v.y, v.z),
        }
    }
    for f in &mesh.faces {
        s += &format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

pub fn write_ply(mesh: &TriMesh, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {}\n", mesh.vertices.len());
    header += "property double x\nproperty double y\nproperty double z\n";
    if mesh.colors.is_some() {
        header += "property float red\nproperty float green\nproperty float blue\n";
    }
    header += &format!("element face {}\nproperty list uchar int vertex_indices\nend_header\n", mesh.faces.len());
    out.extend_from_slice(header.as_bytes());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let c = mesh.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                let mut line = format!("{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
                if let Some(c) = c {
                    line += &format!(" {} {} {}", c[0] as f32, c[1] as f32, c[2] as f32);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLittleEndian => {
                for x in v.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                if let Some(c) = c {
                    for x in c {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
            }
        }
    }
    for f in &mesh.faces {
        match format {
            PlyFormat::Ascii => out.extend_from_slice(format!("3 {} {} {}\n", f[0], f[1], f[2]).as_bytes()),
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for &k in f {
                    out.extend_from_slice(&(k as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn parse_ply(bytes: &[u8]) -> Result<TriMesh> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| *pos + e);
        let s = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some(s)
    };

    if next_line(&mut pos).as_deref() != Some("ply") {
        return Err(perr(1, "missing `ply` magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut header_lines = 1;
    loop {
        let line = next_line(&mut pos).ok_or_else(|| perr(header_lines + 1, "header ends without end_header"))?;
        header_lines += 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("format") => {
                binary = Some(match tok.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => return Err(perr(header_lines, format!("unsupported format {other:?}"))),
                })
            }
            Some("element") => {
                let (Some(name), Some(count)) = (tok.get(1), tok.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(perr(header_lines, "malformed element line"));
                };
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| perr(header_lines, "property before element"))?;
                let prop = if tok.get(1) == Some(&"list") {
                    match (tok.get(2).and_then(|t| Scalar::parse(t)), tok.get(3).and_then(|t| Scalar::parse(t)), tok.get(4)) {
                        (Some(c), Some(i), Some(name)) => Property::List(name.to_string(), c, i),
                        _ => return Err(perr(header_lines, "malformed list property")),
                    }
                } else {
                    match (tok.get(1).and_then(|t| Scalar::parse(t)), tok.get(2)) {
                        (Some(t), Some(name)) => Property::Scalar(name.to_string(), t),
                        _ => return Err(perr(header_lines, "malformed property")),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(perr(header_lines, format!("unexpected header keyword `{other}`"))),
        }
    }
    let binary = binary.ok_or_else(|| perr(header_lines, "missing format line"))?;

    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();

    // Rows are decoded into plain values first, then interpreted.
    let mut text_lines = if binary {
        None
    } else {
        Some(String::from_utf8_lossy(&bytes[pos..]).lines().map(str::to_string).collect::<Vec<_>>().into_iter())
    };
    let mut row_line = header_lines;

    for el in &elements {
        for row in 0..el.count {
            row_line += 1;
            let mut scalars: Vec<(String, f64, Scalar)> = Vec::new();
            let mut lists: Vec<(String, Vec<f64>)> = Vec::new();
            if let Some(lines) = text_lines.as_mut() {
                let line = lines
                    .next()
                    .ok_or_else(|| perr(row_line, format!("file ends inside element `{}` (row {row})", el.name)))?;
                let mut vals = line.split_whitespace().map(|t| t.parse::<f64>());
                let mut take = || -> Result<f64> {
                    match vals.next() {
                        Some(Ok(v)) => Ok(v),
                        Some(Err(_)) => Err(perr(row_line, "bad number")),
                        None => Err(perr(row_line, "too few values on line")),
                    }
                };
                for p in &el.props {
                    match p {
                        Property::Scalar(n, t) => scalars.push((n.clone(), take()?, *t)),
                        Property::List(n, _, _) => {
                            let k = take()? as usize;
                            let v = (0..k).map(|_| take()).collect::<Result<Vec<_>>>()?;
                            lists.push((n.clone(), v));
                        }
                    }
                }
            } else {
                let mut read = |t: Scalar| -> Result<f64> {
                    let n = t.size();
                    if pos + n > bytes.len() {
                        return Err(perr(
                            header_lines,
                            format!("binary body truncated in element `{}` row {row} (byte {pos})", el.name),
                        ));
                    }
                    let v = t.read(&bytes[pos..pos + n]);
                    pos += n;
                    Ok(v)
                };
                for p in &el.props {
                    match p {
                        Property::Scalar(n, t) => scalars.push((n.clone(), read(*t)?, *t)),
                        Property::List(n, c, i) => {
                            let k = read(*c)? as usize;
                            let v = (0..k).map(|_| read(*i)).collect::<Result<Vec<_>>>()?;
                            lists.push((n.clone(), v));
                        }
                    }
                }
            }
            let line_ref = if binary { header_lines } else { row_line };
            match el.name.as_str() {
                "vertex" => {
                    let get = |name: &str| scalars.iter().find(|s| s.0 == name);
                    let xyz = ["x", "y", "z"].map(get);
                    let [Some(x), Some(y), Some(z)] = xyz else {
                        return Err(perr(line_ref, "vertex without x/y/z"));
                    };
                    vertices.push(Vector3::new(x.1, y.1, z.1));
                    if let [Some(r), Some(g), Some(b)] = ["red", "green", "blue"].map(get) {
                        let scale = if r.2.is_integer() { 1.0 / 255.0 } else { 1.0 };
                        colors.push([r.1 * scale, g.1 * scale, b.1 * scale]);
                    }
                }
                "face" => {
                    let Some((_, idx)) = lists.iter().find(|l| l.0 == "vertex_indices" || l.0 == "vertex_index") else {
                        return Err(perr(line_ref, "face without vertex_indices"));
                    };
                    if idx.len() != 3 {
                        return Err(perr(line_ref, format!("face has {} corners, only triangles are supported", idx.len())));
                    }
                    if idx.iter().any(|&k| k < 0.0) {
                        return Err(perr(line_ref, "negative face index"));
                    }
                    faces.push([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
                }
                _ => {}
            }
        }
    }
    if let Some(k) = faces.iter().flatten().find(|&&k| k >= vertices.len()) {
        return Err(perr(0, format!("face index {k} out of range")));
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if !colors.is_empty() {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

/// Writes a mesh to a PLY file.
pub fn save_ply(mesh: &TriMesh, path: &Path, format: PlyFormat) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&write_ply(mesh, format))?;
    Ok(())
}
