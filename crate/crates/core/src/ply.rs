//! ASCII PLY subset: a `vertex` element with `x y z` and optional
//! `nx ny nz`, and an optional `face` element holding triangle lists.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::ObjectModel;

#[derive(Debug, Default)]
struct Header {
    vertex_count: usize,
    vertex_props: Vec<String>,
    face_count: usize,
    has_face_element: bool,
}

fn format_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("PLY line {line}: {msg}"))
}

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16", "uint16",
    "int32", "uint32", "float32", "float64",
];

/// Parses PLY text into a model with the given class id and name.
pub fn parse_ply(text: &str, class_id: u16, name: &str) -> Result<ObjectModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::Format("missing `ply` magic".into())),
    }
    let mut header = Header::default();
    let mut current: Option<&str> = None;
    let mut saw_format = false;
    loop {
        let (n, line) = lines.next().ok_or_else(|| Error::Format("missing end_header".into()))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => return Err(format_err(n, format!("unsupported format `{other}`"))),
            ["element", "vertex", count] => {
                if header.vertex_count > 0 || current.is_some() {
                    return Err(format_err(n, "vertex element must come first and only once"));
                }
                header.vertex_count = count.parse().map_err(|_| format_err(n, "bad vertex count"))?;
                current = Some("vertex");
            }
            ["element", "face", count] => {
                if current != Some("vertex") {
                    return Err(format_err(n, "face element must follow the vertex element"));
                }
                header.face_count = count.parse().map_err(|_| format_err(n, "bad face count"))?;
                header.has_face_element = true;
                current = Some("face");
            }
            ["element", other, ..] => return Err(format_err(n, format!("unsupported element `{other}`"))),
            ["property", "list", count_ty, idx_ty, name] => {
                if current != Some("face") || !matches!(*name, "vertex_indices" | "vertex_index") {
                    return Err(format_err(n, format!("unsupported list property `{name}`")));
                }
                if !SCALAR_TYPES.contains(count_ty) || !SCALAR_TYPES.contains(idx_ty) {
                    return Err(format_err(n, "unknown list property type"));
                }
            }
            ["property", ty, name] => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(format_err(n, format!("unknown property type `{ty}`")));
                }
                match current {
                    Some("vertex") => header.vertex_props.push((*name).to_string()),
                    _ => return Err(format_err(n, "scalar property outside the vertex element")),
                }
            }
            ["end_header"] => break,
            _ => return Err(format_err(n, format!("unrecognized header line `{line}`"))),
        }
    }
    if !saw_format {
        return Err(Error::Format("missing `format ascii 1.0` line".into()));
    }
    let pos = |name: &str| header.vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Format("vertex element lacks x y z".into())),
    };
    let normal_idx = match (pos("nx"), pos("ny"), pos("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err(Error::Format("partial normal properties".into())),
    };

    let mut data = lines.filter(|(_, l)| !l.is_empty());
    let mut points = Vec::with_capacity(header.vertex_count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(header.vertex_count));
    for _ in 0..header.vertex_count {
        let (n, line) = data.next().ok_or_else(|| Error::Format("truncated vertex data".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| format_err(n, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != header.vertex_props.len() {
            return Err(format_err(n, format!("expected {} values, got {}", header.vertex_props.len(), vals.len())));
        }
        points.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, normals.as_mut()) {
            let v = Vector3::new(vals[a], vals[b], vals[c]);
            let len = v.norm();
            if !(len > 0.0 && len.is_finite()) {
                return Err(format_err(n, "zero-length normal"));
            }
            ns.push(v / len);
        }
    }
    let faces = if header.has_face_element {
        let mut faces = Vec::with_capacity(header.face_count);
        for _ in 0..header.face_count {
            let (n, line) = data.next().ok_or_else(|| Error::Format("truncated face data".into()))?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| format_err(n, format!("bad index `{t}`"))))
                .collect::<Result<_>>()?;
            match idx.as_slice() {
                [3, a, b, c] => faces.push([*a, *b, *c]),
                [k, ..] => return Err(format_err(n, format!("only triangles are supported, got a {k}-gon"))),
                [] => return Err(format_err(n, "empty face")),
            }
        }
        Some(faces)
    } else {
        None
    };
    if let Some((n, _)) = data.next() {
        return Err(format_err(n, "trailing data after the declared elements"));
    }
    ObjectModel::new(class_id, name, points, normals, faces)
}

pub fn read_ply(path: impl AsRef<Path>, class_id: u16) -> Result<ObjectModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    parse_ply(&text, class_id, name)
}

/// Serializes a model as ASCII PLY with round-trip float formatting.
pub fn to_ply_string(model: &ObjectModel) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment {}", model.name);
    let _ = writeln!(s, "element vertex {}", model.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if model.normals().is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if let Some(f) = model.faces() {
        let _ = writeln!(s, "element face {}", f.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    for (i, p) in model.points().iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(n) = model.normals() {
            let _ = write!(s, " {:?} {:?} {:?}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    if let Some(faces) = model.faces() {
        for f in faces {
            let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
        }
    }
    s
}
