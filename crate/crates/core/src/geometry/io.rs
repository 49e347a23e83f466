//! PLY point clouds (ascii and binary little endian) and OFF meshes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::cloud::{PointCloud, Vec3};
use super::mesh::Mesh;
use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
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

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn read_le(self, b: &[u8]) -> f64 {
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_err(location: Location, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(Location::Line(line_no + 1), "unterminated header"))?;
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(Location::Line(line_no), "header is not valid utf-8"))?
            .trim_end_matches('\r')
            .trim();
        let loc = Location::Line(line_no);
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else { continue };
        if line_no == 1 {
            if key != "ply" {
                return Err(parse_err(loc, "missing 'ply' magic"));
            }
            continue;
        }
        match key {
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => return Err(parse_err(loc, format!("unsupported format {}", other.unwrap_or("")))),
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tok.next().ok_or_else(|| parse_err(loc, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(loc, "element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements.last_mut().ok_or_else(|| parse_err(loc, "property before any element"))?;
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if !count.is_float() => el.properties.push(Property::List { count, item }),
                        _ => return Err(parse_err(loc, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| parse_err(loc, format!("unknown type '{ty}'")))?;
                    let name = tok.next().ok_or_else(|| parse_err(loc, "property without name"))?;
                    el.properties.push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            "end_header" => break,
            other => return Err(parse_err(loc, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(Location::Line(line_no), "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: pos,
        body_line: line_no,
    })
}

struct VertexLayout {
    xyz: [usize; 3],
    label: Option<usize>,
}

fn vertex_layout(el: &Element, header_line: usize) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.properties.iter().position(|p| match p {
            Property::Scalar { name, .. } => name == want,
            Property::List { .. } => false,
        })
    };
    let mut xyz = [0; 3];
    for (slot, axis) in xyz.iter_mut().zip(["x", "y", "z"]) {
        let i = find(axis).ok_or_else(|| parse_err(Location::Line(header_line), format!("vertex element lacks property '{axis}'")))?;
        if let Property::Scalar { ty, .. } = el.properties[i] {
            if !ty.is_float() {
                return Err(parse_err(
                    Location::Line(header_line),
                    format!("vertex property '{axis}' must be float or double"),
                ));
            }
        }
        *slot = i;
    }
    let label = find("label");
    if let Some(i) = label {
        if let Property::Scalar { ty, .. } = el.properties[i] {
            if ty.is_float() {
                return Err(parse_err(Location::Line(header_line), "label property must be an integer type"));
            }
        }
    }
    Ok(VertexLayout { xyz, label })
}

fn finish_vertex(values: &[f64], layout: &VertexLayout, loc: Location) -> Result<(Vec3, Option<u32>)> {
    let p = Vec3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]);
    if !p.iter().all(|c| c.is_finite()) {
        return Err(parse_err(loc, "non-finite coordinate"));
    }
    let label = match layout.label {
        Some(i) => {
            let v = values[i];
            if v < 0.0 {
                return Err(parse_err(loc, "negative label"));
            }
            Some(v as u32)
        }
        None => None,
    };
    Ok((p, label))
}

/// Parses a PLY document holding a `vertex` element with `x`, `y`, `z`.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vertex_idx = header.elements.iter().position(|e| e.name == "vertex").ok_or(Error::EmptyCloud)?;
    let vertex_el = &header.elements[vertex_idx];
    if vertex_el.count == 0 {
        return Err(Error::EmptyCloud);
    }
    let layout = vertex_layout(vertex_el, header.body_line)?;
    let mut points = Vec::with_capacity(vertex_el.count);
    let mut labels = layout.label.map(|_| Vec::with_capacity(vertex_el.count));
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|e| {
                parse_err(
                    Location::Byte((header.body_offset + e.valid_up_to()) as u64),
                    "ascii body is not valid utf-8",
                )
            })?;
            let mut lines = text
                .lines()
                .enumerate()
                .map(|(i, l)| (header.body_line + 1 + i, l.trim()))
                .filter(|(_, l)| !l.is_empty());
            for el in &header.elements[..=vertex_idx] {
                for _ in 0..el.count {
                    let (line_no, line) = lines
                        .next()
                        .ok_or_else(|| parse_err(Location::Line(header.body_line), format!("truncated '{}' data", el.name)))?;
                    if el.name != "vertex" {
                        continue;
                    }
                    let loc = Location::Line(line_no);
                    let mut tok = line.split_whitespace();
                    let mut values = Vec::with_capacity(el.properties.len());
                    for prop in &el.properties {
                        let mut next = || -> Result<f64> {
                            tok.next()
                                .ok_or_else(|| parse_err(loc, "too few values"))?
                                .parse::<f64>()
                                .map_err(|_| parse_err(loc, "malformed number"))
                        };
                        match prop {
                            Property::Scalar { .. } => values.push(next()?),
                            Property::List { .. } => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                                values.push(f64::NAN);
                            }
                        }
                    }
                    let (p, l) = finish_vertex(&values, &layout, loc)?;
                    points.push(p);
                    if let (Some(ls), Some(l)) = (&mut labels, l) {
                        ls.push(l);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = 0usize;
            let base = header.body_offset as u64;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = body
                    .get(*pos..*pos + n)
                    .ok_or_else(|| parse_err(Location::Byte(base + *pos as u64), "unexpected end of data"))?;
                *pos += n;
                Ok(s)
            };
            for el in &header.elements[..=vertex_idx] {
                for _ in 0..el.count {
                    let start = base + pos as u64;
                    let mut values = Vec::with_capacity(el.properties.len());
                    for prop in &el.properties {
                        match *prop {
                            Property::Scalar { ty, .. } => values.push(ty.read_le(take(&mut pos, ty.size())?)),
                            Property::List { count, item } => {
                                let n = count.read_le(take(&mut pos, count.size())?) as usize;
                                take(&mut pos, n * item.size())?;
                                values.push(f64::NAN);
                            }
                        }
                    }
                    if el.name != "vertex" {
                        continue;
                    }
                    let (p, l) = finish_vertex(&values, &layout, Location::Byte(start))?;
                    points.push(p);
                    if let (Some(ls), Some(l)) = (&mut labels, l) {
                        ls.push(l);
                    }
                }
            }
        }
    }
    PointCloud::with_labels(points, labels)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serializes with `double` coordinates so values round-trip exactly.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if cloud.labels.is_some() {
        out.extend_from_slice(b"property int label\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
                if cloud.labels.is_some() {
                    let _ = write!(out, " {}", cloud.label(i));
                }
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if cloud.labels.is_some() {
                    out.extend_from_slice(&(cloud.label(i) as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ply(cloud, format)).map_err(|e| Error::io(path, e))
}

/// Parses an OFF mesh; polygons are fan-triangulated.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (first_no, first) = lines.next().ok_or_else(|| parse_err(Location::Line(1), "empty OFF file"))?;
    // counts may share the magic line: "OFF 8 6 0"
    let counts_line = if let Some(rest) = first.strip_prefix("OFF") {
        if rest.trim().is_empty() {
            lines.next().ok_or_else(|| parse_err(Location::Line(first_no), "missing counts"))?
        } else {
            (first_no, rest.trim())
        }
    } else {
        return Err(parse_err(Location::Line(first_no), "missing 'OFF' magic"));
    };
    let counts: Vec<usize> = counts_line
        .1
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(Location::Line(counts_line.0), "malformed counts"))?;
    if counts.len() < 2 {
        return Err(parse_err(Location::Line(counts_line.0), "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut mesh = Mesh::default();
    for _ in 0..nv {
        let (no, l) = lines
            .next()
            .ok_or_else(|| parse_err(Location::Line(counts_line.0), "truncated vertex list"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(Location::Line(no), "malformed vertex"))?;
        if v.len() < 3 || !v.iter().all(|c| c.is_finite()) {
            return Err(parse_err(Location::Line(no), "malformed vertex"));
        }
        mesh.vertices.push(Vec3::new(v[0], v[1], v[2]));
    }
    for _ in 0..nf {
        let (no, l) = lines
            .next()
            .ok_or_else(|| parse_err(Location::Line(counts_line.0), "truncated face list"))?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(Location::Line(no), "malformed face"))?;
        let n = *f.first().ok_or_else(|| parse_err(Location::Line(no), "empty face"))?;
        if n < 3 || f.len() < n + 1 {
            return Err(parse_err(Location::Line(no), "face needs at least 3 indices"));
        }
        let idx = &f[1..=n];
        if idx.iter().any(|&i| i >= nv) {
            return Err(parse_err(Location::Line(no), "face index out of range"));
        }
        for k in 1..n - 1 {
            mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(mesh)
}

pub fn read_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text)
}

pub fn encode_off(mesh: &Mesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        s.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    s
}

pub fn write_off(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_off(mesh)).map_err(|e| Error::io(path, e))
}
