//! PLY 1.0 point clouds, `ascii` and `binary_little_endian`.
//!
//! Only the `vertex` element is read. Recognized properties are `x y z`,
//! `red green blue`, `intensity` and `label` (alias `class`); anything else is
//! skipped. Labels equal to 65535 (or negative) decode to
//! [`ClassId::UNLABELED`].

use std::fmt::Write as _;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            ScalarKind::I8 => "char",
            ScalarKind::U8 => "uchar",
            ScalarKind::I16 => "short",
            ScalarKind::U16 => "ushort",
            ScalarKind::I32 => "int",
            ScalarKind::U32 => "uint",
            ScalarKind::F32 => "float",
            ScalarKind::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarKind::I8 => b[0] as i8 as f64,
            ScalarKind::U8 => b[0] as f64,
            ScalarKind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarKind::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn parse_ascii(self, tok: &str) -> Option<f64> {
        match self {
            ScalarKind::F32 => tok.parse::<f32>().ok().map(f64::from),
            ScalarKind::F64 => tok.parse::<f64>().ok(),
            _ => tok.parse::<i64>().ok().map(|v| v as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub vertex_count: usize,
    pub properties: Vec<(String, ScalarKind)>,
    /// Byte offset of the first body byte.
    pub body_offset: usize,
}

impl PlyHeader {
    fn index_of(&self, names: &[&str]) -> Option<usize> {
        self.properties
            .iter()
            .position(|(n, _)| names.contains(&n.as_str()))
    }
}

/// Parses the header and locates the body.
pub fn parse_header(bytes: &[u8]) -> Result<PlyHeader> {
    let err = |m: String| Error::PlyHeader(m);
    let mut offset = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("unterminated header".into()))?;
        offset += end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| err("header is not valid UTF-8".into()))?;
        Ok(line.trim_end_matches('\r'))
    };

    if next_line()?.trim() != "ply" {
        return Err(err("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    // name and count of the element currently being declared
    let mut current: Option<(String, usize)> = None;
    loop {
        let line = next_line()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match toks.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => return Err(Error::BigEndianPly),
                    other => return Err(err(format!("unknown format {other:?}"))),
                });
                if toks.next() != Some("1.0") {
                    return Err(err("unsupported PLY version".into()));
                }
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| err("element without name".into()))?;
                let count: usize = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(format!("bad count for element {name}")))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(err("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                } else if count > 0 {
                    return Err(err(format!("unsupported non-empty element {name:?}")));
                }
                current = Some((name.to_string(), count));
            }
            Some("property") => {
                let (elem, _) = current
                    .as_ref()
                    .ok_or_else(|| err("property before any element".into()))?;
                let kind = toks
                    .next()
                    .ok_or_else(|| err("property without type".into()))?;
                if elem != "vertex" {
                    continue;
                }
                if kind == "list" {
                    return Err(err("list properties are not supported on vertices".into()));
                }
                let kind = ScalarKind::parse(kind)
                    .ok_or_else(|| err(format!("unknown property type {kind:?}")))?;
                let name = toks
                    .next()
                    .ok_or_else(|| err("property without name".into()))?;
                if properties.iter().any(|(n, _)| n == name) {
                    return Err(err(format!("duplicate property {name:?}")));
                }
                properties.push((name.to_string(), kind));
            }
            Some("end_header") => break,
            Some(other) => return Err(err(format!("unexpected header keyword {other:?}"))),
        }
    }
    let header = PlyHeader {
        format: format.ok_or_else(|| err("missing format line".into()))?,
        vertex_count: vertex_count.ok_or_else(|| err("missing vertex element".into()))?,
        properties,
        body_offset: offset,
    };
    for axis in ["x", "y", "z"] {
        if header.index_of(&[axis]).is_none() {
            return Err(err(format!("missing property {axis}")));
        }
    }
    Ok(header)
}

pub fn read_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    let nprops = header.properties.len();
    let n = header.vertex_count;

    // Decode every vertex into a flat row-major table of f64.
    let mut table = vec![0.0f64; n * nprops];
    match header.format {
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, k)| k.size()).sum();
            let expected = n
                .checked_mul(stride)
                .ok_or_else(|| Error::PlyBody("vertex count overflows".into()))?;
            if body.len() < expected {
                return Err(Error::PlyBody(format!(
                    "body truncated: expected {expected} bytes, found {}",
                    body.len()
                )));
            }
            if body.len() > expected {
                return Err(Error::PlyBody(format!(
                    "{} trailing bytes after the last vertex",
                    body.len() - expected
                )));
            }
            for (v, row) in body.chunks_exact(stride.max(1)).take(n).enumerate() {
                let mut at = 0;
                for (p, (_, kind)) in header.properties.iter().enumerate() {
                    table[v * nprops + p] = kind.decode_le(&row[at..]);
                    at += kind.size();
                }
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::PlyBody("ASCII body is not valid UTF-8".into()))?;
            let mut toks = text.split_ascii_whitespace();
            for v in 0..n {
                for (p, (name, kind)) in header.properties.iter().enumerate() {
                    let tok = toks.next().ok_or_else(|| {
                        Error::PlyBody(format!("body truncated at vertex {v} of {n}"))
                    })?;
                    table[v * nprops + p] = kind.parse_ascii(tok).ok_or_else(|| {
                        Error::PlyBody(format!("bad value {tok:?} for {name} at vertex {v}"))
                    })?;
                }
            }
            if toks.next().is_some() {
                return Err(Error::PlyBody(
                    "unexpected data after the last vertex".into(),
                ));
            }
        }
    }

    let col = |i: usize| table.iter().skip(i).step_by(nprops.max(1)).copied();
    let xi = header.index_of(&["x"]).unwrap();
    let yi = header.index_of(&["y"]).unwrap();
    let zi = header.index_of(&["z"]).unwrap();
    let positions: Vec<[f64; 3]> = col(xi)
        .zip(col(yi))
        .zip(col(zi))
        .map(|((x, y), z)| [x, y, z])
        .collect();
    if let Some(i) = positions
        .iter()
        .position(|p| !p.iter().all(|c| c.is_finite()))
    {
        return Err(Error::PlyBody(format!(
            "vertex {i} has a non-finite coordinate"
        )));
    }
    let mut cloud = PointCloud::new(positions)?;

    let rgb = [
        header.index_of(&["red"]),
        header.index_of(&["green"]),
        header.index_of(&["blue"]),
    ];
    if let [Some(r), Some(g), Some(b)] = rgb {
        let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        let colors = col(r)
            .zip(col(g))
            .zip(col(b))
            .map(|((r, g), b)| [to_u8(r), to_u8(g), to_u8(b)])
            .collect();
        cloud = cloud.with_colors(colors)?;
    }
    if let Some(i) = header.index_of(&["intensity"]) {
        cloud = cloud.with_intensity(col(i).map(|v| v as f32).collect())?;
    }
    if let Some(i) = header.index_of(&["label", "class"]) {
        let labels = col(i)
            .enumerate()
            .map(|(v, l)| {
                decode_label(l).ok_or_else(|| {
                    Error::PlyBody(format!("label {l} at vertex {v} is not a valid class id"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cloud = cloud.with_labels(labels)?;
    }
    Ok(cloud)
}

fn decode_label(v: f64) -> Option<ClassId> {
    if v < 0.0 || v == u16::MAX as f64 {
        Some(ClassId::UNLABELED)
    } else if v.fract() == 0.0 && v < u16::MAX as f64 {
        Some(ClassId(v as u16))
    } else {
        None
    }
}

/// Label property type: `uchar` when every label fits below 256 and no point
/// is unlabeled, `ushort` otherwise.
fn label_kind(labels: &[ClassId]) -> ScalarKind {
    if labels.iter().all(|l| l.is_labeled() && l.0 < 256) {
        ScalarKind::U8
    } else {
        ScalarKind::U16
    }
}

pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let label_kind = cloud.labels().map(label_kind);
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors().is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.intensity().is_some() {
        header.push_str("property float intensity\n");
    }
    if let Some(kind) = label_kind {
        let _ = writeln!(header, "property {} label", kind.name());
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::BinaryLittleEndian => {
            for i in 0..cloud.len() {
                for c in cloud.positions()[i] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(colors) = cloud.colors() {
                    out.extend_from_slice(&colors[i]);
                }
                if let Some(intensity) = cloud.intensity() {
                    out.extend_from_slice(&intensity[i].to_le_bytes());
                }
                if let Some(labels) = cloud.labels() {
                    match label_kind {
                        Some(ScalarKind::U8) => out.push(labels[i].0 as u8),
                        _ => out.extend_from_slice(&labels[i].0.to_le_bytes()),
                    }
                }
            }
        }
        PlyFormat::Ascii => {
            let mut line = String::new();
            for i in 0..cloud.len() {
                line.clear();
                let [x, y, z] = cloud.positions()[i];
                let _ = write!(line, "{x} {y} {z}");
                if let Some(colors) = cloud.colors() {
                    let [r, g, b] = colors[i];
                    let _ = write!(line, " {r} {g} {b}");
                }
                if let Some(intensity) = cloud.intensity() {
                    let _ = write!(line, " {}", intensity[i]);
                }
                if let Some(labels) = cloud.labels() {
                    let _ = write!(line, " {}", labels[i].0);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    out
}
