//! Plain-text formats: whitespace-separated point rows, label files and
//! feature tables.
//!
//! Point files start with a comment naming the columns, e.g.
//! `# x y z r g b label`. Without it, the column count decides: 3 (xyz),
//! 4 (xyz label), 6 (xyz rgb) or 7 (xyz rgb label).

use std::fmt::Write as _;

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    X,
    Y,
    Z,
    R,
    G,
    B,
    Label,
    Intensity,
}

fn column(name: &str) -> Option<Column> {
    Some(match name {
        "x" => Column::X,
        "y" => Column::Y,
        "z" => Column::Z,
        "r" | "red" => Column::R,
        "g" | "green" => Column::G,
        "b" | "blue" => Column::B,
        "label" | "class" => Column::Label,
        "intensity" => Column::Intensity,
        _ => return None,
    })
}

fn default_columns(n: usize) -> Option<Vec<Column>> {
    use Column::*;
    Some(match n {
        3 => vec![X, Y, Z],
        4 => vec![X, Y, Z, Label],
        6 => vec![X, Y, Z, R, G, B],
        7 => vec![X, Y, Z, R, G, B, Label],
        _ => return None,
    })
}

fn parse_label(tok: &str) -> Option<ClassId> {
    let v: i64 = tok.parse().ok()?;
    if v < 0 || v == u16::MAX as i64 {
        Some(ClassId::UNLABELED)
    } else if v < u16::MAX as i64 {
        Some(ClassId(v as u16))
    } else {
        None
    }
}

fn format_label(l: ClassId) -> String {
    if l.is_labeled() {
        l.0.to_string()
    } else {
        "-1".into()
    }
}

pub fn read_xyz(text: &str) -> Result<PointCloud> {
    let mut columns: Option<Vec<Column>> = None;
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut intensity = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let perr = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if columns.is_none() && positions.is_empty() {
                let parsed: Option<Vec<Column>> = comment.split_whitespace().map(column).collect();
                if let Some(cols) = parsed.filter(|c| !c.is_empty()) {
                    for need in [Column::X, Column::Y, Column::Z] {
                        if !cols.contains(&need) {
                            return Err(perr(format!("column header lacks {need:?}")));
                        }
                    }
                    columns = Some(cols);
                }
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if columns.is_none() {
            columns =
                Some(default_columns(toks.len()).ok_or_else(|| {
                    perr(format!("cannot infer meaning of {} columns", toks.len()))
                })?);
        }
        let cols = columns.as_ref().unwrap();
        if toks.len() != cols.len() {
            return Err(perr(format!(
                "expected {} values, found {}",
                cols.len(),
                toks.len()
            )));
        }
        let mut p = [0.0; 3];
        let mut c = [0u8; 3];
        for (tok, col) in toks.iter().zip(cols) {
            let num = || {
                tok.parse::<f64>()
                    .map_err(|_| perr(format!("bad number {tok:?}")))
            };
            let byte = || {
                tok.parse::<u8>()
                    .map_err(|_| perr(format!("bad color {tok:?}")))
            };
            match col {
                Column::X => p[0] = num()?,
                Column::Y => p[1] = num()?,
                Column::Z => p[2] = num()?,
                Column::R => c[0] = byte()?,
                Column::G => c[1] = byte()?,
                Column::B => c[2] = byte()?,
                Column::Intensity => intensity.push(num()? as f32),
                Column::Label => {
                    labels.push(parse_label(tok).ok_or_else(|| perr(format!("bad label {tok:?}")))?)
                }
            }
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(perr("non-finite coordinate".into()));
        }
        positions.push(p);
        colors.push(c);
    }
    let cols = columns.unwrap_or_default();
    let mut cloud = PointCloud::new(positions)?;
    if cols.contains(&Column::R) && cols.contains(&Column::G) && cols.contains(&Column::B) {
        cloud = cloud.with_colors(colors)?;
    }
    if cols.contains(&Column::Label) {
        cloud = cloud.with_labels(labels)?;
    }
    if cols.contains(&Column::Intensity) {
        cloud = cloud.with_intensity(intensity)?;
    }
    Ok(cloud)
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::from("# x y z");
    if cloud.colors().is_some() {
        out.push_str(" r g b");
    }
    if cloud.intensity().is_some() {
        out.push_str(" intensity");
    }
    if cloud.labels().is_some() {
        out.push_str(" label");
    }
    out.push('\n');
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.positions()[i];
        let _ = write!(out, "{x} {y} {z}");
        if let Some(c) = cloud.colors() {
            let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        if let Some(v) = cloud.intensity() {
            let _ = write!(out, " {}", v[i]);
        }
        if let Some(l) = cloud.labels() {
            let _ = write!(out, " {}", format_label(l[i]));
        }
        out.push('\n');
    }
    out
}

/// One class id per line; `-1` marks an unlabeled point.
pub fn write_labels(labels: &[ClassId]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for &l in labels {
        out.push_str(&format_label(l));
        out.push('\n');
    }
    out
}

pub fn read_labels(text: &str) -> Result<Vec<ClassId>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(i, l)| {
            parse_label(l.trim()).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("bad label {:?}", l.trim()),
            })
        })
        .collect()
}

/// Numeric table with a `# name name ...` header line.
pub fn write_table(names: &[String], cols: usize, data: &[f64]) -> String {
    let mut out = format!("# {}\n", names.join(" "));
    for row in data.chunks(cols.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`write_table`]: column names and row-major values.
pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let mut names: Option<Vec<String>> = None;
    let mut data = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        if let Some(h) = line.strip_prefix('#') {
            if names.is_none() {
                names = Some(h.split_whitespace().map(str::to_string).collect());
            }
            continue;
        }
        let names = names
            .as_ref()
            .ok_or_else(|| perr("table has no header line".into()))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| perr(format!("bad number {tok:?}")))?,
            );
        }
        if data.len() - before != names.len() {
            return Err(perr(format!(
                "expected {} values, found {}",
                names.len(),
                data.len() - before
            )));
        }
    }
    Ok((names.unwrap_or_default(), data))
}
