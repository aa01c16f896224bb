//! Minimal binary little-endian PLY reading/writing, shared by the Gaussian
//! checkpoint, point-cloud, and mesh formats.

use std::io::{BufRead, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("ply i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ply header: {0}")]
    Header(String),
    #[error("unsupported ply feature: {0}")]
    Unsupported(String),
    #[error("ply element '{element}' is missing property '{property}'")]
    MissingProperty { element: String, property: String },
    #[error("ply file has no element '{0}'")]
    MissingElement(String),
    #[error("truncated ply payload")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Uchar,
    Int,
    Uint,
    Float,
    Double,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        match s {
            "uchar" | "uint8" => Some(Scalar::Uchar),
            "int" | "int32" => Some(Scalar::Int),
            "uint" | "uint32" => Some(Scalar::Uint),
            "float" | "float32" => Some(Scalar::Float),
            "double" | "float64" => Some(Scalar::Double),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scalar::Uchar => "uchar",
            Scalar::Int => "int",
            Scalar::Uint => "uint",
            Scalar::Float => "float",
            Scalar::Double => "double",
        }
    }

    fn read(&self, r: &mut impl Read) -> Result<f64, PlyError> {
        let mut buf = [0u8; 8];
        let n = match self {
            Scalar::Uchar => 1,
            Scalar::Int | Scalar::Uint | Scalar::Float => 4,
            Scalar::Double => 8,
        };
        r.read_exact(&mut buf[..n]).map_err(|_| PlyError::Truncated)?;
        Ok(match self {
            Scalar::Uchar => buf[0] as f64,
            Scalar::Int => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::Uint => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::Float => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::Double => f64::from_le_bytes(buf[..8].try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count_ty: Scalar, item_ty: Scalar },
}

#[derive(Debug)]
pub struct ElementData {
    pub name: String,
    pub count: usize,
    scalar_names: Vec<String>,
    scalars: Vec<Vec<f64>>,
    list_names: Vec<String>,
    lists: Vec<Vec<Vec<u32>>>,
}

impl ElementData {
    pub fn scalar(&self, property: &str) -> Result<&[f64], PlyError> {
        self.scalar_names
            .iter()
            .position(|n| n == property)
            .map(|i| self.scalars[i].as_slice())
            .ok_or_else(|| PlyError::MissingProperty {
                element: self.name.clone(),
                property: property.to_string(),
            })
    }

    pub fn list(&self, property: &str) -> Result<&[Vec<u32>], PlyError> {
        self.list_names
            .iter()
            .position(|n| n == property)
            .map(|i| self.lists[i].as_slice())
            .ok_or_else(|| PlyError::MissingProperty {
                element: self.name.clone(),
                property: property.to_string(),
            })
    }
}

#[derive(Debug)]
pub struct PlyData {
    pub comments: Vec<String>,
    pub elements: Vec<ElementData>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Result<&ElementData, PlyError> {
        self.elements
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| PlyError::MissingElement(name.to_string()))
    }
}

/// Parse a binary little-endian PLY file into per-property columns. Scalar
/// values are widened to f64; list items to u32.
pub fn read_ply(reader: &mut impl BufRead) -> Result<PlyData, PlyError> {
    let mut line = String::new();
    let read_line = |r: &mut dyn BufRead, line: &mut String| -> Result<String, PlyError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(PlyError::Header("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(reader, &mut line)? != "ply" {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let format = read_line(reader, &mut line)?;
    if format != "format binary_little_endian 1.0" {
        return Err(PlyError::Unsupported(format!("format '{format}'")));
    }

    let mut comments = Vec::new();
    let mut elements: Vec<(String, usize, Vec<Property>)> = Vec::new();
    loop {
        let l = read_line(reader, &mut line)?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some("comment") => comments.push(l["comment".len()..].trim().to_string()),
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| PlyError::Header("element without name".into()))?;
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::Header(format!("bad element count in '{l}'")))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let first = parts
                    .next()
                    .ok_or_else(|| PlyError::Header("property without type".into()))?;
                if first == "list" {
                    let count_ty = parts.next().and_then(Scalar::parse);
                    let item_ty = parts.next().and_then(Scalar::parse);
                    let name = parts.next();
                    match (count_ty, item_ty, name) {
                        (Some(c), Some(i), Some(n)) => elem.2.push(Property::List {
                            name: n.to_string(),
                            count_ty: c,
                            item_ty: i,
                        }),
                        _ => return Err(PlyError::Header(format!("bad list property '{l}'"))),
                    }
                } else {
                    let ty = Scalar::parse(first)
                        .ok_or_else(|| PlyError::Unsupported(format!("scalar type '{first}'")))?;
                    let name = parts
                        .next()
                        .ok_or_else(|| PlyError::Header("property without name".into()))?;
                    elem.2.push(Property::Scalar { name: name.to_string(), ty });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(PlyError::Header(format!("unexpected keyword '{other}'"))),
            None => {}
        }
    }

    let mut out = Vec::new();
    for (name, count, props) in elements {
        let mut scalar_names = Vec::new();
        let mut list_names = Vec::new();
        for p in &props {
            match p {
                Property::Scalar { name, .. } => scalar_names.push(name.clone()),
                Property::List { name, .. } => list_names.push(name.clone()),
            }
        }
        let mut scalars = vec![Vec::with_capacity(count); scalar_names.len()];
        let mut lists = vec![Vec::with_capacity(count); list_names.len()];
        for _ in 0..count {
            let mut si = 0;
            let mut li = 0;
            for p in &props {
                match p {
                    Property::Scalar { ty, .. } => {
                        scalars[si].push(ty.read(reader)?);
                        si += 1;
                    }
                    Property::List { count_ty, item_ty, .. } => {
                        let n = count_ty.read(reader)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item_ty.read(reader)? as u32);
                        }
                        lists[li].push(items);
                        li += 1;
                    }
                }
            }
        }
        out.push(ElementData { name, count, scalar_names, scalars, list_names, lists });
    }
    Ok(PlyData { comments, elements: out })
}

/// Writes the header of a binary little-endian PLY file.
pub fn write_header(
    w: &mut impl Write,
    comments: &[String],
    elements: &[(&str, usize, Vec<(&str, Scalar)>)],
    list_elements: &[(&str, usize, &str)],
) -> Result<(), PlyError> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    for c in comments {
        writeln!(w, "comment {c}")?;
    }
    for (name, count, props) in elements {
        writeln!(w, "element {name} {count}")?;
        for (pname, ty) in props {
            writeln!(w, "property {} {pname}", ty.name())?;
        }
    }
    for (name, count, pname) in list_elements {
        writeln!(w, "element {name} {count}")?;
        writeln!(w, "property list uchar int {pname}")?;
    }
    writeln!(w, "end_header")?;
    Ok(())
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<(), PlyError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u8(w: &mut impl Write, v: u8) -> Result<(), PlyError> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn write_i32(w: &mut impl Write, v: i32) -> Result<(), PlyError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}
