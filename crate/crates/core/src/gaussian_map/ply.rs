//! Binary little-endian PLY in the layout written by 3DGS training code.
//!
//! Scales are stored as natural logs, opacity before the logistic sigmoid,
//! rotations as `rot_0..3 = (w, x, y, z)`, and the non-DC SH coefficients
//! channel-major in `f_rest_*`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::sh::{coeffs_for_degree, degree_for_coeffs, MAX_SH_DEGREE};
use super::{Gaussian3D, GaussianMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => f64::from(b[0] as i8),
            Self::U8 => f64::from(b[0]),
            Self::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Self::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Self::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    stride: usize,
    properties: Vec<Property>,
}

impl Header {
    fn offset_of(&self, name: &str) -> Result<(usize, ScalarType)> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .map(|p| (p.offset, p.ty))
            .ok_or_else(|| Error::Format(format!("missing required PLY property '{name}'")))
    }
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::Format(format!("reading PLY header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("unexpected end of PLY header".into()));
        }
        Ok(line.trim().to_string())
    };

    if next_line(reader)? != "ply" {
        return Err(Error::Format("not a PLY file (missing magic)".into()));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0;
    loop {
        let l = next_line(reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!(
                        "unsupported PLY format '{fmt}', expected binary_little_endian"
                    )));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if vertex_count.is_some() {
                    // Elements after the vertex block are never read.
                    in_vertex = false;
                    continue;
                }
                if *name != "vertex" {
                    return Err(Error::Format(format!(
                        "unsupported PLY element '{name}' before vertex data"
                    )));
                }
                let n = count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad vertex count '{count}'")))?;
                vertex_count = Some(n);
                in_vertex = true;
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::Format("list properties are not supported".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| Error::Format(format!("unknown PLY type '{ty}'")))?;
                    properties.push(Property {
                        name: (*name).to_string(),
                        ty,
                        offset: stride,
                    });
                    stride += ty.size();
                }
            }
            _ => return Err(Error::Format(format!("unrecognized PLY header line '{l}'"))),
        }
    }
    let vertex_count =
        vertex_count.ok_or_else(|| Error::Format("PLY has no vertex element".into()))?;
    Ok(Header {
        vertex_count,
        stride,
        properties,
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Read a splat map from any reader.
pub fn read_ply<R: Read>(reader: R) -> Result<GaussianMap> {
    let mut reader = BufReader::new(reader);
    let header = read_header(&mut reader)?;
    if header.vertex_count == 0 {
        return Err(Error::EmptyMap);
    }

    let rest_count = header
        .properties
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    let coeffs = rest_count / 3 + 1;
    let degree = match degree_for_coeffs(coeffs) {
        Some(d) if rest_count % 3 == 0 => d,
        _ if rest_count % 3 == 0 && coeffs > coeffs_for_degree(MAX_SH_DEGREE) => {
            return Err(Error::Format(format!(
                "SH degree above {MAX_SH_DEGREE} is not supported ({rest_count} f_rest properties)"
            )))
        }
        _ => {
            return Err(Error::Format(format!(
                "{rest_count} f_rest properties do not form a valid SH degree"
            )))
        }
    };

    let lookup = |name: &str| header.offset_of(name);
    let pos = [lookup("x")?, lookup("y")?, lookup("z")?];
    let dc = [lookup("f_dc_0")?, lookup("f_dc_1")?, lookup("f_dc_2")?];
    let rest = (0..rest_count)
        .map(|i| lookup(&format!("f_rest_{i}")))
        .collect::<Result<Vec<_>>>()?;
    let opacity = lookup("opacity")?;
    let scale = [lookup("scale_0")?, lookup("scale_1")?, lookup("scale_2")?];
    let rot = [
        lookup("rot_0")?,
        lookup("rot_1")?,
        lookup("rot_2")?,
        lookup("rot_3")?,
    ];

    let mut buf = vec![0u8; header.stride];
    let mut gaussians = Vec::with_capacity(header.vertex_count);
    let per_channel = coeffs - 1;
    for i in 0..header.vertex_count {
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated PLY body at vertex {i}: {e}")))?;
        let get = |(off, ty): (usize, ScalarType)| ty.read(&buf[off..]);

        let mut sh = vec![[0.0; 3]; coeffs];
        for ch in 0..3 {
            sh[0][ch] = get(dc[ch]);
            for k in 0..per_channel {
                sh[k + 1][ch] = get(rest[ch * per_channel + k]);
            }
        }
        let q = Quaternion::new(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3]));
        if q.norm() == 0.0 {
            return Err(Error::Format(format!("vertex {i}: zero rotation quaternion")));
        }
        gaussians.push(Gaussian3D {
            mean: Vector3::new(get(pos[0]), get(pos[1]), get(pos[2])),
            rotation: UnitQuaternion::new_normalize(q),
            scale: Vector3::new(get(scale[0]).exp(), get(scale[1]).exp(), get(scale[2]).exp()),
            opacity: sigmoid(get(opacity)),
            sh,
        });
    }
    debug_assert_eq!(gaussians.first().map(|g| g.sh.len()), Some(coeffs_for_degree(degree)));
    GaussianMap::new(gaussians)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(file)
}

/// Write a splat map as float32 properties.
pub fn write_ply<W: Write>(map: &GaussianMap, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let coeffs = map.gaussians()[0].sh.len();
    let per_channel = coeffs - 1;

    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", map.len()));
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");

    let io = |e| Error::Format(format!("writing PLY: {e}"));
    w.write_all(header.as_bytes()).map_err(io)?;
    let mut row = Vec::with_capacity(names.len());
    for g in map.gaussians() {
        row.clear();
        row.extend(g.mean.iter().copied());
        row.extend([0.0; 3]);
        row.extend(g.sh[0]);
        for ch in 0..3 {
            row.extend(g.sh[1..].iter().map(|c| c[ch]));
        }
        row.push(logit(g.opacity));
        row.extend(g.scale.iter().map(|s| s.ln()));
        let q = g.rotation.quaternion();
        row.extend([q.w, q.i, q.j, q.k]);
        for v in &row {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn save_ply(map: &GaussianMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply(map, file)
}
