//! OBJ meshes, PPM/PGM images and CSV point sets.

use std::fmt::Write as _;
use std::path::Path;

use super::{ImageGrid, SurfaceSample, TriangleMesh};
use crate::{Error, Result, Vec3};

/// ASCII OBJ with `v` (plus RGB when colored), `vn` and `f v//vn` records.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    let normals = mesh.vertex_normals();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
            }
            None => {
                let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
            }
        }
    }
    for n in &normals {
        let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
    }
    for f in &mesh.faces {
        let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::Parse(format!("obj line {}: {what}", lineno + 1));
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<_>>()?;
                match vals.len() {
                    3 => vertices.push(Vec3::new(vals[0], vals[1], vals[2])),
                    6 => {
                        vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                        colors.push([vals[3], vals[4], vals[5]]);
                    }
                    _ => return Err(bad("vertex needs 3 or 6 values")),
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let k: i64 = head.parse().map_err(|_| bad("bad face index"))?;
                        let n = vertices.len() as i64;
                        let k = if k < 0 { n + k } else { k - 1 };
                        if k < 0 || k >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(k as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let colors = if !colors.is_empty() && colors.len() == vertices.len() {
        Some(colors)
    } else if colors.is_empty() {
        None
    } else {
        return Err(Error::Parse("only some vertices carry colors".into()));
    };
    TriangleMesh::with_colors(vertices, faces, colors)
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (3 channels) or PGM (1 channel), 8-bit.
pub fn encode_pnm(img: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match img.channels {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::ShapeMismatch(format!("cannot store {c} channels as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Parse(format!("unsupported PNM magic {m}"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PNM number {s}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    let need = width * height * channels;
    if data.len() < need {
        return Err(Error::Parse(format!("PNM has {} of {need} bytes", data.len())));
    }
    let pixels = data[..need].iter().map(|&b| b as f64 / 255.0).collect();
    ImageGrid::from_pixels(height, width, channels, pixels)
}

pub fn write_pnm(path: &Path, img: &ImageGrid) -> Result<()> {
    std::fs::write(path, encode_pnm(img)?)?;
    Ok(())
}

pub fn read_pnm(path: &Path) -> Result<ImageGrid> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn samples_csv(samples: &[SurfaceSample]) -> String {
    let mut s = String::from("x,y,z,nx,ny,nz\n");
    for p in samples {
        let (a, n) = (p.position, p.normal);
        let _ = writeln!(s, "{},{},{},{},{},{}", a.x, a.y, a.z, n.x, n.y, n.z);
    }
    s
}

pub fn parse_samples_csv(text: &str) -> Result<Vec<SurfaceSample>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("x,y,z,nx,ny,nz") {
        return Err(Error::Parse("missing header x,y,z,nx,ny,nz".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad csv row {l}"))))
                .collect::<Result<_>>()?;
            if v.len() != 6 {
                return Err(Error::Parse(format!("csv row needs 6 values: {l}")));
            }
            Ok(SurfaceSample {
                position: Vec3::new(v[0], v[1], v[2]),
                normal: Vec3::new(v[3], v[4], v[5]),
            })
        })
        .collect()
}
