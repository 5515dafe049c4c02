//! Point-set file formats: binary little-endian PLY and plain XYZ text.
//!
//! Every file starts with a provenance line (tool version + config hash) so
//! outputs can be traced back to the run that produced them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PointSet;
use crate::error::{GeodistError, Result};

/// Tool version + config hash stamped into every output file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
        }
    }

    fn line(&self) -> String {
        format!("geodist {} config={}", self.version, self.config_hash)
    }
}

/// Write a point set as binary little-endian PLY.
///
/// Positions become `float x/y/z`; a d=6 set adds `float red/green/blue`
/// (values in [0, 1]); `extra` adds one more float property per point,
/// e.g. a per-point error column for heatmap rendering.
pub fn write_ply(
    path: impl AsRef<Path>,
    points: &PointSet,
    extra: Option<(&str, &[f64])>,
    prov: &Provenance,
) -> Result<()> {
    let path = path.as_ref();
    if let Some((_, vals)) = extra {
        if vals.len() != points.len() {
            return Err(GeodistError::LengthMismatch {
                expected: points.len(),
                got: vals.len(),
            });
        }
    }
    let file = File::create(path).map_err(|e| GeodistError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment {}\n", prov.line()));
    header.push_str(&format!("element vertex {}\n", points.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if points.channels() == 6 {
        header.push_str("property float red\nproperty float green\nproperty float blue\n");
    }
    if let Some((name, _)) = extra {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())
        .map_err(|e| GeodistError::io(path, e))?;

    let d = points.channels();
    let mut buf = Vec::with_capacity(points.len() * (d + extra.is_some() as usize) * 4);
    for i in 0..points.len() {
        for &v in points.row(i) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some((_, vals)) = extra {
            buf.extend_from_slice(&(vals[i] as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| GeodistError::io(path, e))?;
    w.flush().map_err(|e| GeodistError::io(path, e))?;
    Ok(())
}

/// Read a binary little-endian PLY produced by [`write_ply`] (or any PLY
/// whose vertex element is all-float and starts with x, y, z).
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GeodistError::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut header_props: Vec<String> = Vec::new();
    let mut count: usize = 0;
    let mut line = String::new();
    let mut saw_format = false;
    loop {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| GeodistError::io(path, e))?;
        if n == 0 {
            return Err(GeodistError::PlyParse("unexpected end of header".into()));
        }
        let l = line.trim_end();
        if l == "ply" || l.starts_with("comment") {
            continue;
        }
        if l.starts_with("format") {
            if l != "format binary_little_endian 1.0" {
                return Err(GeodistError::PlyParse(format!("unsupported format `{l}`")));
            }
            saw_format = true;
        } else if let Some(rest) = l.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let name = it.next().unwrap_or("");
            if name != "vertex" {
                return Err(GeodistError::PlyParse(format!(
                    "only vertex elements are supported, got `{name}`"
                )));
            }
            count = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| GeodistError::PlyParse("bad element count".into()))?;
        } else if let Some(rest) = l.strip_prefix("property ") {
            let mut it = rest.split_whitespace();
            let ty = it.next().unwrap_or("");
            if ty != "float" && ty != "float32" {
                return Err(GeodistError::PlyParse(format!(
                    "only float properties are supported, got `{ty}`"
                )));
            }
            header_props.push(it.next().unwrap_or("").to_string());
        } else if l == "end_header" {
            break;
        }
    }
    if !saw_format {
        return Err(GeodistError::PlyParse("missing format line".into()));
    }
    if header_props.len() < 3 || header_props[..3] != ["x", "y", "z"] {
        return Err(GeodistError::PlyParse(
            "vertex element must start with float x, y, z".into(),
        ));
    }

    let stride = header_props.len();
    let has_rgb = stride >= 6 && header_props[3..6] == ["red", "green", "blue"];
    let d = if has_rgb { 6 } else { 3 };

    let mut raw = vec![0u8; count * stride * 4];
    r.read_exact(&mut raw).map_err(|e| GeodistError::io(path, e))?;
    let mut data = Vec::with_capacity(count * d);
    for i in 0..count {
        for j in 0..d {
            let off = (i * stride + j) * 4;
            let v = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap());
            data.push(v as f64);
        }
    }
    PointSet::new(d, data)
}

/// Write a point set as whitespace-separated text, one point per line.
pub fn write_xyz(path: impl AsRef<Path>, points: &PointSet, prov: &Provenance) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| GeodistError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# {}", prov.line()).map_err(|e| GeodistError::io(path, e))?;
    for i in 0..points.len() {
        let row = points.row(i);
        let line = row
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{line}").map_err(|e| GeodistError::io(path, e))?;
    }
    w.flush().map_err(|e| GeodistError::io(path, e))?;
    Ok(())
}

/// Read XYZ text (3 or 6 columns; `#` lines skipped).
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GeodistError::io(path, e))?;
    let r = BufReader::new(file);
    let mut d = 0usize;
    let mut data = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GeodistError::io(path, e))?;
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| GeodistError::PointParse {
                    line: ln + 1,
                    msg: format!("bad number `{t}`"),
                })
            })
            .collect::<Result<_>>()?;
        if d == 0 {
            d = vals.len();
            if d != 3 && d != 6 {
                return Err(GeodistError::PointParse {
                    line: ln + 1,
                    msg: format!("expected 3 or 6 columns, got {d}"),
                });
            }
        } else if vals.len() != d {
            return Err(GeodistError::PointParse {
                line: ln + 1,
                msg: format!("expected {d} columns, got {}", vals.len()),
            });
        }
        data.extend(vals);
    }
    PointSet::new(if d == 0 { 3 } else { d }, data)
}

/// Read a point file by extension: `.ply` binary, anything else XYZ text.
pub fn read_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance::new("deadbeef")
    }

    #[test]
    fn ply_roundtrip_d3() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.ply");
        let ps = PointSet::new(3, vec![1.0, 2.0, 3.0, -0.5, 0.25, 8.0]).unwrap();
        write_ply(&p, &ps, None, &prov()).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.data().iter().zip(ps.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ply_roundtrip_d6_with_extra() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.ply");
        let ps = PointSet::new(6, vec![1.0, 2.0, 3.0, 0.1, 0.2, 0.3]).unwrap();
        write_ply(&p, &ps, Some(("error", &[0.5])), &prov()).unwrap();
        // reader keeps x,y,z,red,green,blue and skips the trailing error column
        let back = read_ply(&p).unwrap();
        assert_eq!(back.channels(), 6);
        for (a, b) in back.data().iter().zip(ps.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_ply_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ply");
        write_ply(&p, &PointSet::empty(3), None, &prov()).unwrap();
        let back = read_ply(&p).unwrap();
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn xyz_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.xyz");
        let ps = PointSet::new(3, vec![1.5, -2.0, 3.25, 0.0, 1.0, 2.0]).unwrap();
        write_xyz(&p, &ps, &prov()).unwrap();
        let back = read_xyz(&p).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn provenance_is_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.xyz");
        write_xyz(&p, &PointSet::empty(3), &prov()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# geodist"));
        assert!(text.contains("config=deadbeef"));
    }
}
