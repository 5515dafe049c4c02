//! Wavefront OBJ reader.
//!
//! Supports `v x y z [r g b]` and `f` records; polygons are fan-triangulated.
//! Normals, texture coordinates, groups, and materials are ignored. Face
//! entries may be `i`, `i/t`, `i/t/n`, or `i//n`, with OBJ's 1-based and
//! negative (relative) indexing.

use std::fs;
use std::path::Path;

use super::Mesh;
use crate::error::{GeodistError, Result};

/// Read a mesh from an OBJ file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| GeodistError::io(path, e))?;
    parse_obj(&src)
}

/// Parse OBJ text.
pub fn parse_obj(src: &str) -> Result<Mesh> {
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (ln, raw) in src.lines().enumerate() {
        let line = ln + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut it = l.split_whitespace();
        match it.next() {
            Some("v") => {
                let fields: Vec<&str> = it.collect();
                if fields.len() != 3 && fields.len() != 6 {
                    return Err(GeodistError::ObjParse {
                        line,
                        msg: format!("vertex record needs 3 or 6 numbers, got {}", fields.len()),
                    });
                }
                let mut vals = [0.0f64; 6];
                for (i, f) in fields.iter().enumerate() {
                    vals[i] = f.parse().map_err(|_| GeodistError::ObjParse {
                        line,
                        msg: format!("bad number `{f}`"),
                    })?;
                }
                vertices.push([vals[0], vals[1], vals[2]]);
                if fields.len() == 6 {
                    colors.push([vals[3], vals[4], vals[5]]);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| parse_face_index(tok, vertices.len(), line))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(GeodistError::ObjParse {
                        line,
                        msg: format!("face needs at least 3 vertices, got {}", idx.len()),
                    });
                }
                // fan triangulation: (0, k, k+1)
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            // vn, vt, o, g, s, usemtl, mtllib, ...
            _ => {}
        }
    }

    if colors.len() != vertices.len() {
        // only some vertices carried colors; treat the mesh as uncolored
        colors.clear();
    }
    let colors = if colors.is_empty() { None } else { Some(colors) };
    Mesh::new(vertices, faces, colors)
}

/// `i`, `i/t`, `i/t/n`, `i//n`; 1-based, negative counts from the end.
fn parse_face_index(tok: &str, n_verts: usize, line: usize) -> Result<u32> {
    let first = tok.split('/').next().unwrap_or("");
    let i: i64 = first.parse().map_err(|_| GeodistError::ObjParse {
        line,
        msg: format!("bad face index `{tok}`"),
    })?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        n_verts as i64 + i
    } else {
        return Err(GeodistError::ObjParse {
            line,
            msg: "face index 0 is invalid (OBJ indices are 1-based)".into(),
        });
    };
    if resolved < 0 || resolved >= n_verts as i64 {
        return Err(GeodistError::ObjParse {
            line,
            msg: format!("face index {i} out of range (mesh has {n_verts} vertices)"),
        });
    }
    Ok(resolved as u32)
}
