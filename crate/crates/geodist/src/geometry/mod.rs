//! Mesh ingestion, normalization, surface sampling, and distance queries.

mod distance;
pub mod io;
mod obj;
mod sample;
pub mod shapes;

pub use distance::{point_mesh_closest, point_mesh_distance, point_triangle_closest, MeshBvh};
pub use obj::{load_mesh, parse_obj};
pub use sample::{normalize_mesh, sample_surface, sample_surface_colored, NormTransform};

use crate::error::{GeodistError, Result};

/// Faces with area below this (in normalized units) are excluded from the
/// area-weighted sampler.
pub const DEGENERATE_AREA: f64 = 1e-12;

pub(crate) mod vec3 {
    pub type V3 = [f64; 3];

    #[inline]
    pub fn sub(a: V3, b: V3) -> V3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    #[inline]
    pub fn add(a: V3, b: V3) -> V3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn scale(a: V3, s: f64) -> V3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    #[inline]
    pub fn dot(a: V3, b: V3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn cross(a: V3, b: V3) -> V3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn norm_sq(a: V3) -> f64 {
        dot(a, a)
    }

    #[inline]
    pub fn norm(a: V3) -> f64 {
        norm_sq(a).sqrt()
    }

    #[inline]
    pub fn dist_sq(a: V3, b: V3) -> f64 {
        norm_sq(sub(a, b))
    }
}

use vec3::V3;

/// Triangle mesh: vertex positions plus zero-based face indices.
///
/// Faces with repeated vertex indices or exactly zero area are filtered at
/// construction; `dropped_faces` counts them so callers can warn.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<V3>,
    faces: Vec<[u32; 3]>,
    /// Optional per-vertex RGB in [0, 1], from `v x y z r g b` records.
    colors: Option<Vec<V3>>,
    /// Faces removed at construction for being degenerate.
    pub dropped_faces: usize,
}

impl Mesh {
    /// Build a mesh, validating indices and filtering degenerate faces.
    pub fn new(vertices: Vec<V3>, faces: Vec<[u32; 3]>, colors: Option<Vec<V3>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != vertices.len() {
                return Err(GeodistError::LengthMismatch {
                    expected: vertices.len(),
                    got: c.len(),
                });
            }
        }
        let nv = vertices.len() as u32;
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0usize;
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= nv) {
                return Err(GeodistError::ObjParse {
                    line: 0,
                    msg: format!("face {fi} references vertex {} of {nv}", f.iter().max().unwrap()),
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                dropped += 1;
                continue;
            }
            let area = triangle_area(
                vertices[f[0] as usize],
                vertices[f[1] as usize],
                vertices[f[2] as usize],
            );
            if area == 0.0 {
                dropped += 1;
                continue;
            }
            kept.push(*f);
        }
        if kept.is_empty() {
            return Err(GeodistError::EmptyMesh);
        }
        Ok(Mesh {
            vertices,
            faces: kept,
            colors,
            dropped_faces: dropped,
        })
    }

    pub fn vertices(&self) -> &[V3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn colors(&self) -> Option<&[V3]> {
        self.colors.as_deref()
    }

    pub fn triangle(&self, face: usize) -> [V3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        triangle_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    /// Apply `v -> (v - shift) / scale` to every vertex.
    pub fn transformed(&self, shift: V3, scale: f64) -> Mesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                [
                    (v[0] - shift[0]) / scale,
                    (v[1] - shift[1]) / scale,
                    (v[2] - shift[2]) / scale,
                ]
            })
            .collect();
        Mesh {
            vertices,
            faces: self.faces.clone(),
            colors: self.colors.clone(),
            dropped_faces: self.dropped_faces,
        }
    }
}

pub(crate) fn triangle_area(a: V3, b: V3, c: V3) -> f64 {
    0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
}

/// N x d matrix of sample rows. The universal currency between modules.
///
/// d = 3 holds positions; d = 6 holds positions plus RGB in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    d: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d != 3 && d != 6 {
            return Err(GeodistError::Config(format!(
                "point channel count must be 3 or 6, got {d}"
            )));
        }
        if data.len() % d != 0 {
            return Err(GeodistError::LengthMismatch {
                expected: (data.len() / d) * d,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GeodistError::NonFinite {
                context: "PointSet",
            });
        }
        Ok(PointSet { d, data })
    }

    pub fn empty(d: usize) -> Self {
        PointSet { d, data: Vec::new() }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Position part of row `i`.
    #[inline]
    pub fn pos(&self, i: usize) -> V3 {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn iter_pos(&self) -> impl Iterator<Item = V3> + '_ {
        (0..self.len()).map(|i| self.pos(i))
    }

    /// All positions as a d=3 point set (identity when d == 3).
    pub fn positions(&self) -> PointSet {
        if self.d == 3 {
            return self.clone();
        }
        let data = self.iter_pos().flatten().collect();
        PointSet { d: 3, data }
    }
}
