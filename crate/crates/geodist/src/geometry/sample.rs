//! Area-weighted surface sampling and mesh normalization.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vec3::{self, V3};
use super::{Mesh, PointSet, DEGENERATE_AREA};
use crate::error::{GeodistError, Result};
use crate::seeding::{self, Purpose};

/// Points per parallel sampling chunk. Each chunk draws from its own
/// counter-based RNG stream, so output is identical for any thread count.
const CHUNK: usize = 65_536;

/// The `v -> (v - shift) / scale` transform returned by [`normalize_mesh`],
/// kept so external data can be mapped into and out of normalized space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormTransform {
    pub shift: V3,
    pub scale: f64,
}

impl NormTransform {
    pub fn identity() -> Self {
        NormTransform {
            shift: [0.0; 3],
            scale: 1.0,
        }
    }

    /// Original coordinates -> normalized space.
    pub fn normalize_point(&self, p: V3) -> V3 {
        [
            (p[0] - self.shift[0]) / self.scale,
            (p[1] - self.shift[1]) / self.scale,
            (p[2] - self.shift[2]) / self.scale,
        ]
    }

    /// Normalized space -> original coordinates.
    pub fn denormalize_point(&self, p: V3) -> V3 {
        [
            p[0] * self.scale + self.shift[0],
            p[1] * self.scale + self.shift[1],
            p[2] * self.scale + self.shift[2],
        ]
    }

    /// Apply to the position channels of a point set, in place.
    pub fn normalize_points(&self, ps: &mut PointSet) {
        let d = ps.channels();
        for row in ps.data_mut().chunks_mut(d) {
            let p = self.normalize_point([row[0], row[1], row[2]]);
            row[..3].copy_from_slice(&p);
        }
    }

    pub fn denormalize_points(&self, ps: &mut PointSet) {
        let d = ps.channels();
        for row in ps.data_mut().chunks_mut(d) {
            let p = self.denormalize_point([row[0], row[1], row[2]]);
            row[..3].copy_from_slice(&p);
        }
    }
}

/// Cumulative-area table over non-degenerate faces.
struct AreaTable {
    faces: Vec<u32>,
    cumulative: Vec<f64>,
    total: f64,
}

impl AreaTable {
    fn build(mesh: &Mesh) -> Result<Self> {
        let mut faces = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for fi in 0..mesh.faces().len() {
            let a = mesh.face_area(fi);
            if a < DEGENERATE_AREA {
                continue;
            }
            total += a;
            faces.push(fi as u32);
            cumulative.push(total);
        }
        if total <= 0.0 || faces.is_empty() {
            return Err(GeodistError::DegenerateMesh);
        }
        Ok(AreaTable {
            faces,
            cumulative,
            total,
        })
    }

    fn pick(&self, u: f64) -> u32 {
        let target = u * self.total;
        let idx = self.cumulative.partition_point(|&c| c < target);
        self.faces[idx.min(self.faces.len() - 1)]
    }
}

/// Uniform point in a triangle: fold (u, v) -> (1-u, 1-v) when u + v > 1.
#[inline]
fn triangle_point(a: V3, b: V3, c: V3, mut u: f64, mut v: f64) -> V3 {
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    vec3::add(a, vec3::add(vec3::scale(ab, u), vec3::scale(ac, v)))
}

fn sample_impl(mesh: &Mesh, n: usize, seed: u64, with_colors: bool) -> Result<PointSet> {
    let table = AreaTable::build(mesh)?;
    let d = if with_colors { 6 } else { 3 };
    let n_chunks = n.div_ceil(CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = seeding::chunk_rng(seed, Purpose::SurfaceSampling, 0, ci as u64);
            let count = CHUNK.min(n - ci * CHUNK);
            let mut out = Vec::with_capacity(count * d);
            for _ in 0..count {
                let fi = table.pick(rng.random::<f64>()) as usize;
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                let f = mesh.faces()[fi];
                let [a, b, c] = mesh.triangle(fi);
                let p = triangle_point(a, b, c, u, v);
                out.extend_from_slice(&p);
                if with_colors {
                    let colors = mesh.colors().expect("checked by caller");
                    let (mut uu, mut vv) = (u, v);
                    if uu + vv > 1.0 {
                        uu = 1.0 - uu;
                        vv = 1.0 - vv;
                    }
                    let w = 1.0 - uu - vv;
                    let ca = colors[f[0] as usize];
                    let cb = colors[f[1] as usize];
                    let cc = colors[f[2] as usize];
                    for k in 0..3 {
                        out.push(w * ca[k] + uu * cb[k] + vv * cc[k]);
                    }
                }
            }
            out
        })
        .collect();
    let mut data = Vec::with_capacity(n * d);
    for c in chunks {
        data.extend(c);
    }
    PointSet::new(d, data)
}

/// Draw `n` points i.i.d. uniform with respect to surface area.
///
/// Deterministic for a fixed seed regardless of thread count.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointSet> {
    sample_impl(mesh, n, seed, false)
}

/// Like [`sample_surface`] but carries barycentric-interpolated vertex
/// colors into a d=6 point set. Errors if the mesh has no colors.
pub fn sample_surface_colored(mesh: &Mesh, n: usize, seed: u64) -> Result<PointSet> {
    if mesh.colors().is_none() {
        return Err(GeodistError::Config(
            "mesh has no vertex colors; cannot build d=6 samples".into(),
        ));
    }
    sample_impl(mesh, n, seed, true)
}

/// Center and scale a mesh so that resampled surface points have
/// (approximately) zero mean and unit standard deviation.
///
/// Both reductions are scalar, taken over all N x 3 coordinate entries of
/// `n_norm_samples` surface samples; the same scalar shift is subtracted
/// from every coordinate. Returns the normalized mesh and the transform.
pub fn normalize_mesh(mesh: &Mesh, n_norm_samples: usize, seed: u64) -> Result<(Mesh, NormTransform)> {
    let n = n_norm_samples.max(1);
    let points = sample_surface(mesh, n, seed)?;
    let data = points.data();
    let count = data.len() as f64;
    let mean = data.iter().sum::<f64>() / count;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(GeodistError::DegenerateMesh);
    }
    let transform = NormTransform {
        shift: [mean; 3],
        scale: std,
    };
    Ok((mesh.transformed(transform.shift, transform.scale), transform))
}
