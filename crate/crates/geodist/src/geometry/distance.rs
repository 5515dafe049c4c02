//! Exact point-to-triangle and point-to-mesh distance queries.

use rayon::prelude::*;

use super::vec3::{self, V3};
use super::{Mesh, PointSet};
use crate::error::{GeodistError, Result};

/// Closest point on a triangle to `p`, with the squared distance.
///
/// Voronoi-region walk (vertex, edge, face cases); exact up to rounding.
/// Degenerate triangles fall back to the closest point over the three edges.
pub fn point_triangle_closest(p: V3, tri: [V3; 3]) -> (V3, f64) {
    let [a, b, c] = tri;
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);

    if vec3::norm_sq(vec3::cross(ab, ac)) == 0.0 {
        return degenerate_closest(p, tri);
    }

    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, vec3::dist_sq(p, a));
    }

    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, vec3::dist_sq(p, b));
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        let q = vec3::add(a, vec3::scale(ab, v));
        return (q, vec3::dist_sq(p, q));
    }

    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, vec3::dist_sq(p, c));
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        let q = vec3::add(a, vec3::scale(ac, w));
        return (q, vec3::dist_sq(p, q));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let q = vec3::add(b, vec3::scale(vec3::sub(c, b), w));
        return (q, vec3::dist_sq(p, q));
    }

    // interior
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w)));
    (q, vec3::dist_sq(p, q))
}

fn degenerate_closest(p: V3, tri: [V3; 3]) -> (V3, f64) {
    let mut best = (tri[0], vec3::dist_sq(p, tri[0]));
    for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])] {
        let q = segment_closest(p, a, b);
        let d = vec3::dist_sq(p, q);
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

fn segment_closest(p: V3, a: V3, b: V3) -> V3 {
    let ab = vec3::sub(b, a);
    let len_sq = vec3::norm_sq(ab);
    if len_sq == 0.0 {
        return a;
    }
    let t = (vec3::dot(vec3::sub(p, a), ab) / len_sq).clamp(0.0, 1.0);
    vec3::add(a, vec3::scale(ab, t))
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: V3,
    max: V3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    fn grow(&mut self, p: V3) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn dist_sq(&self, p: V3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

enum Node {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

/// AABB tree over mesh faces for nearest-surface queries.
///
/// Branch-and-bound descent; results equal the brute-force minimum over all
/// faces (pruning only skips provably farther subtrees).
pub struct MeshBvh {
    tris: Vec<[V3; 3]>,
    order: Vec<u32>,
    boxes: Vec<Aabb>,
    nodes: Vec<Node>,
    root: usize,
}

const LEAF_SIZE: usize = 8;

impl MeshBvh {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.faces().is_empty() {
            return Err(GeodistError::EmptyMesh);
        }
        let tris: Vec<[V3; 3]> = (0..mesh.faces().len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<V3> = tris
            .iter()
            .map(|t| {
                [
                    (t[0][0] + t[1][0] + t[2][0]) / 3.0,
                    (t[0][1] + t[1][1] + t[2][1]) / 3.0,
                    (t[0][2] + t[1][2] + t[2][2]) / 3.0,
                ]
            })
            .collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut bvh = MeshBvh {
            tris,
            order: Vec::new(),
            boxes: Vec::new(),
            nodes: Vec::new(),
            root: 0,
        };
        let n = order.len();
        let root = bvh.build(&mut order, 0, n, &centroids);
        bvh.order = order;
        bvh.root = root;
        Ok(bvh)
    }

    fn build(&mut self, order: &mut [u32], start: usize, count: usize, centroids: &[V3]) -> usize {
        let mut bbox = Aabb::empty();
        for &t in &order[start..start + count] {
            for v in &self.tris[t as usize] {
                bbox.grow(*v);
            }
        }
        if count <= LEAF_SIZE {
            self.boxes.push(bbox);
            self.nodes.push(Node::Leaf { start, count });
            return self.nodes.len() - 1;
        }

        let mut cb = Aabb::empty();
        for &t in &order[start..start + count] {
            cb.grow(centroids[t as usize]);
        }
        let extent = [
            cb.max[0] - cb.min[0],
            cb.max[1] - cb.min[1],
            cb.max[2] - cb.min[2],
        ];
        let axis = (0..3).max_by(|&a, &b| extent[a].total_cmp(&extent[b])).unwrap();
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build(order, start, mid, centroids);
        let right = self.build(order, start + mid, count - mid, centroids);
        self.boxes.push(bbox);
        self.nodes.push(Node::Inner { left, right });
        self.nodes.len() - 1
    }

    /// Closest surface point to `p`: (closest, squared distance, face index).
    pub fn closest(&self, p: V3) -> (V3, f64, u32) {
        let mut best_d = f64::INFINITY;
        let mut best_q = self.tris[0][0];
        let mut best_f = 0u32;
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            if self.boxes[ni].dist_sq(p) >= best_d {
                continue;
            }
            match self.nodes[ni] {
                Node::Leaf { start, count } => {
                    for &t in &self.order[start..start + count] {
                        let (q, d) = point_triangle_closest(p, self.tris[t as usize]);
                        if d < best_d {
                            best_d = d;
                            best_q = q;
                            best_f = t;
                        }
                    }
                }
                Node::Inner { left, right } => {
                    // descend nearer child first for tighter pruning
                    let dl = self.boxes[left].dist_sq(p);
                    let dr = self.boxes[right].dist_sq(p);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        (best_q, best_d, best_f)
    }
}

/// Per-point L2 distance from each position to the mesh surface.
pub fn point_mesh_distance(points: &PointSet, mesh: &Mesh) -> Result<Vec<f64>> {
    let bvh = MeshBvh::new(mesh)?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| bvh.closest(points.pos(i)).1.sqrt())
        .collect())
}

/// Closest surface point and L2 distance for each position.
pub fn point_mesh_closest(points: &PointSet, mesh: &Mesh) -> Result<Vec<(V3, f64)>> {
    let bvh = MeshBvh::new(mesh)?;
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let (q, d, _) = bvh.closest(points.pos(i));
            (q, d.sqrt())
        })
        .collect())
}
