//! Exact nearest-neighbor search, Chamfer distance, and evaluation reports.

use rayon::prelude::*;

use crate::error::{GeodistError, Result};
use crate::geometry::{point_mesh_distance, sample_surface, Mesh, PointSet};
use crate::sampler::{self, InitKind, NoiseSchedule, PointDenoiser};
use crate::seeding::{self, Purpose};

/// Balanced 3-d tree over the position columns of a point set.
///
/// Queries return the exact nearest Euclidean neighbor; ties break toward
/// the lowest point index, and there is no approximate mode.
pub struct KdTree3 {
    points: Vec<[f64; 3]>,
    nodes: Vec<KdNode>,
    root: i32,
}

struct KdNode {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

impl KdTree3 {
    pub fn build(points: &PointSet) -> Result<Self> {
        if points.is_empty() {
            return Err(GeodistError::EmptyPointSet);
        }
        let pts: Vec<[f64; 3]> = points.iter_pos().collect();
        let mut idx: Vec<u32> = (0..pts.len() as u32).collect();
        let mut tree = KdTree3 {
            points: pts,
            nodes: Vec::with_capacity(points.len()),
            root: -1,
        };
        let n = idx.len();
        tree.root = tree.build_node(&mut idx, 0, n);
        Ok(tree)
    }

    fn build_node(&mut self, idx: &mut [u32], start: usize, count: usize) -> i32 {
        if count == 0 {
            return -1;
        }
        // split on the widest axis of this subset
        let slice = &idx[start..start + count];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice {
            let p = self.points[i as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let axis = (0..3).max_by(|&a, &b| extent[a].total_cmp(&extent[b])).unwrap();

        let mid = count / 2;
        let points = &self.points;
        idx[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let point = idx[start + mid];
        let left = self.build_node(idx, start, mid);
        let right = self.build_node(idx, start + mid + 1, count - mid - 1);
        self.nodes.push(KdNode {
            point,
            axis: axis as u8,
            left,
            right,
        });
        (self.nodes.len() - 1) as i32
    }

    /// Exact nearest neighbor of `p`: (index, L2 distance).
    pub fn nearest(&self, p: [f64; 3]) -> (usize, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(self.root, p, &mut best);
        (best.0 as usize, best.1.sqrt())
    }

    fn search(&self, node: i32, p: [f64; 3], best: &mut (u32, f64)) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        let q = self.points[n.point as usize];
        let d = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<f64>();
        if d < best.1 || (d == best.1 && n.point < best.0) {
            *best = (n.point, d);
        }
        let delta = p[n.axis as usize] - q[n.axis as usize];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, p, best);
        // visit the far side on exact ties too, so the lowest index wins
        if delta * delta <= best.1 {
            self.search(far, p, best);
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Deterministic sum: fixed-size chunk partials added in order, independent
/// of thread count.
fn ordered_sum(values: &[f64]) -> f64 {
    values.chunks(1024).map(|c| c.iter().sum::<f64>()).sum()
}

fn mean_nn_distances(from: &PointSet, tree: &KdTree3) -> Vec<f64> {
    (0..from.len())
        .into_par_iter()
        .map(|i| tree.nearest(from.pos(i)).1)
        .collect()
}

/// Both Chamfer variants: unsquared (sum of mean distances, the reported
/// one) and squared (sum of mean squared distances).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferResult {
    pub unsquared: f64,
    pub squared: f64,
}

/// Chamfer distance between two point sets:
/// mean over `reference` of the nearest distance into `generated`, plus the
/// same in the other direction.
pub fn chamfer_both(reference: &PointSet, generated: &PointSet) -> Result<ChamferResult> {
    if reference.is_empty() || generated.is_empty() {
        return Err(GeodistError::EmptyPointSet);
    }
    let gen_tree = KdTree3::build(generated)?;
    let ref_tree = KdTree3::build(reference)?;
    let d_ref = mean_nn_distances(reference, &gen_tree);
    let d_gen = mean_nn_distances(generated, &ref_tree);
    let ref_n = reference.len() as f64;
    let gen_n = generated.len() as f64;
    let unsquared = ordered_sum(&d_ref) / ref_n + ordered_sum(&d_gen) / gen_n;
    let sq_ref: Vec<f64> = d_ref.iter().map(|d| d * d).collect();
    let sq_gen: Vec<f64> = d_gen.iter().map(|d| d * d).collect();
    let squared = ordered_sum(&sq_ref) / ref_n + ordered_sum(&sq_gen) / gen_n;
    Ok(ChamferResult { unsquared, squared })
}

/// The unsquared Chamfer distance.
pub fn chamfer(reference: &PointSet, generated: &PointSet) -> Result<f64> {
    Ok(chamfer_both(reference, generated)?.unsquared)
}

/// Summary statistics from evaluating a trained model against its mesh.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub n_points: usize,
    pub n_steps: usize,
    pub chamfer: f64,
    pub chamfer_squared: f64,
    /// Percentiles of per-point L2 distance to the surface (p50, p90, p99, max).
    pub error_p50: f64,
    pub error_p90: f64,
    pub error_p99: f64,
    pub error_max: f64,
    pub param_count: usize,
    /// Per-generated-point surface distances, for heatmap export.
    pub errors: Vec<f64>,
    /// The generated points themselves, for export alongside `errors`.
    pub generated: PointSet,
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Generate `n` points with `n_steps` Heun sampling, compare against `n`
/// fresh reference samples (Chamfer), and measure per-point surface error
/// percentiles.
pub fn eval_model(
    model: &dyn PointDenoiser,
    param_count: usize,
    mesh: &Mesh,
    n: usize,
    n_steps: usize,
    schedule_params: (f64, f64, f64),
    init: InitKind,
    seed: u64,
) -> Result<EvalReport> {
    let (sigma_min, sigma_max, rho) = schedule_params;
    let schedule = NoiseSchedule::karras(n_steps, sigma_min, sigma_max, rho)?;
    let gen_seed = seeding::derive(seed, Purpose::Eval, 1);
    let ref_seed = seeding::derive(seed, Purpose::Eval, 2);
    let (generated, _) =
        sampler::sample_forward_heun(model, n, &schedule, init, gen_seed, &[])?;
    let generated = generated.positions();
    let reference = sample_surface(mesh, n, ref_seed)?;
    let ch = chamfer_both(&reference, &generated)?;
    let errors = point_mesh_distance(&generated, mesh)?;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(EvalReport {
        n_points: n,
        n_steps,
        chamfer: ch.unsquared,
        chamfer_squared: ch.squared,
        error_p50: percentile(&sorted, 0.50),
        error_p90: percentile(&sorted, 0.90),
        error_p99: percentile(&sorted, 0.99),
        error_max: sorted.last().copied().unwrap_or(0.0),
        param_count,
        errors,
        generated,
    })
}

/// Compression ratio of storing `n_points` raw points (3 floats each)
/// versus `param_count` network parameters (1 float each).
pub fn compression_ratio_for_params(param_count: usize, n_points: u64) -> f64 {
    3.0 * n_points as f64 / param_count as f64
}
