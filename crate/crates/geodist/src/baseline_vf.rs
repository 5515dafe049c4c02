//! Vector-field baseline: a plain coordinate MLP regressing the
//! displacement from a spatial point to its closest surface point.
//! Sampling applies the field once: p -> p + v(p).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, kernels, AdamParams, AdamState, Scalar, Tape, Tensor2};
use crate::error::{GeodistError, Result};
use crate::geometry::{point_mesh_closest, Mesh, PointSet};
use crate::seeding::{self, Purpose};

/// Layer widths, including input and output (e.g. `[3, 512, ..., 512, 3]`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfArch {
    pub widths: Vec<usize>,
}

impl VfArch {
    pub fn new(hidden_layers: usize, width: usize) -> Self {
        let mut widths = vec![3];
        widths.extend(std::iter::repeat_n(width, hidden_layers));
        widths.push(3);
        VfArch { widths }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.first() != Some(&3) || self.widths.last() != Some(&3)
        {
            return Err(GeodistError::Config(format!(
                "vector field widths must map 3 -> 3, got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(GeodistError::Config("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Training settings for the baseline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VfConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub lr: f64,
    pub seed: u64,
    /// How many times to apply the field when sampling. The reference
    /// formulation is one shot; iteration is exposed for exploration.
    pub applications: usize,
    /// Rows per data-parallel gradient chunk.
    pub grad_chunk: usize,
}

impl Default for VfConfig {
    fn default() -> Self {
        VfConfig {
            hidden_layers: 6,
            width: 512,
            epochs: 60,
            iters_per_epoch: 64,
            batch_size: 4096,
            samples_per_epoch: 1 << 17,
            lr: 1e-3,
            seed: 0,
            applications: 1,
            grad_chunk: 1024,
        }
    }
}

impl VfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("baseline.hidden_layers", self.hidden_layers),
            ("baseline.width", self.width),
            ("baseline.iters_per_epoch", self.iters_per_epoch),
            ("baseline.batch_size", self.batch_size),
            ("baseline.samples_per_epoch", self.samples_per_epoch),
            ("baseline.applications", self.applications),
            ("baseline.grad_chunk", self.grad_chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GeodistError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(GeodistError::Config("baseline.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> VfArch {
        VfArch::new(self.hidden_layers, self.width)
    }
}

/// Plain MLP with silu activations: flat parameters carved into
/// per-layer weight and bias segments.
#[derive(Debug, Clone)]
pub struct VectorFieldModel<S> {
    pub arch: VfArch,
    params: Vec<S>,
}

impl<S: Scalar> VectorFieldModel<S> {
    /// He-style initialization: weights N(0, 2/fan_in), biases zero.
    pub fn init(arch: VfArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeding::rng(seed, Purpose::ModelInit, 1);
        let mut params = Vec::with_capacity(arch.param_count());
        for w in arch.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(S::from_f64(rng.sample::<f64, _>(StandardNormal) * std));
            }
            params.extend(std::iter::repeat_n(S::zero(), fan_out));
        }
        Ok(VectorFieldModel { arch, params })
    }

    pub fn from_params(arch: VfArch, params: Vec<S>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(GeodistError::LengthMismatch {
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(VectorFieldModel { arch, params })
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named segments in parameter order, for checkpoints.
    pub fn segments(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (i, w) in self.arch.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push((format!("layer{i}.weight"), off..off + fan_out * fan_in));
            off += fan_out * fan_in;
            out.push((format!("layer{i}.bias"), off..off + fan_out));
            off += fan_out;
        }
        out
    }

    fn layer_tensors(&self) -> Vec<(Tensor2<S>, Tensor2<S>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.arch.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wt = Tensor2::from_vec(
                fan_out,
                fan_in,
                self.params[off..off + fan_out * fan_in].to_vec(),
            )
            .expect("layout");
            off += fan_out * fan_in;
            let b = Tensor2::from_vec(1, fan_out, self.params[off..off + fan_out].to_vec())
                .expect("layout");
            off += fan_out;
            out.push((wt, b));
        }
        out
    }

    /// v(p) for a batch of positions (n x 3).
    pub fn forward(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        let layers = self.layer_tensors();
        let mut h = x.clone();
        let last = layers.len() - 1;
        for (i, (w, b)) in layers.iter().enumerate() {
            h = kernels::add_rows(&kernels::matmul_nt(&h, w)?, b)?;
            if i != last {
                h = kernels::silu(&h);
            }
        }
        Ok(h)
    }
}

/// Displacement dataset: p ~ N(0,1)^3, v = closest_surface_point(p) - p.
pub fn make_vf_dataset(mesh: &Mesh, n: usize, seed: u64) -> Result<(PointSet, PointSet)> {
    let mut rng = seeding::rng(seed, Purpose::VfDataset, 0);
    let mut pdata = Vec::with_capacity(n * 3);
    for _ in 0..n * 3 {
        pdata.push(rng.sample::<f64, _>(StandardNormal));
    }
    let p = PointSet::new(3, pdata)?;
    let closest = point_mesh_closest(&p, mesh)?;
    let mut vdata = Vec::with_capacity(n * 3);
    for (i, (c, _)) in closest.iter().enumerate() {
        let pp = p.pos(i);
        vdata.extend_from_slice(&[c[0] - pp[0], c[1] - pp[1], c[2] - pp[2]]);
    }
    Ok((p, PointSet::new(3, vdata)?))
}

fn vf_loss_and_grads<S: Scalar>(
    model: &VectorFieldModel<S>,
    p: &Tensor2<S>,
    v: &Tensor2<S>,
    grad_chunk: usize,
) -> Result<(f64, Vec<S>)> {
    let batch = p.rows();
    let chunk_rows = grad_chunk.max(1);
    let n_chunks = batch.div_ceil(chunk_rows);
    let results: Vec<Result<(f64, Vec<S>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk_rows;
            let hi = (lo + chunk_rows).min(batch);
            let rows = hi - lo;
            let pc = Tensor2::from_vec(rows, 3, p.data()[lo * 3..hi * 3].to_vec())?;
            let vc = Tensor2::from_vec(rows, 3, v.data()[lo * 3..hi * 3].to_vec())?;

            let mut tape = Tape::<S>::new();
            let mut param_ids = Vec::new();
            {
                let mut off = 0;
                for w in model.arch.widths.windows(2) {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let wt = Tensor2::from_vec(
                        fan_out,
                        fan_in,
                        model.params()[off..off + fan_out * fan_in].to_vec(),
                    )?;
                    off += fan_out * fan_in;
                    let b = Tensor2::from_vec(
                        1,
                        fan_out,
                        model.params()[off..off + fan_out].to_vec(),
                    )?;
                    off += fan_out;
                    param_ids.push((tape.param(wt), tape.param(b)));
                }
            }
            let mut h = tape.constant(pc);
            let last = param_ids.len() - 1;
            for (i, &(w, b)) in param_ids.iter().enumerate() {
                let m = tape.matmul_nt(h, w)?;
                h = tape.add_rows(m, b)?;
                if i != last {
                    h = tape.silu(h);
                }
            }
            let target = tape.constant(vc);
            let diff = tape.sub(h, target)?;
            let sq = tape.mul(diff, diff)?;
            let rows_sum = tape.sum_cols(sq);
            let scaled = tape.scale(rows_sum, S::from_f64(1.0 / batch as f64));
            let loss = tape.sum_rows(scaled);
            tape.backward(loss)?;
            let loss_val = tape.value(loss).get(0, 0).as_f64();

            // copy gradients back in layout order
            let mut grads = vec![S::zero(); model.param_count()];
            let mut off = 0;
            for (li, w) in model.arch.widths.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                let (wid, bid) = param_ids[li];
                if let Some(g) = tape.grad(wid) {
                    grads[off..off + fan_out * fan_in].copy_from_slice(g);
                }
                off += fan_out * fan_in;
                if let Some(g) = tape.grad(bid) {
                    grads[off..off + fan_out].copy_from_slice(g);
                }
                off += fan_out;
            }
            Ok((loss_val, grads))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut total_grads = vec![S::zero(); model.param_count()];
    for r in results {
        let (l, g) = r?;
        total_loss += l;
        for (t, gi) in total_grads.iter_mut().zip(g) {
            *t += gi;
        }
    }
    if !total_loss.is_finite() {
        return Err(GeodistError::NonFinite {
            context: "vector-field loss",
        });
    }
    Ok((total_loss, total_grads))
}

/// L2 regression of the displacement field on fresh (p, v) batches.
/// Returns the model and per-epoch mean losses.
pub fn train_vf(mesh: &Mesh, cfg: &VfConfig) -> Result<(VectorFieldModel<f32>, Vec<f64>)> {
    cfg.validate()?;
    let mut model = VectorFieldModel::<f32>::init(cfg.arch(), cfg.seed)?;
    let mut adam = AdamState::new(
        model.param_count(),
        AdamParams {
            lr: cfg.lr,
            ..AdamParams::default()
        },
    );
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = seeding::derive(cfg.seed, Purpose::EpochData, epoch as u64 + 1_000_000);
        let (p, v) = make_vf_dataset(mesh, cfg.samples_per_epoch, epoch_seed)?;
        let mut rng = seeding::rng(cfg.seed, Purpose::TrainingNoise, epoch as u64 + 1_000_000);
        let mut loss_sum = 0.0;
        for it in 0..cfg.iters_per_epoch {
            let idx: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rng.random_range(0..p.len()))
                .collect();
            let mut pb = Vec::with_capacity(cfg.batch_size * 3);
            let mut vb = Vec::with_capacity(cfg.batch_size * 3);
            for &i in &idx {
                for k in 0..3 {
                    pb.push(p.pos(i)[k] as f32);
                    vb.push(v.pos(i)[k] as f32);
                }
            }
            let pt = Tensor2::from_vec(cfg.batch_size, 3, pb)?;
            let vt = Tensor2::from_vec(cfg.batch_size, 3, vb)?;
            let (loss, grads) =
                vf_loss_and_grads(&model, &pt, &vt, cfg.grad_chunk).map_err(|e| match e {
                    GeodistError::NonFinite { .. } => GeodistError::Divergence {
                        epoch,
                        iter: it,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            adam_step(&mut adam, model.params.as_mut_slice(), &grads)?;
            loss_sum += loss;
        }
        losses.push(loss_sum / cfg.iters_per_epoch as f64);
    }
    Ok((model, losses))
}

/// Sample the baseline: p ~ N(0,1)^3 mapped to p + v(p)
/// (`applications` times; the reference setup uses one).
pub fn sample_vf(
    model: &VectorFieldModel<f32>,
    n: usize,
    seed: u64,
    applications: usize,
) -> Result<PointSet> {
    let noise = crate::sampler::initial_noise(n, 3, crate::sampler::InitKind::Gaussian, seed)?;
    let mut x: Vec<f32> = noise.data().iter().map(|&v| v as f32).collect();
    for _ in 0..applications.max(1) {
        let xt = Tensor2::from_vec(n, 3, x.clone())?;
        let v = model.forward(&xt)?;
        for (xi, vi) in x.iter_mut().zip(v.data()) {
            *xi += vi;
        }
    }
    PointSet::new(3, x.iter().map(|&v| v as f64).collect())
}
