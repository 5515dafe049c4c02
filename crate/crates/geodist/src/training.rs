//! Denoising score-matching training with per-epoch surface resampling.
//!
//! Every epoch draws a fresh surface point set with an epoch-dependent seed,
//! so over training the network sees an effectively unlimited pool of
//! ground-truth surface points. Noise levels are log-normal, the loss is the
//! sigma-weighted squared denoising error, and mp_linear rows are forced
//! back to unit norm after every optimizer step.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamParams, AdamState, Scalar, Tape, Tensor2};
use crate::checkpoint;
use crate::denoiser::{extract_grads, forward_tape, register_params, DenoiserConfig, DenoiserModel};
use crate::error::{GeodistError, Result};
use crate::geometry::io::Provenance;
use crate::geometry::{sample_surface, sample_surface_colored, Mesh, NormTransform, PointSet};
use crate::metrics;
use crate::sampler::{self, InitKind, NoiseSchedule};
use crate::seeding::{self, Purpose};

/// Training hyperparameters. Defaults are the desk-scale configuration;
/// paper-scale values (2^25 points, 512 iterations, C=512) stay reachable
/// through the run config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    /// Fresh surface samples drawn before each epoch.
    pub points_per_epoch: usize,
    /// Log-normal sigma sampling: sigma = exp(p_mean + p_std * z).
    pub p_mean: f64,
    pub p_std: f64,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch (1.0 = constant).
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 = only on completion).
    pub checkpoint_every: usize,
    /// Evaluate Chamfer distance every this many epochs (0 = never).
    pub eval_every: usize,
    pub eval_points: usize,
    pub eval_steps: usize,
    /// Rows per data-parallel gradient chunk.
    pub grad_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            iters_per_epoch: 64,
            batch_size: 4096,
            points_per_epoch: 1 << 18,
            p_mean: -1.2,
            p_std: 1.2,
            lr: 1e-2,
            lr_decay: 0.995,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            eval_points: 8192,
            eval_steps: 32,
            grad_chunk: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("training.iters_per_epoch", self.iters_per_epoch),
            ("training.batch_size", self.batch_size),
            ("training.points_per_epoch", self.points_per_epoch),
            ("training.eval_points", self.eval_points),
            ("training.eval_steps", self.eval_steps),
            ("training.grad_chunk", self.grad_chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GeodistError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.p_std > 0.0) {
            return Err(GeodistError::Config("training.p_std must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0) {
            return Err(GeodistError::Config(
                "training.lr and lr_decay must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub chamfer: Option<f64>,
    pub seconds: f64,
}

/// Per-epoch training records.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// CSV: epoch, loss, chamfer (empty when not evaluated), seconds.
    pub fn write_csv(&self, path: impl AsRef<Path>, prov: &Provenance) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| GeodistError::io(path, e))?;
        writeln!(f, "# geodist {} config={}", prov.version, prov.config_hash)
            .map_err(|e| GeodistError::io(path, e))?;
        writeln!(f, "epoch,loss,chamfer,seconds").map_err(|e| GeodistError::io(path, e))?;
        for r in &self.epochs {
            let ch = r.chamfer.map(|c| c.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{},{}", r.epoch, r.mean_loss, ch, r.seconds)
                .map_err(|e| GeodistError::io(path, e))?;
        }
        Ok(())
    }
}

/// Where (and with which transform) the training loop writes checkpoints.
pub struct TrainSink {
    pub dir: PathBuf,
    pub transform: NormTransform,
}

impl TrainSink {
    pub fn latest_path(&self) -> PathBuf {
        self.dir.join("checkpoint.ckpt")
    }

    pub fn best_path(&self) -> PathBuf {
        self.dir.join("checkpoint_best.ckpt")
    }
}

/// Log-normal noise levels: sigma_i = exp(p_mean + p_std * z_i).
pub fn sample_sigma(batch: usize, rng: &mut ChaCha8Rng, p_mean: f64, p_std: f64) -> Vec<f64> {
    (0..batch)
        .map(|_| (p_mean + p_std * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect()
}

/// EDM loss weight lambda(sigma) = (sigma^2 + sd^2) / (sigma * sd)^2.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    (s2 + d2) / (s2 * d2)
}

/// The training objective for explicit predictions: mean over the batch of
/// lambda(sigma) * ||pred - x||^2 (squared L2 summed over channels).
/// Useful for oracle checks; the traced loss computes the same thing.
pub fn edm_loss_value(pred: &Tensor2<f64>, x: &Tensor2<f64>, sigma: &[f64], sigma_data: f64) -> f64 {
    let b = x.rows();
    let mut total = 0.0;
    for i in 0..b {
        let sq: f64 = pred
            .row(i)
            .iter()
            .zip(x.row(i))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        total += loss_weight(sigma[i], sigma_data) * sq;
    }
    total / b as f64
}

/// Loss and flat parameter gradients for one minibatch.
///
/// `x_clean` are surface points, `sigma` per-row noise levels, `noise`
/// standard normal draws; the noisy input is x + sigma * noise. The batch is
/// split into fixed chunks processed on independent tapes; chunk results are
/// reduced in chunk order, so the outcome does not depend on thread count.
pub fn training_loss<S: Scalar>(
    model: &DenoiserModel<S>,
    x_clean: &Tensor2<S>,
    sigma: &[S],
    noise: &Tensor2<S>,
    grad_chunk: usize,
) -> Result<(f64, Vec<S>)> {
    let batch = x_clean.rows();
    let d = x_clean.cols();
    if sigma.len() != batch || noise.shape() != x_clean.shape() {
        return Err(GeodistError::ShapeMismatch {
            op: "training_loss",
            details: format!(
                "batch {batch} x {d}, sigma {}, noise {:?}",
                sigma.len(),
                noise.shape()
            ),
        });
    }
    let chunk_rows = grad_chunk.max(1);
    let n_chunks = batch.div_ceil(chunk_rows);
    let sd = model.config.sigma_data;

    let results: Vec<Result<(f64, Vec<S>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk_rows;
            let hi = (lo + chunk_rows).min(batch);
            let rows = hi - lo;
            let xc = Tensor2::from_vec(rows, d, x_clean.data()[lo * d..hi * d].to_vec())?;
            let sc = &sigma[lo..hi];
            // y = x + sigma * n, constant with respect to the parameters
            let mut y = Tensor2::zeros(rows, d);
            for i in 0..rows {
                for j in 0..d {
                    let v = xc.get(i, j) + sc[i] * noise.get(lo + i, j);
                    y.set(i, j, v);
                }
            }
            let weights: Vec<S> = sc
                .iter()
                .map(|&s| S::from_f64(loss_weight(s.as_f64(), sd) / batch as f64))
                .collect();

            let mut tape = Tape::<S>::new();
            let ids = register_params(&mut tape, model);
            let out = forward_tape(&mut tape, model, &ids, &y, sc)?;
            let target = tape.constant(xc);
            let diff = tape.sub(out, target)?;
            let sq = tape.mul(diff, diff)?;
            let per_row = tape.sum_cols(sq);
            let w = tape.constant(Tensor2::column(weights));
            let weighted = tape.mul(per_row, w)?;
            let loss = tape.sum_rows(weighted);
            tape.backward(loss)?;
            let loss_val = tape.value(loss).get(0, 0).as_f64();
            let grads = extract_grads(&tape, model, &ids);
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
            context: "training loss",
        });
    }
    Ok((total_loss, total_grads))
}

fn epoch_dataset(mesh: &Mesh, cfg: &DenoiserConfig, n: usize, seed: u64) -> Result<PointSet> {
    if cfg.d_in == 6 {
        sample_surface_colored(mesh, n, seed)
    } else {
        sample_surface(mesh, n, seed)
    }
}

fn quick_chamfer(
    model: &DenoiserModel<f32>,
    mesh: &Mesh,
    tcfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let schedule = NoiseSchedule::karras(tcfg.eval_steps, 0.002, 80.0, 7.0)?;
    let frozen = model.frozen();
    let gen_seed = seeding::derive(tcfg.seed, Purpose::Eval, 10_000 + epoch as u64);
    let (gen, _) = sampler::sample_forward_heun(
        &frozen,
        tcfg.eval_points,
        &schedule,
        InitKind::Gaussian,
        gen_seed,
        &[],
    )?;
    let ref_seed = seeding::derive(tcfg.seed, Purpose::Eval, 20_000 + epoch as u64);
    let reference = sample_surface(mesh, tcfg.eval_points, ref_seed)?;
    metrics::chamfer(&reference, &gen.positions())
}

/// Train a denoiser on a normalized mesh.
///
/// Epoch k draws its surface points with a seed derived from (seed, k), so
/// no two epochs share a training set. When `sink` is given, the latest
/// checkpoint is written every `checkpoint_every` epochs and the
/// best-Chamfer checkpoint is kept up to date whenever evaluation runs.
pub fn train(
    mesh: &Mesh,
    dcfg: DenoiserConfig,
    tcfg: &TrainConfig,
    sink: Option<&TrainSink>,
) -> Result<(DenoiserModel<f32>, TrainReport)> {
    dcfg.validate()?;
    tcfg.validate()?;
    if dcfg.d_in == 6 && mesh.colors().is_none() {
        return Err(GeodistError::Config(
            "d_in = 6 requires a mesh with vertex colors".into(),
        ));
    }
    let mut model = DenoiserModel::<f32>::init(dcfg, seeding::derive(tcfg.seed, Purpose::ModelInit, 0))?;
    let mut adam = AdamState::new(
        model.param_count(),
        AdamParams {
            lr: tcfg.lr,
            beta1: tcfg.beta1,
            beta2: tcfg.beta2,
            eps: tcfg.adam_eps,
        },
    );
    let mut report = TrainReport::default();
    let mut best_chamfer = f64::INFINITY;
    let d = dcfg.d_in;

    for epoch in 0..tcfg.epochs {
        let started = Instant::now();
        let data = epoch_dataset(
            mesh,
            &dcfg,
            tcfg.points_per_epoch,
            seeding::derive(tcfg.seed, Purpose::EpochData, epoch as u64),
        )?;
        let mut rng = seeding::rng(tcfg.seed, Purpose::TrainingNoise, epoch as u64);
        let mut loss_sum = 0.0;

        for it in 0..tcfg.iters_per_epoch {
            let mut xb = Vec::with_capacity(tcfg.batch_size * d);
            for _ in 0..tcfg.batch_size {
                let i = rng.random_range(0..data.len());
                xb.extend(data.row(i).iter().map(|&v| v as f32));
            }
            let x = Tensor2::from_vec(tcfg.batch_size, d, xb)?;
            let sigma: Vec<f32> = sample_sigma(tcfg.batch_size, &mut rng, tcfg.p_mean, tcfg.p_std)
                .into_iter()
                .map(|v| v as f32)
                .collect();
            let noise = Tensor2::from_fn(tcfg.batch_size, d, |_, _| {
                rng.sample::<f64, _>(StandardNormal) as f32
            });

            let (loss, grads) = training_loss(&model, &x, &sigma, &noise, tcfg.grad_chunk)
                .map_err(|e| match e {
                    GeodistError::NonFinite { .. } => GeodistError::Divergence {
                        epoch,
                        iter: it,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
            adam_step(&mut adam, model.params_mut(), &grads)?;
            model.renormalize_weights();
            loss_sum += loss;
        }
        adam.params.lr *= tcfg.lr_decay;

        let chamfer = if tcfg.eval_every > 0 && (epoch + 1) % tcfg.eval_every == 0 {
            Some(quick_chamfer(&model, mesh, tcfg, epoch)?)
        } else {
            None
        };
        if let (Some(sink), Some(ch)) = (sink, chamfer) {
            if ch < best_chamfer {
                best_chamfer = ch;
                checkpoint::save_denoiser(sink.best_path(), &model, sink.transform)?;
            }
        }
        if let Some(sink) = sink {
            if tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0 {
                checkpoint::save_denoiser(sink.latest_path(), &model, sink.transform)?;
            }
        }
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / tcfg.iters_per_epoch as f64,
            chamfer,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_collapses_when_p_std_vanishes() {
        let mut rng = seeding::rng(1, Purpose::TrainingNoise, 0);
        let s = sample_sigma(100, &mut rng, -1.2, 1e-12);
        for v in s {
            assert!((v - (-1.2f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn sigma_is_always_positive_and_median_matches() {
        let mut rng = seeding::rng(2, Purpose::TrainingNoise, 0);
        let mut s = sample_sigma(1_000_000, &mut rng, -1.2, 1.2);
        assert!(s.iter().all(|&v| v > 0.0));
        s.sort_by(f64::total_cmp);
        let median = s[s.len() / 2];
        let expected = (-1.2f64).exp(); // log-normal median = e^mu
        assert!(
            (median - expected).abs() / expected < 0.01,
            "median {median} vs {expected}"
        );
    }

    #[test]
    fn perfect_denoiser_has_zero_loss() {
        let x = Tensor2::from_fn(16, 3, |i, j| (i + j) as f64 * 0.1);
        let sigma: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 * 0.2).collect();
        assert_eq!(edm_loss_value(&x, &x, &sigma, 1.0), 0.0);
    }

    #[test]
    fn identity_denoiser_loss_matches_analytic_expectation() {
        // D(y) = y gives loss lambda(s) s^2 ||n||^2 = (s^2+1) ||n||^2 at
        // sigma_data = 1, expectation d * E[s^2 + 1] over the log-normal
        let mut rng = seeding::rng(3, Purpose::TrainingNoise, 0);
        let b = 400_000;
        let d = 3;
        let sigma = sample_sigma(b, &mut rng, -1.2, 1.2);
        let x = Tensor2::<f64>::zeros(b, d);
        let mut pred = Tensor2::zeros(b, d);
        for i in 0..b {
            for j in 0..d {
                let n: f64 = rng.sample(StandardNormal);
                pred.set(i, j, sigma[i] * n); // y = x + s n with x = 0
            }
        }
        let loss = edm_loss_value(&pred, &x, &sigma, 1.0);
        // E[s^2] for log-normal(mu, sd): exp(2 mu + 2 sd^2)
        let es2 = (2.0 * -1.2 + 2.0 * 1.2 * 1.2f64).exp();
        let expected = d as f64 * (es2 + 1.0);
        assert!(
            (loss - expected).abs() / expected < 0.02,
            "loss {loss} vs {expected}"
        );
    }

    #[test]
    fn loss_is_nonnegative() {
        let mut rng = seeding::rng(4, Purpose::TrainingNoise, 0);
        let x = Tensor2::from_fn(32, 3, |_, _| rng.sample(StandardNormal));
        let pred = Tensor2::from_fn(32, 3, |_, _| rng.sample(StandardNormal));
        let sigma = sample_sigma(32, &mut rng, -1.2, 1.2);
        assert!(edm_loss_value(&pred, &x, &sigma, 1.0) >= 0.0);
    }

    #[test]
    fn traced_loss_matches_explicit_formula() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        let model = DenoiserModel::<f64>::init(cfg, 5).unwrap();
        let mut rng = seeding::rng(6, Purpose::TrainingNoise, 0);
        let b = 24;
        let x = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));
        let sigma = sample_sigma(b, &mut rng, -1.2, 1.2);
        let noise = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));

        let (loss, _) = training_loss(&model, &x, &sigma, &noise, 7).unwrap();

        // same quantity straight through the eval path
        let mut y = Tensor2::zeros(b, 3);
        for i in 0..b {
            for j in 0..3 {
                y.set(i, j, x.get(i, j) + sigma[i] * noise.get(i, j));
            }
        }
        let pred = model.denoise(&y, &sigma).unwrap();
        let direct = edm_loss_value(&pred, &x, &sigma, 1.0);
        assert!(
            (loss - direct).abs() / direct.max(1e-12) < 1e-9,
            "{loss} vs {direct}"
        );
    }

    #[test]
    fn training_loss_gradients_match_finite_differences() {
        // the full-model gradient check on a tiny config, f64 storage
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        let mut model = DenoiserModel::<f64>::init(cfg, 7).unwrap();
        let r = model.layout().get("final_out_gain").unwrap().range();
        model.params_mut()[r.start] = 0.4;

        let mut rng = seeding::rng(8, Purpose::TrainingNoise, 0);
        let b = 10;
        let x = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));
        let sigma = sample_sigma(b, &mut rng, -1.2, 1.2);
        let noise = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));

        let (_, grads) = training_loss(&model, &x, &sigma, &noise, 4).unwrap();
        let h = 1e-5;
        for seg in model.layout().segments() {
            let mut err_sq = 0.0;
            let mut ad_sq = 0.0;
            let mut fd_sq = 0.0;
            for off in seg.range() {
                let mut mp = model.clone();
                mp.params_mut()[off] += h;
                let mut mm = model.clone();
                mm.params_mut()[off] -= h;
                let lp = training_loss(&mp, &x, &sigma, &noise, 4).unwrap().0;
                let lm = training_loss(&mm, &x, &sigma, &noise, 4).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                err_sq += (grads[off] - fd) * (grads[off] - fd);
                ad_sq += grads[off] * grads[off];
                fd_sq += fd * fd;
            }
            let denom: f64 = ad_sq.sqrt().max(fd_sq.sqrt());
            if denom == 0.0 {
                continue;
            }
            let rel = err_sq.sqrt() / denom;
            assert!(rel < 1e-3, "{}: rel err {rel:.3e}", seg.name);
        }
    }

    #[test]
    fn chunked_loss_is_chunk_size_invariant_in_f64() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        let model = DenoiserModel::<f64>::init(cfg, 9).unwrap();
        let mut rng = seeding::rng(10, Purpose::TrainingNoise, 0);
        let b = 30;
        let x = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));
        let sigma = sample_sigma(b, &mut rng, -1.2, 1.2);
        let noise = Tensor2::from_fn(b, 3, |_, _| rng.sample(StandardNormal));
        let (l1, g1) = training_loss(&model, &x, &sigma, &noise, 30).unwrap();
        let (l2, g2) = training_loss(&model, &x, &sigma, &noise, 7).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epochs_returns_fresh_model_and_empty_report() {
        let mesh = crate::geometry::shapes::icosphere(1);
        let dcfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        let tcfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (model, report) = train(&mesh, dcfg, &tcfg, None).unwrap();
        assert!(report.epochs.is_empty());
        let fresh =
            DenoiserModel::<f32>::init(dcfg, seeding::derive(tcfg.seed, Purpose::ModelInit, 0))
                .unwrap();
        assert_eq!(model.params(), fresh.params());
    }

    #[test]
    fn epoch_datasets_differ() {
        let mesh = crate::geometry::shapes::icosphere(1);
        let dcfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        let a = epoch_dataset(&mesh, &dcfg, 1000, seeding::derive(0, Purpose::EpochData, 0)).unwrap();
        let b = epoch_dataset(&mesh, &dcfg, 1000, seeding::derive(0, Purpose::EpochData, 1)).unwrap();
        assert_ne!(a, b);
    }
}
