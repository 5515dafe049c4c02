//! Forward passes of the denoiser.
//!
//! Two paths share the same kernels in the same order: an untraced
//! evaluation path for sampling, and a taped path for training. A lock-step
//! test asserts both produce bit-identical outputs.

use super::{DenoiserConfig, DenoiserModel, ModelWeights, SegmentKind};
use crate::autodiff::{kernels, Scalar, Tape, TapeId, Tensor2};
use crate::error::{GeodistError, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const TAU: f64 = std::f64::consts::TAU;

/// Per-row preconditioning coefficients.
pub struct Precond<S> {
    pub c_skip: Vec<S>,
    pub c_out: Vec<S>,
    pub c_in: Vec<S>,
    pub c_noise: Vec<S>,
}

/// EDM preconditioning: c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2),
/// c_in = 1/sqrt(s^2+sd^2), c_noise = ln(s)/4.
pub fn precondition<S: Scalar>(sigma: &[S], sigma_data: f64) -> Result<Precond<S>> {
    let sd = sigma_data;
    let mut p = Precond {
        c_skip: Vec::with_capacity(sigma.len()),
        c_out: Vec::with_capacity(sigma.len()),
        c_in: Vec::with_capacity(sigma.len()),
        c_noise: Vec::with_capacity(sigma.len()),
    };
    for &s in sigma {
        let sv = s.as_f64();
        if !(sv > 0.0) {
            return Err(GeodistError::NonPositiveSigma { sigma: sv });
        }
        let sum = sv * sv + sd * sd;
        p.c_skip.push(S::from_f64(sd * sd / sum));
        p.c_out.push(S::from_f64(sv * sd / sum.sqrt()));
        p.c_in.push(S::from_f64(1.0 / sum.sqrt()));
        p.c_noise.push(S::from_f64(sv.ln() / 4.0));
    }
    Ok(p)
}

/// Coordinates are multiplied by this before the Fourier ladder. The ladder
/// is 2-periodic in its argument, so without the shrink a normalized mesh
/// (radius ~1.7, noised inputs wider) aliases opposite sides of the shape
/// onto identical codes. 1/4 keeps everything within +-4 unambiguous.
pub const POS_FOURIER_SCALE: f64 = 0.25;

/// Per-channel Fourier features `[sin(2^k pi s x_j), cos(2^k pi s x_j)]` for
/// k = 0..bands-1 with s = [`POS_FOURIER_SCALE`], channels concatenated.
/// Width: 2 * bands * d.
pub fn position_fourier_features<S: Scalar>(x: &Tensor2<S>, bands: usize) -> Tensor2<S> {
    let (n, d) = x.shape();
    let width = 2 * bands * d;
    let mut out = Tensor2::zeros(n, width);
    for i in 0..n {
        let row = x.row(i).to_vec();
        let orow = &mut out.data_mut()[i * width..(i + 1) * width];
        for (j, &v) in row.iter().enumerate() {
            for k in 0..bands {
                let freq =
                    S::from_f64((1u64 << k) as f64 * std::f64::consts::PI * POS_FOURIER_SCALE);
                let arg = freq * v;
                orow[j * 2 * bands + 2 * k] = arg.sin();
                orow[j * 2 * bands + 2 * k + 1] = arg.cos();
            }
        }
    }
    out
}

/// mp_linear evaluation: rows of `w` normalized to unit L2, then
/// `x * w_hat^T * gain`.
pub fn mp_linear_eval<S: Scalar>(x: &Tensor2<S>, w: &Tensor2<S>, gain: Option<S>) -> Result<Tensor2<S>> {
    let w_hat = kernels::l2_norm_rows(w);
    let out = kernels::matmul_nt(x, &w_hat)?;
    Ok(match gain {
        Some(g) => kernels::scale(&out, g),
        None => out,
    })
}

/// Position embedding: Fourier features projected to width C.
pub fn embed_position_eval<S: Scalar>(
    cfg: &DenoiserConfig,
    weights: &ModelWeights<S>,
    x: &Tensor2<S>,
) -> Result<Tensor2<S>> {
    let feats = position_fourier_features(x, cfg.fourier_bands);
    mp_linear_eval(&feats, &weights.input_proj, None)
}

fn mp_fourier_eval<S: Scalar>(
    c_noise: &Tensor2<S>,
    freqs: &Tensor2<S>,
    phases: &Tensor2<S>,
) -> Result<Tensor2<S>> {
    let z = kernels::matmul(c_noise, freqs)?;
    let z = kernels::add_rows(&z, phases)?;
    let z = kernels::scale(&z, S::from_f64(TAU));
    let z = kernels::cos(&z);
    Ok(kernels::scale(&z, S::from_f64(SQRT_2)))
}

/// Noise-level embedding: c_noise = ln(t)/4 through magnitude-preserving
/// Fourier features of the learned frequency vector, mp_silu, and a
/// projection to width C. Errors on nonpositive `t`.
pub fn embed_noise_eval<S: Scalar>(
    cfg: &DenoiserConfig,
    weights: &ModelWeights<S>,
    t: &[S],
) -> Result<Tensor2<S>> {
    let _ = cfg;
    let p = precondition(t, 1.0)?; // validates positivity, supplies c_noise
    let c_noise = Tensor2::column(p.c_noise);
    let four = mp_fourier_eval(&c_noise, &weights.freqs, &weights.phases)?;
    let act = kernels::mp_silu(&four);
    mp_linear_eval(&act, &weights.noise_proj, None)
}

/// One middle block, exactly the reference sequence:
/// c = emb(t_emb) * emb_gain + 1; x = normalize(x);
/// res = pre(mp_silu(x)); res = mp_silu(res * c); res = post(res);
/// out = mp_sum(x, res, 0.3).
pub fn middle_block_eval<S: Scalar>(
    x: &Tensor2<S>,
    t_emb: &Tensor2<S>,
    block: &super::BlockWeights<S>,
    emb_gain: S,
) -> Result<Tensor2<S>> {
    let c = mp_linear_eval(t_emb, &block.emb, Some(emb_gain))?;
    let c = kernels::add_scalar(&c, S::one());
    let xn = kernels::rms_norm_rows(x);
    let a = kernels::mp_silu(&xn);
    let res = mp_linear_eval(&a, &block.pre, None)?;
    let res = kernels::mp_silu(&kernels::mul(&res, &c)?);
    let res = mp_linear_eval(&res, &block.post, None)?;
    kernels::mp_sum(&xn, &res, 0.3)
}

/// Final block: like a middle block but without the residual sum, ending in
/// the d_in-wide projection scaled by final_out_gain.
pub fn final_block_eval<S: Scalar>(
    x: &Tensor2<S>,
    t_emb: &Tensor2<S>,
    fin: &super::BlockWeights<S>,
    final_emb_gain: S,
    final_out_gain: S,
) -> Result<Tensor2<S>> {
    let c = mp_linear_eval(t_emb, &fin.emb, Some(final_emb_gain))?;
    let c = kernels::add_scalar(&c, S::one());
    let xn = kernels::rms_norm_rows(x);
    let a = kernels::mp_silu(&xn);
    let h = mp_linear_eval(&a, &fin.pre, None)?;
    let h = kernels::mp_silu(&kernels::mul(&h, &c)?);
    mp_linear_eval(&h, &fin.post, Some(final_out_gain))
}

/// D(x, sigma) = c_skip * x + c_out * F(c_in * x, c_noise), evaluated
/// without gradient recording.
pub fn denoise_eval<S: Scalar>(
    cfg: &DenoiserConfig,
    weights: &ModelWeights<S>,
    x: &Tensor2<S>,
    sigma: &[S],
) -> Result<Tensor2<S>> {
    if x.rows() != sigma.len() {
        return Err(GeodistError::LengthMismatch {
            expected: x.rows(),
            got: sigma.len(),
        });
    }
    if x.cols() != cfg.d_in {
        return Err(GeodistError::ShapeMismatch {
            op: "denoise",
            details: format!("input has {} channels, model expects {}", x.cols(), cfg.d_in),
        });
    }
    let p = precondition(sigma, cfg.sigma_data)?;
    let c_in = Tensor2::column(p.c_in);
    let x_in = kernels::scale_rows(x, &c_in)?;

    let mut h = embed_position_eval(cfg, weights, &x_in)?;
    let c_noise = Tensor2::column(p.c_noise);
    let four = mp_fourier_eval(&c_noise, &weights.freqs, &weights.phases)?;
    let act = kernels::mp_silu(&four);
    let t_emb = mp_linear_eval(&act, &weights.noise_proj, None)?;

    for block in &weights.blocks {
        h = middle_block_eval(&h, &t_emb, block, weights.emb_gain)?;
    }
    let f_out = final_block_eval(&h, &t_emb, &weights.fin, weights.final_emb_gain, weights.final_out_gain)?;

    let c_skip = Tensor2::column(p.c_skip);
    let c_out = Tensor2::column(p.c_out);
    let skip_term = kernels::scale_rows(x, &c_skip)?;
    let out_term = kernels::scale_rows(&f_out, &c_out)?;
    kernels::add(&skip_term, &out_term)
}

/// Handles of all parameter leaves registered on a tape, in layout order.
pub struct ParamIds {
    pub by_segment: Vec<TapeId>,
}

/// Register every parameter segment of `model` as a tape leaf.
pub fn register_params<S: Scalar>(tape: &mut Tape<S>, model: &DenoiserModel<S>) -> ParamIds {
    let by_segment = model
        .layout()
        .segments()
        .iter()
        .map(|seg| {
            let t = Tensor2::from_vec(
                seg.rows,
                seg.cols,
                model.params()[seg.range()].to_vec(),
            )
            .expect("layout is consistent");
            tape.param(t)
        })
        .collect();
    ParamIds { by_segment }
}

impl ParamIds {
    fn get(&self, model_layout: &super::SegmentLayout, name: &str) -> TapeId {
        let idx = model_layout
            .segments()
            .iter()
            .position(|s| s.name == name)
            .expect("segment exists");
        self.by_segment[idx]
    }
}

fn mp_linear_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: TapeId,
    w: TapeId,
    gain: Option<TapeId>,
) -> Result<TapeId> {
    let w_hat = tape.l2_norm_rows(w);
    let out = tape.matmul_nt(x, w_hat)?;
    Ok(match gain {
        Some(g) => tape.scale_by_scalar(out, g)?,
        None => out,
    })
}

fn middle_block_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: TapeId,
    t_emb: TapeId,
    emb: TapeId,
    pre: TapeId,
    post: TapeId,
    emb_gain: TapeId,
) -> Result<TapeId> {
    let c = mp_linear_tape(tape, t_emb, emb, Some(emb_gain))?;
    let c = tape.add_scalar(c, S::one());
    let xn = tape.rms_norm_rows(x);
    let a = tape.mp_silu(xn);
    let res = mp_linear_tape(tape, a, pre, None)?;
    let resc = tape.mul(res, c)?;
    let res = tape.mp_silu(resc);
    let res = mp_linear_tape(tape, res, post, None)?;
    tape.mp_sum(xn, res, 0.3)
}

/// Traced forward pass of D(x, sigma) on a tape, using previously
/// registered parameter leaves. Returns the handle of the output.
pub fn forward_tape<S: Scalar>(
    tape: &mut Tape<S>,
    model: &DenoiserModel<S>,
    ids: &ParamIds,
    x: &Tensor2<S>,
    sigma: &[S],
) -> Result<TapeId> {
    let cfg = &model.config;
    let layout = model.layout();
    if x.rows() != sigma.len() {
        return Err(GeodistError::LengthMismatch {
            expected: x.rows(),
            got: sigma.len(),
        });
    }
    let p = precondition(sigma, cfg.sigma_data)?;

    // constant inputs: x is data, the preconditioners depend only on sigma
    let c_in = Tensor2::column(p.c_in);
    let x_in_val = kernels::scale_rows(x, &c_in)?;
    let feats = position_fourier_features(&x_in_val, cfg.fourier_bands);
    let feats = tape.constant(feats);

    let input_proj = ids.get(layout, "input_proj");
    let mut h = mp_linear_tape(tape, feats, input_proj, None)?;

    let c_noise = tape.constant(Tensor2::column(p.c_noise));
    let freqs = ids.get(layout, "noise_embed.freqs");
    let phases = ids.get(layout, "noise_embed.phases");
    let z = tape.matmul(c_noise, freqs)?;
    let z = tape.add_rows(z, phases)?;
    let z = tape.scale(z, S::from_f64(TAU));
    let z = tape.cos(z);
    let four = tape.scale(z, S::from_f64(SQRT_2));
    let act = tape.mp_silu(four);
    let noise_proj = ids.get(layout, "noise_embed.proj");
    let t_emb = mp_linear_tape(tape, act, noise_proj, None)?;

    let emb_gain = ids.get(layout, "emb_gain");
    for i in 0..cfg.n_blocks {
        let emb = ids.get(layout, &format!("block{i}.emb_mp_linear"));
        let pre = ids.get(layout, &format!("block{i}.x_pre_mp_linear"));
        let post = ids.get(layout, &format!("block{i}.x_post_mp_linear"));
        h = middle_block_tape(tape, h, t_emb, emb, pre, post, emb_gain)?;
    }

    // final block
    let fin_emb = ids.get(layout, "final.emb_mp_linear");
    let fin_pre = ids.get(layout, "final.x_pre_mp_linear");
    let fin_post = ids.get(layout, "final.x_post_mp_linear");
    let final_emb_gain = ids.get(layout, "final_emb_gain");
    let final_out_gain = ids.get(layout, "final_out_gain");
    let c = mp_linear_tape(tape, t_emb, fin_emb, Some(final_emb_gain))?;
    let c = tape.add_scalar(c, S::one());
    let xn = tape.rms_norm_rows(h);
    let a = tape.mp_silu(xn);
    let hh = mp_linear_tape(tape, a, fin_pre, None)?;
    let hc = tape.mul(hh, c)?;
    let hs = tape.mp_silu(hc);
    let f_out = mp_linear_tape(tape, hs, fin_post, Some(final_out_gain))?;

    let x_const = tape.constant(x.clone());
    let c_skip = tape.constant(Tensor2::column(p.c_skip));
    let c_out = tape.constant(Tensor2::column(p.c_out));
    let skip_term = tape.scale_rows(x_const, c_skip)?;
    let out_term = tape.scale_rows(f_out, c_out)?;
    tape.add(skip_term, out_term)
}

/// Collect per-segment gradients back into a flat vector in layout order.
/// Segments the loss does not touch contribute zeros.
pub fn extract_grads<S: Scalar>(
    tape: &Tape<S>,
    model: &DenoiserModel<S>,
    ids: &ParamIds,
) -> Vec<S> {
    let mut flat = vec![S::zero(); model.param_count()];
    for (seg, &id) in model.layout().segments().iter().zip(&ids.by_segment) {
        if let Some(g) = tape.grad(id) {
            flat[seg.range()].copy_from_slice(g);
        }
    }
    flat
}

/// Which segments are renormalized after optimizer steps, as (offset, cols)
/// row descriptors. Used by the training loop.
pub fn mp_linear_segments(model_layout: &super::SegmentLayout) -> Vec<(usize, usize, usize)> {
    model_layout
        .segments()
        .iter()
        .filter(|s| s.kind == SegmentKind::MpLinear)
        .map(|s| (s.offset, s.rows, s.cols))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{kernels, Tape};
    use crate::seeding::{self, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            d_in: 3,
            fourier_bands: 8,
            sigma_data: 1.0,
        }
    }

    fn gaussian_tensor(rows: usize, cols: usize, seed: u64) -> Tensor2<f64> {
        let mut rng = seeding::rng(seed, Purpose::Eval, 99);
        Tensor2::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn column_stds(t: &Tensor2<f64>) -> Vec<f64> {
        (0..t.cols())
            .map(|j| {
                let mean: f64 = (0..t.rows()).map(|i| t.get(i, j)).sum::<f64>() / t.rows() as f64;
                let var: f64 = (0..t.rows())
                    .map(|i| (t.get(i, j) - mean).powi(2))
                    .sum::<f64>()
                    / t.rows() as f64;
                var.sqrt()
            })
            .collect()
    }

    #[test]
    fn fourier_features_at_zero() {
        let x = Tensor2::<f64>::zeros(1, 3);
        let f = position_fourier_features(&x, 4);
        for j in 0..3 {
            for k in 0..4 {
                assert_eq!(f.get(0, j * 8 + 2 * k), 0.0, "sin must be 0");
                assert_eq!(f.get(0, j * 8 + 2 * k + 1), 1.0, "cos must be 1");
            }
        }
    }

    #[test]
    fn embed_position_output_width_is_c() {
        for bands in [2, 8, 13] {
            let cfg = DenoiserConfig {
                channels: 24,
                n_blocks: 1,
                fourier_bands: bands,
                ..tiny_cfg()
            };
            let model = DenoiserModel::<f64>::init(cfg, 1).unwrap();
            let x = gaussian_tensor(5, 3, bands as u64);
            let e = embed_position_eval(&cfg, &model.weights(), &x).unwrap();
            assert_eq!(e.shape(), (5, 24));
        }
    }

    #[test]
    fn embed_position_is_deterministic() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 2).unwrap();
        let x = gaussian_tensor(7, 3, 5);
        let a = embed_position_eval(&cfg, &model.weights(), &x).unwrap();
        let b = embed_position_eval(&cfg, &model.weights(), &x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn embed_noise_distinguishes_levels_and_batches_identical_rows() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 3).unwrap();
        let w = model.weights();
        let e = embed_noise_eval(&cfg, &w, &[0.5, 1.0, 0.5]).unwrap();
        // identical t -> identical rows
        assert_eq!(e.row(0), e.row(2));
        // t vs 2t -> different embeddings
        let diff: f64 = e
            .row(0)
            .iter()
            .zip(e.row(1))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "embeddings degenerate in log space");
    }

    #[test]
    fn embed_noise_rejects_nonpositive_t() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 3).unwrap();
        assert!(embed_noise_eval(&cfg, &model.weights(), &[0.0]).is_err());
        assert!(embed_noise_eval(&cfg, &model.weights(), &[-1.0]).is_err());
    }

    #[test]
    fn embed_noise_row_std_is_magnitude_preserving() {
        // wide embedding so the per-row std estimate is tight
        let cfg = DenoiserConfig {
            channels: 512,
            n_blocks: 1,
            ..tiny_cfg()
        };
        let model = DenoiserModel::<f64>::init(cfg, 4).unwrap();
        let w = model.weights();
        let ts: Vec<f64> = vec![0.002, 0.01, 0.1, 0.3012, 1.0, 5.0, 20.0, 80.0];
        let e = embed_noise_eval(&cfg, &w, &ts).unwrap();
        for i in 0..ts.len() {
            let row = e.row(i);
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let var: f64 =
                row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            let std = var.sqrt();
            assert!(
                (0.8..=1.2).contains(&std),
                "t = {}: row std {std}",
                ts[i]
            );
        }
    }

    #[test]
    fn mp_silu_preserves_unit_gaussian_magnitude() {
        // "magnitude" is the RMS: 0.596 normalizes E[silu(x)^2] to 1
        let x = gaussian_tensor(1_000_000, 1, 6);
        let y = kernels::mp_silu(&x);
        let rms = (y.data().iter().map(|v| v * v).sum::<f64>() / y.data().len() as f64).sqrt();
        assert!((0.95..=1.05).contains(&rms), "rms = {rms}");
    }

    #[test]
    fn mp_sum_preserves_variance_of_independent_inputs() {
        let a = gaussian_tensor(1_000_000, 1, 7);
        let b = gaussian_tensor(1_000_000, 1, 8);
        let y = kernels::mp_sum(&a, &b, 0.3).unwrap();
        let var = column_stds(&y)[0].powi(2);
        assert!((var - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn mp_linear_identity_rows_select_channels() {
        // rows are scaled unit vectors; normalization makes them exact
        // selectors, so gain 1 returns the selected input channels
        let x = Tensor2::from_vec(2, 3, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor2::from_vec(2, 3, vec![5.0, 0.0, 0.0, 0.0, 0.25, 0.0]).unwrap();
        let y = mp_linear_eval(&x, &w, Some(1.0)).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((y.get(1, 1) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn mp_linear_gain_zero_gives_zero() {
        let x = gaussian_tensor(4, 8, 9);
        let w = gaussian_tensor(5, 8, 10);
        let y = mp_linear_eval(&x, &w, Some(0.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mp_linear_output_std_near_one() {
        let x = gaussian_tensor(200_000, 64, 11);
        let w = gaussian_tensor(8, 64, 12);
        let y = mp_linear_eval(&x, &w, None).unwrap();
        for std in column_stds(&y) {
            assert!((0.9..=1.1).contains(&std), "std = {std}");
        }
    }

    #[test]
    fn middle_block_zeroed_residual_is_scaled_normalize() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 13).unwrap();
        let mut w = model.weights();
        for v in w.blocks[0].post.data_mut() {
            *v = 0.0;
        }
        let x = gaussian_tensor(5, 16, 14);
        let out = middle_block_eval(&x, &gaussian_tensor(5, 16, 15), &w.blocks[0], w.emb_gain)
            .unwrap();
        let xn = kernels::rms_norm_rows(&x);
        let factor = 0.7 / 0.58f64.sqrt(); // = 0.91914...
        assert!((factor - 0.9191).abs() < 1e-4);
        for (o, e) in out.data().iter().zip(xn.data()) {
            assert!((o - e * factor).abs() < 1e-12);
        }
    }

    #[test]
    fn middle_block_input_scale_invariance() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 16).unwrap();
        let w = model.weights();
        let t_emb = gaussian_tensor(4, 16, 17);
        let x = gaussian_tensor(4, 16, 18);
        let x10 = kernels::scale(&x, 10.0);
        let a = middle_block_eval(&x, &t_emb, &w.blocks[0], w.emb_gain).unwrap();
        let b = middle_block_eval(&x10, &t_emb, &w.blocks[0], w.emb_gain).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() / u.abs().max(1.0) < 1e-3, "{u} vs {v}");
        }
    }

    #[test]
    fn middle_block_rms_stays_bounded_at_init() {
        // wide rows so the per-row RMS concentrates; the noise embedding is
        // the real one rather than synthetic Gaussian rows
        let cfg = DenoiserConfig {
            channels: 256,
            n_blocks: 1,
            ..tiny_cfg()
        };
        let model = DenoiserModel::<f64>::init(cfg, 19).unwrap();
        let w = model.weights();
        let x = gaussian_tensor(4_000, 256, 20);
        let mut rng = seeding::rng(21, Purpose::Eval, 0);
        let ts: Vec<f64> = (0..4_000)
            .map(|_| (rng.random_range(-1.2f64..1.2) * 1.2).exp())
            .collect();
        let t_emb = embed_noise_eval(&cfg, &w, &ts).unwrap();
        let out = middle_block_eval(&x, &t_emb, &w.blocks[0], w.emb_gain).unwrap();
        for r in kernels::row_rms(&out) {
            assert!((0.5..=2.0).contains(&r), "row rms {r}");
        }
    }

    #[test]
    fn stacked_blocks_keep_column_std_bounded() {
        // activation magnitude must not explode or vanish over depth
        let cfg = DenoiserConfig {
            channels: 32,
            n_blocks: 10,
            ..tiny_cfg()
        };
        let model = DenoiserModel::<f64>::init(cfg, 22).unwrap();
        let w = model.weights();
        let mut h = gaussian_tensor(100_000, 32, 23);
        let t_emb = gaussian_tensor(100_000, 32, 24);
        for (k, block) in w.blocks.iter().enumerate() {
            h = middle_block_eval(&h, &t_emb, block, w.emb_gain).unwrap();
            for std in column_stds(&h) {
                assert!((0.5..=2.0).contains(&std), "block {k}: column std {std}");
            }
        }
    }

    #[test]
    fn final_block_gain_zero_is_zero_output_with_right_shape() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 25).unwrap();
        let w = model.weights();
        assert_eq!(w.final_out_gain, 0.0);
        let out = final_block_eval(
            &gaussian_tensor(6, 16, 26),
            &gaussian_tensor(6, 16, 27),
            &w.fin,
            w.final_emb_gain,
            w.final_out_gain,
        )
        .unwrap();
        assert_eq!(out.shape(), (6, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn precondition_plugin_values() {
        // sigma_data = 1, sigma = 1
        let p = precondition(&[1.0f64], 1.0).unwrap();
        assert!((p.c_skip[0] - 0.5).abs() < 1e-12);
        assert!((p.c_out[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((p.c_in[0] - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(p.c_noise[0].abs() < 1e-12);
        assert!(precondition(&[0.0f64], 1.0).is_err());
    }

    #[test]
    fn denoise_approaches_identity_as_sigma_vanishes() {
        let cfg = tiny_cfg();
        let mut model = DenoiserModel::<f64>::init(cfg, 28).unwrap();
        // give the output branch some signal so the limit is non-trivial
        if let Some(seg) = model.layout().get("final_out_gain") {
            let r = seg.range();
            model.params_mut()[r.start] = 1.0;
        }
        let x = gaussian_tensor(8, 3, 29);
        let sigma = vec![1e-6f64; 8];
        let d = model.denoise(&x, &sigma).unwrap();
        for (a, b) in d.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn denoise_rejects_nonpositive_sigma_and_bad_shapes() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f64>::init(cfg, 30).unwrap();
        let x = gaussian_tensor(4, 3, 31);
        assert!(model.denoise(&x, &[1.0, 1.0, 0.0, 1.0]).is_err());
        assert!(model.denoise(&x, &[1.0, 1.0]).is_err());
        let bad = gaussian_tensor(4, 6, 32);
        assert!(model.denoise(&bad, &[1.0; 4]).is_err());
    }

    #[test]
    fn denoise_is_bit_stable_across_runs() {
        let cfg = tiny_cfg();
        let model = DenoiserModel::<f32>::init(cfg, 33).unwrap();
        let x = gaussian_tensor(16, 3, 34).cast::<f32>();
        let sigma = vec![0.7f32; 16];
        let a = model.denoise(&x, &sigma).unwrap();
        let b = model.denoise(&x, &sigma).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn traced_forward_matches_eval_bitwise() {
        let cfg = tiny_cfg();
        let mut model = DenoiserModel::<f32>::init(cfg, 35).unwrap();
        // non-zero final gain so the whole network participates
        let r = model.layout().get("final_out_gain").unwrap().range();
        model.params_mut()[r.start] = 0.8;
        let x = gaussian_tensor(10, 3, 36).cast::<f32>();
        let sigma: Vec<f32> = (0..10).map(|i| 0.1 + 0.3 * i as f32).collect();
        let eval = model.denoise(&x, &sigma).unwrap();
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &model);
        let out = forward_tape(&mut tape, &model, &ids, &x, &sigma).unwrap();
        assert_eq!(tape.value(out).data(), eval.data());
    }

    #[test]
    fn denoise_gradient_matches_finite_differences_per_segment() {
        // tiny config, f64 storage, central differences with h = 1e-5
        let cfg = tiny_cfg();
        let mut model = DenoiserModel::<f64>::init(cfg, 37).unwrap();
        let r = model.layout().get("final_out_gain").unwrap().range();
        model.params_mut()[r.start] = 0.5;

        let x = gaussian_tensor(6, 3, 38);
        let sigma: Vec<f64> = vec![0.3, 0.9, 2.0, 0.5, 1.5, 4.0];
        let mut wrng = seeding::rng(39, Purpose::Eval, 0);
        let w = Tensor2::<f64>::from_fn(6, 3, |_, _| wrng.random_range(0.25..1.0));

        let loss_of = |m: &DenoiserModel<f64>| -> f64 {
            let out = m.denoise(&x, &sigma).unwrap();
            out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };

        // tape gradients
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &model);
        let out = forward_tape(&mut tape, &model, &ids, &x, &sigma).unwrap();
        let wid = tape.constant(w.clone());
        let prod = tape.mul(out, wid).unwrap();
        let m = tape.mean_all(prod);
        let loss = tape.scale(m, 18.0);
        tape.backward(loss).unwrap();
        let grads = extract_grads(&tape, &model, &ids);

        let h = 1e-5;
        for seg in model.layout().segments().iter() {
            let mut err_sq = 0.0;
            let mut ad_sq = 0.0;
            let mut fd_sq = 0.0;
            for off in seg.range() {
                let mut mp = model.clone();
                mp.params_mut()[off] += h;
                let mut mm = model.clone();
                mm.params_mut()[off] -= h;
                let fd = (loss_of(&mp) - loss_of(&mm)) / (2.0 * h);
                let ad = grads[off];
                err_sq += (ad - fd) * (ad - fd);
                ad_sq += ad * ad;
                fd_sq += fd * fd;
            }
            let denom = ad_sq.sqrt().max(fd_sq.sqrt());
            if denom == 0.0 {
                continue; // segment not reached by this loss
            }
            let rel = err_sq.sqrt() / denom;
            assert!(rel < 1e-3, "{}: rel err {rel:.3e}", seg.name);
        }
    }
}
