//! The denoiser network D(x, sigma).
//!
//! Architecture: Fourier position embedding projected to width C, a
//! magnitude-preserving Fourier embedding of the noise level, a stack of
//! identical middle blocks modulated by the noise embedding, and a final
//! block projecting back to point channels. The whole thing sits behind
//! EDM-style preconditioning, so the raw network only ever sees inputs
//! scaled to unit variance.

mod forward;

pub use forward::{
    denoise_eval, embed_noise_eval, embed_position_eval, extract_grads, final_block_eval,
    forward_tape, middle_block_eval, mp_linear_eval, mp_linear_segments,
    position_fourier_features, precondition, register_params, ParamIds, Precond,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor2};
use crate::error::{GeodistError, Result};
use crate::geometry::PointSet;
use crate::sampler::PointDenoiser;
use crate::seeding::{self, Purpose};
use rand::Rng;
use rand_distr::StandardNormal;

/// Network shape. The paper-scale configuration is the default; desk-scale
/// runs shrink `channels` and `n_blocks` through the run config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Width C of every linear layer.
    pub channels: usize,
    /// Number of middle blocks.
    pub n_blocks: usize,
    /// Point channels: 3 (positions) or 6 (positions + color).
    pub d_in: usize,
    /// Octaves in the position embedding.
    pub fourier_bands: usize,
    /// Expected data standard deviation for preconditioning.
    pub sigma_data: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 512,
            n_blocks: 6,
            d_in: 3,
            fourier_bands: 8,
            sigma_data: 1.0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 8 {
            return Err(GeodistError::Config(format!(
                "denoiser.channels must be >= 8, got {}",
                self.channels
            )));
        }
        if self.n_blocks < 1 {
            return Err(GeodistError::Config("denoiser.n_blocks must be >= 1".into()));
        }
        if self.d_in != 3 && self.d_in != 6 {
            return Err(GeodistError::Config(format!(
                "denoiser.d_in must be 3 or 6, got {}",
                self.d_in
            )));
        }
        if self.fourier_bands < 1 {
            return Err(GeodistError::Config("denoiser.fourier_bands must be >= 1".into()));
        }
        if !(self.sigma_data > 0.0) {
            return Err(GeodistError::Config("denoiser.sigma_data must be positive".into()));
        }
        Ok(())
    }

    /// Width of the position Fourier feature vector.
    pub fn pos_features(&self) -> usize {
        2 * self.fourier_bands * self.d_in
    }
}

/// How a segment behaves under training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// Weight matrix whose rows are kept at unit L2 norm.
    MpLinear,
    /// Free vector (Fourier frequencies / phases).
    Vector,
    /// Learned scalar gain.
    Gain,
}

/// One named slice of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct SegmentDef {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub kind: SegmentKind,
}

impl SegmentDef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segment map partitioning the flat parameter vector exactly.
#[derive(Debug, Clone)]
pub struct SegmentLayout {
    segments: Vec<SegmentDef>,
    total: usize,
}

impl SegmentLayout {
    pub fn for_config(cfg: &DenoiserConfig) -> Self {
        let c = cfg.channels;
        let mut b = LayoutBuilder::default();
        b.push("input_proj", c, cfg.pos_features(), SegmentKind::MpLinear);
        b.push("noise_embed.freqs", 1, c, SegmentKind::Vector);
        b.push("noise_embed.phases", 1, c, SegmentKind::Vector);
        b.push("noise_embed.proj", c, c, SegmentKind::MpLinear);
        for i in 0..cfg.n_blocks {
            b.push(&format!("block{i}.emb_mp_linear"), c, c, SegmentKind::MpLinear);
            b.push(&format!("block{i}.x_pre_mp_linear"), c, c, SegmentKind::MpLinear);
            b.push(&format!("block{i}.x_post_mp_linear"), c, c, SegmentKind::MpLinear);
        }
        b.push("final.emb_mp_linear", c, c, SegmentKind::MpLinear);
        b.push("final.x_pre_mp_linear", c, c, SegmentKind::MpLinear);
        b.push("final.x_post_mp_linear", cfg.d_in, c, SegmentKind::MpLinear);
        b.push("emb_gain", 1, 1, SegmentKind::Gain);
        b.push("final_emb_gain", 1, 1, SegmentKind::Gain);
        b.push("final_out_gain", 1, 1, SegmentKind::Gain);
        SegmentLayout {
            segments: b.segments,
            total: b.offset,
        }
    }

    pub fn segments(&self) -> &[SegmentDef] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&SegmentDef> {
        self.segments.iter().find(|s| s.name == name)
    }
}

#[derive(Default)]
struct LayoutBuilder {
    segments: Vec<SegmentDef>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &str, rows: usize, cols: usize, kind: SegmentKind) {
        self.segments.push(SegmentDef {
            name: name.to_string(),
            rows,
            cols,
            offset: self.offset,
            kind,
        });
        self.offset += rows * cols;
    }
}

/// Total parameter count for a configuration.
pub fn param_count(cfg: &DenoiserConfig) -> usize {
    SegmentLayout::for_config(cfg).total_len()
}

/// The denoiser: a configuration plus a flat parameter vector carved into
/// named segments.
#[derive(Debug, Clone)]
pub struct DenoiserModel<S> {
    pub config: DenoiserConfig,
    layout: SegmentLayout,
    params: Vec<S>,
}

impl<S: Scalar> DenoiserModel<S> {
    /// Fresh initialization: mp_linear weights are standard normal rows
    /// normalized to unit L2; Fourier frequencies are standard normal,
    /// phases uniform in [0, 1); gains start at (1, 1, 0).
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = SegmentLayout::for_config(&config);
        let mut params = vec![S::zero(); layout.total_len()];
        let mut rng = seeding::rng(seed, Purpose::ModelInit, 0);
        for seg in layout.segments() {
            let slice = &mut params[seg.range()];
            match seg.kind {
                SegmentKind::MpLinear => {
                    for v in slice.iter_mut() {
                        *v = S::from_f64(rng.sample::<f64, _>(StandardNormal));
                    }
                }
                SegmentKind::Vector => {
                    let uniform = seg.name.ends_with("phases");
                    for v in slice.iter_mut() {
                        *v = S::from_f64(if uniform {
                            rng.random::<f64>()
                        } else {
                            rng.sample::<f64, _>(StandardNormal)
                        });
                    }
                }
                SegmentKind::Gain => {
                    slice[0] = if seg.name == "final_out_gain" {
                        S::zero()
                    } else {
                        S::one()
                    };
                }
            }
        }
        let mut model = DenoiserModel {
            config,
            layout,
            params,
        };
        model.renormalize_weights();
        Ok(model)
    }

    /// Rebuild from a flat parameter vector (checkpoint load).
    pub fn from_params(config: DenoiserConfig, params: Vec<S>) -> Result<Self> {
        config.validate()?;
        let layout = SegmentLayout::for_config(&config);
        if params.len() != layout.total_len() {
            return Err(GeodistError::LengthMismatch {
                expected: layout.total_len(),
                got: params.len(),
            });
        }
        Ok(DenoiserModel {
            config,
            layout,
            params,
        })
    }

    pub fn layout(&self) -> &SegmentLayout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn segment(&self, name: &str) -> Option<&[S]> {
        self.layout.get(name).map(|s| &self.params[s.range()])
    }

    /// Copy a segment out as a tensor.
    pub fn segment_tensor(&self, name: &str) -> Option<Tensor2<S>> {
        let seg = self.layout.get(name)?;
        Tensor2::from_vec(seg.rows, seg.cols, self.params[seg.range()].to_vec()).ok()
    }

    /// Force every mp_linear weight row back to unit L2 norm. Applied after
    /// every optimizer step.
    pub fn renormalize_weights(&mut self) {
        for seg in self.layout.segments() {
            if seg.kind != SegmentKind::MpLinear {
                continue;
            }
            let slice = &mut self.params[seg.range()];
            for row in slice.chunks_mut(seg.cols) {
                let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
                if norm > S::from_f64(1e-30) {
                    for v in row {
                        *v = *v / norm;
                    }
                }
            }
        }
    }

    /// Extracted working copies of all weights, for the eval forward pass.
    pub fn weights(&self) -> ModelWeights<S> {
        let t = |name: &str| self.segment_tensor(name).expect("segment exists");
        let g = |name: &str| self.segment(name).expect("segment exists")[0];
        ModelWeights {
            input_proj: t("input_proj"),
            freqs: t("noise_embed.freqs"),
            phases: t("noise_embed.phases"),
            noise_proj: t("noise_embed.proj"),
            blocks: (0..self.config.n_blocks)
                .map(|i| BlockWeights {
                    emb: t(&format!("block{i}.emb_mp_linear")),
                    pre: t(&format!("block{i}.x_pre_mp_linear")),
                    post: t(&format!("block{i}.x_post_mp_linear")),
                })
                .collect(),
            fin: BlockWeights {
                emb: t("final.emb_mp_linear"),
                pre: t("final.x_pre_mp_linear"),
                post: t("final.x_post_mp_linear"),
            },
            emb_gain: g("emb_gain"),
            final_emb_gain: g("final_emb_gain"),
            final_out_gain: g("final_out_gain"),
        }
    }

    /// D(x, sigma) without recording gradients. `sigma` is per-row.
    pub fn denoise(&self, x: &Tensor2<S>, sigma: &[S]) -> Result<Tensor2<S>> {
        denoise_eval(&self.config, &self.weights(), x, sigma)
    }
}

impl DenoiserModel<f32> {
    /// Frozen snapshot for sampling: weights extracted once, shareable
    /// across threads.
    pub fn frozen(&self) -> FrozenDenoiser {
        FrozenDenoiser {
            config: self.config,
            weights: self.weights(),
        }
    }
}

/// One middle (or final) block's weight matrices.
#[derive(Debug, Clone)]
pub struct BlockWeights<S> {
    pub emb: Tensor2<S>,
    pub pre: Tensor2<S>,
    pub post: Tensor2<S>,
}

/// All weights of a model, extracted for evaluation.
#[derive(Debug, Clone)]
pub struct ModelWeights<S> {
    pub input_proj: Tensor2<S>,
    pub freqs: Tensor2<S>,
    pub phases: Tensor2<S>,
    pub noise_proj: Tensor2<S>,
    pub blocks: Vec<BlockWeights<S>>,
    pub fin: BlockWeights<S>,
    pub emb_gain: S,
    pub final_emb_gain: S,
    pub final_out_gain: S,
}

/// Immutable f32 model usable by the point samplers.
pub struct FrozenDenoiser {
    config: DenoiserConfig,
    weights: ModelWeights<f32>,
}

impl PointDenoiser for FrozenDenoiser {
    fn channels(&self) -> usize {
        self.config.d_in
    }

    fn denoise(&self, x: &[f64], t: f64) -> Vec<f64> {
        let d = self.config.d_in;
        let n = x.len() / d;
        let xt = Tensor2::from_vec(n, d, x.iter().map(|&v| v as f32).collect())
            .expect("row-major point rows");
        let sigma = vec![t as f32; n];
        let out = denoise_eval(&self.config, &self.weights, &xt, &sigma)
            .expect("positive t and matching channels");
        out.data().iter().map(|&v| v as f64).collect()
    }
}

/// Convenience: denoise a `PointSet` at a shared noise level.
pub fn denoise_points(model: &DenoiserModel<f32>, points: &PointSet, t: f64) -> Result<PointSet> {
    if t <= 0.0 {
        return Err(GeodistError::NonPositiveSigma { sigma: t });
    }
    let frozen = model.frozen();
    let out = PointDenoiser::denoise(&frozen, points.data(), t);
    PointSet::new(points.channels(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_partitions_exactly() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        let layout = SegmentLayout::for_config(&cfg);
        let mut expected_offset = 0;
        for seg in layout.segments() {
            assert_eq!(seg.offset, expected_offset, "gap before {}", seg.name);
            expected_offset += seg.len();
        }
        assert_eq!(expected_offset, layout.total_len());
    }

    #[test]
    fn param_count_matches_paper_table() {
        // 2/4/6/8/10 blocks at C=512 -> 2.38, 3.96, 5.53, 7.11, 8.68 million
        let expected = [(2, 2.38e6), (4, 3.96e6), (6, 5.53e6), (8, 7.11e6), (10, 8.68e6)];
        for (blocks, count) in expected {
            let cfg = DenoiserConfig {
                n_blocks: blocks,
                ..Default::default()
            };
            let n = param_count(&cfg) as f64;
            assert!(
                (n - count).abs() / count < 0.01,
                "{blocks} blocks: {n} vs {count}"
            );
        }
    }

    #[test]
    fn paper_scale_param_count_within_band() {
        let n = param_count(&DenoiserConfig::default()) as f64;
        assert!((4.98e6..=6.08e6).contains(&n), "param count {n}");
    }

    #[test]
    fn init_rows_are_unit_norm() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        let model = DenoiserModel::<f32>::init(cfg, 0).unwrap();
        for seg in model.layout().segments() {
            if seg.kind != SegmentKind::MpLinear {
                continue;
            }
            let s = model.segment(&seg.name).unwrap();
            for row in s.chunks(seg.cols) {
                let norm = row.iter().map(|&v| (v as f64) * v as f64).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "{}: row norm {norm}", seg.name);
            }
        }
    }

    #[test]
    fn gains_initialize_to_1_1_0() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        let model = DenoiserModel::<f64>::init(cfg, 3).unwrap();
        assert_eq!(model.segment("emb_gain").unwrap()[0], 1.0);
        assert_eq!(model.segment("final_emb_gain").unwrap()[0], 1.0);
        assert_eq!(model.segment("final_out_gain").unwrap()[0], 0.0);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        let a = DenoiserModel::<f32>::init(cfg, 7).unwrap();
        let b = DenoiserModel::<f32>::init(cfg, 7).unwrap();
        let c = DenoiserModel::<f32>::init(cfg, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn from_params_checks_length() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        assert!(DenoiserModel::from_params(cfg, vec![0.0f32; 3]).is_err());
    }

    #[test]
    fn renormalize_restores_unit_rows_after_perturbation() {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 1,
            ..Default::default()
        };
        let mut model = DenoiserModel::<f64>::init(cfg, 1).unwrap();
        for v in model.params_mut() {
            *v += 0.05;
        }
        model.renormalize_weights();
        let seg = model.layout().get("block0.x_pre_mp_linear").unwrap().clone();
        let s = model.segment(&seg.name).unwrap();
        for row in s.chunks(seg.cols) {
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
}
