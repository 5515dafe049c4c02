//! Binary checkpoint format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "GEODIST1"                      8 bytes
//! format version                         u32
//! meta JSON length, then bytes           u32 + n
//! segment count                          u32
//!   per segment: name length             u16
//!                name bytes              utf-8
//!                offset (elements)       u64
//!                length (elements)       u64
//! parameter blob                         f32 * total
//! CRC32 of everything above              u32
//! ```
//!
//! The segment table must partition the blob exactly; offsets and lengths
//! count f32 elements.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline_vf::{VectorFieldModel, VfArch};
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::error::{GeodistError, Result};
use crate::geometry::NormTransform;

pub const MAGIC: &[u8; 8] = b"GEODIST1";
pub const FORMAT_VERSION: u32 = 1;

/// What kind of model a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Diffusion,
    VectorField,
}

/// JSON header embedded in every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<DenoiserConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vf: Option<VfArch>,
    pub transform: NormTransform,
    pub tool_version: String,
}

/// A parsed checkpoint: header, named segments, and the flat blob.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub segments: Vec<(String, std::ops::Range<usize>)>,
    pub params: Vec<f32>,
}

fn bad(msg: impl Into<String>) -> GeodistError {
    GeodistError::Checkpoint(msg.into())
}

/// Serialize a checkpoint to bytes.
pub fn to_bytes(
    meta: &CheckpointMeta,
    segments: &[(String, std::ops::Range<usize>)],
    params: &[f32],
) -> Result<Vec<u8>> {
    let meta_json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(64 + meta_json.len() + params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for (name, range) in segments {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(range.start as u64).to_le_bytes());
        out.extend_from_slice(&(range.len() as u64).to_le_bytes());
    }
    for &v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse checkpoint bytes, verifying magic, version, CRC, and that the
/// segment table partitions the blob exactly.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 {
        return Err(bad("file too short"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if expected != actual {
        return Err(bad(format!("CRC mismatch: stored {expected:#010x}, computed {actual:#010x}")));
    }

    let mut cur = body;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };

    if take(8)? != MAGIC {
        return Err(bad("bad magic (not a geodist checkpoint)"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(meta_len)?)?;
    let n_segments = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| bad("segment name is not utf-8"))?
            .to_string();
        let offset = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        segments.push((name, offset..offset + len));
    }
    let blob = cur;
    if blob.len() % 4 != 0 {
        return Err(bad("parameter blob is not a whole number of f32s"));
    }
    let total = blob.len() / 4;
    let params: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // the table must tile [0, total) without gaps or overlap
    let mut sorted: Vec<_> = segments.iter().map(|(_, r)| r.clone()).collect();
    sorted.sort_by_key(|r| r.start);
    let mut cursor = 0;
    for r in &sorted {
        if r.start != cursor {
            return Err(bad(format!(
                "segment table has a gap or overlap at element {cursor}"
            )));
        }
        cursor = r.end;
    }
    if cursor != total {
        return Err(bad(format!(
            "segment table covers {cursor} elements, blob has {total}"
        )));
    }

    Ok(Checkpoint {
        meta,
        segments,
        params,
    })
}

pub fn save(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    segments: &[(String, std::ops::Range<usize>)],
    params: &[f32],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(meta, segments, params)?;
    fs::write(path, bytes).map_err(|e| GeodistError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GeodistError::io(path, e))?;
    from_bytes(&bytes)
}

/// Save a trained denoiser with its normalization transform.
pub fn save_denoiser(
    path: impl AsRef<Path>,
    model: &DenoiserModel<f32>,
    transform: NormTransform,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::Diffusion,
        denoiser: Some(model.config),
        vf: None,
        transform,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let segments: Vec<(String, std::ops::Range<usize>)> = model
        .layout()
        .segments()
        .iter()
        .map(|s| (s.name.clone(), s.range()))
        .collect();
    save(path, &meta, &segments, model.params())
}

/// Save a trained vector-field baseline.
pub fn save_vf(
    path: impl AsRef<Path>,
    model: &VectorFieldModel<f32>,
    transform: NormTransform,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::VectorField,
        denoiser: None,
        vf: Some(model.arch.clone()),
        transform,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    save(path, &meta, &model.segments(), model.params())
}

/// A model reconstructed from a checkpoint.
pub enum LoadedModel {
    Diffusion(DenoiserModel<f32>, NormTransform),
    VectorField(VectorFieldModel<f32>, NormTransform),
}

/// Load and reconstruct whichever model a checkpoint holds, verifying that
/// the stored segment table matches the layout derived from the config.
pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let ck = load(path)?;
    match ck.meta.kind {
        ModelKind::Diffusion => {
            let cfg = ck
                .meta
                .denoiser
                .ok_or_else(|| bad("diffusion checkpoint missing denoiser config"))?;
            let model = DenoiserModel::from_params(cfg, ck.params)?;
            for seg in model.layout().segments() {
                let found = ck
                    .segments
                    .iter()
                    .find(|(n, _)| *n == seg.name)
                    .ok_or_else(|| bad(format!("missing segment `{}`", seg.name)))?;
                if found.1 != seg.range() {
                    return Err(bad(format!(
                        "segment `{}` has range {:?}, expected {:?}",
                        seg.name,
                        found.1,
                        seg.range()
                    )));
                }
            }
            Ok(LoadedModel::Diffusion(model, ck.meta.transform))
        }
        ModelKind::VectorField => {
            let arch = ck
                .meta
                .vf
                .ok_or_else(|| bad("vector-field checkpoint missing architecture"))?;
            let model = VectorFieldModel::from_params(arch, ck.params)?;
            Ok(LoadedModel::VectorField(model, ck.meta.transform))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> DenoiserModel<f32> {
        let cfg = DenoiserConfig {
            channels: 16,
            n_blocks: 2,
            ..Default::default()
        };
        DenoiserModel::init(cfg, 5).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = tiny_model();
        let t = NormTransform {
            shift: [0.5, 0.5, 0.5],
            scale: 1.7,
        };
        save_denoiser(&p, &model, t).unwrap();
        match load_model(&p).unwrap() {
            LoadedModel::Diffusion(back, t2) => {
                assert_eq!(back.params(), model.params());
                assert_eq!(back.config, model.config);
                assert_eq!(t2, t);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupted_byte_fails_crc() {
        let model = tiny_model();
        let meta = CheckpointMeta {
            kind: ModelKind::Diffusion,
            denoiser: Some(model.config),
            vf: None,
            transform: NormTransform::identity(),
            tool_version: "test".into(),
        };
        let segments: Vec<_> = model
            .layout()
            .segments()
            .iter()
            .map(|s| (s.name.clone(), s.range()))
            .collect();
        let mut bytes = to_bytes(&meta, &segments, model.params()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = b"NOTGEODI".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn gap_in_segment_table_is_rejected() {
        let meta = CheckpointMeta {
            kind: ModelKind::Diffusion,
            denoiser: None,
            vf: None,
            transform: NormTransform::identity(),
            tool_version: "test".into(),
        };
        let segments = vec![("a".to_string(), 0..2), ("b".to_string(), 3..4)];
        let bytes = to_bytes(&meta, &segments, &[0.0; 4]).unwrap();
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("gap"), "{err}");
    }
}
