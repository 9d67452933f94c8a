//! Model checkpoints: the tensor container under magic `CMCK`.
//!
//! Metadata block: `u32 D_feat`, `u32 H`, `u32 L`, `u8 mode` (0 weak,
//! 1 supervised), `u8 loss variant` (0 literal, 1 log), `u8 attention` (0 learnt,
//! 1 uniform), then the action name
//! as `u32` length plus UTF-8 bytes.

use std::path::Path;

use super::params::{AttentionKind, Branch, LossVariant, ModelMeta, ModelParams, Mode, TENSOR_NAMES};
use crate::checkpoint::{self, take_tensor, Cursor};
use crate::error::Result;
use crate::numerics::CellParams;

pub const MODEL_MAGIC: &[u8; 4] = b"CMCK";

fn encode_meta(meta: &ModelMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(meta.d_feat as u32).to_le_bytes());
    out.extend_from_slice(&(meta.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(meta.length as u32).to_le_bytes());
    out.push(match meta.mode {
        Mode::Weak => 0,
        Mode::Supervised => 1,
    });
    out.push(match meta.variant {
        LossVariant::Literal => 0,
        LossVariant::Log => 1,
    });
    out.push(match meta.attention {
        AttentionKind::Learnt => 0,
        AttentionKind::Uniform => 1,
    });
    out.extend_from_slice(&(meta.action.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.action.as_bytes());
    out
}

pub fn to_bytes(p: &ModelParams) -> Vec<u8> {
    checkpoint::encode(MODEL_MAGIC, &encode_meta(&p.meta), &p.tensors())
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let decoded = checkpoint::decode(MODEL_MAGIC, bytes, path)?;
    let mut c = Cursor::new(&decoded.metadata, path);
    let base = decoded.metadata_offset;
    let d_feat = c.u32("D_feat")? as usize;
    let hidden = c.u32("H")? as usize;
    let length = c.u32("L")? as usize;
    let mode = match c.u8("mode")? {
        0 => Mode::Weak,
        1 => Mode::Supervised,
        other => return Err(c.fail(base + 12, format!("unknown mode byte {other}"))),
    };
    let variant = match c.u8("loss variant")? {
        0 => LossVariant::Literal,
        1 => LossVariant::Log,
        other => return Err(c.fail(base + 13, format!("unknown loss variant byte {other}"))),
    };
    let attention = match c.u8("attention")? {
        0 => AttentionKind::Learnt,
        1 => AttentionKind::Uniform,
        other => return Err(c.fail(base + 14, format!("unknown attention byte {other}"))),
    };
    let action = c.string("action")?;
    c.finish()?;
    let meta = ModelMeta {
        d_feat,
        hidden,
        length,
        mode,
        variant,
        attention,
        action,
    };
    let mut tensors = decoded.tensors;
    let g = 4 * hidden;
    let shapes = [(g, d_feat), (g, hidden), (g, 1), (1, hidden), (1, 1)];
    let mut branch = |prefix: usize| -> Result<Branch> {
        let mut take = |k: usize| take_tensor(&mut tensors, TENSOR_NAMES[prefix + k], shapes[k], path);
        let cell = CellParams::new(take(0)?, take(1)?, take(2)?)?;
        Ok(Branch {
            cell,
            proj_weights: take(3)?,
            proj_bias: take(4)?,
        })
    };
    let attention = branch(0)?;
    let score = branch(5)?;
    ModelParams::from_branches(meta, attention, score)
}

pub fn save(p: &ModelParams, path: &Path) -> Result<()> {
    checkpoint::write_file(path, &to_bytes(p))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&checkpoint::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip() {
        let meta = ModelMeta { d_feat: 4, hidden: 3, length: 9, mode: Mode::Supervised, variant: LossVariant::Log, attention: AttentionKind::Learnt, action: "blowing candles".into() };
        let p = ModelParams::init(meta, 5).unwrap();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"CMCK");
        let back = from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, p);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_mode_byte() {
        let meta = ModelMeta { d_feat: 2, hidden: 2, length: 3, mode: Mode::Weak, variant: LossVariant::Literal, attention: AttentionKind::Learnt, action: "a".into() };
        let mut bytes = to_bytes(&ModelParams::init(meta, 1).unwrap());
        bytes[12 + 12] = 7;
        match from_bytes(&bytes, Path::new("m")).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 24),
            other => panic!("unexpected {other:?}"),
        }
    }
}
