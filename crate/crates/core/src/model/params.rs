use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{CellParams, Tensor2};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Weak,
    Supervised,
}

/// Form of the weak sequence-level loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    /// `-(y p + (1 - y)(1 - p))`, no logarithm.
    Literal,
    /// Binary cross-entropy.
    Log,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Weak => "weak",
            Mode::Supervised => "supervised",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Mode::Weak),
            "supervised" => Ok(Mode::Supervised),
            _ => Err(Error::config(format!("unknown mode {s:?} (weak|supervised)"))),
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Literal => "literal",
            LossVariant::Log => "log",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(LossVariant::Literal),
            "log" => Ok(LossVariant::Log),
            _ => Err(Error::config(format!("unknown loss variant {s:?} (literal|log)"))),
        }
    }
}

/// Whether attention is learnt or held at `1/T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Learnt,
    Uniform,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::Learnt => "learnt",
            AttentionKind::Uniform => "uniform",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnt" => Ok(AttentionKind::Learnt),
            "uniform" => Ok(AttentionKind::Uniform),
            _ => Err(Error::config(format!("unknown attention {s:?} (learnt|uniform)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub d_feat: usize,
    pub hidden: usize,
    /// Fixed sequence length every input is resampled to.
    pub length: usize,
    pub mode: Mode,
    pub variant: LossVariant,
    /// Attention used in training; a uniform model never updates its
    /// attention branch and infers with `1/T`.
    pub attention: AttentionKind,
    pub action: String,
}

/// An LSTM followed by a linear `H -> 1` read-out per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub cell: CellParams,
    pub proj_weights: Tensor2,
    pub proj_bias: Tensor2,
}

impl Branch {
    fn init<R: Rng>(d_feat: usize, hidden: usize, zero_projection: bool, rng: &mut R) -> Self {
        let cell = CellParams::init(d_feat, hidden, rng);
        let k = 1.0 / (hidden as f64).sqrt();
        let proj_weights = if zero_projection {
            Tensor2::zeros(1, hidden)
        } else {
            Tensor2::from_fn(1, hidden, |_, _| rng.gen_range(-k..k))
        };
        Branch {
            cell,
            proj_weights,
            proj_bias: Tensor2::zeros(1, 1),
        }
    }

    fn check(&self, d_feat: usize, hidden: usize, name: &str) -> Result<()> {
        let c = &self.cell;
        if c.input_size() != d_feat
            || c.hidden_size() != hidden
            || self.proj_weights.shape() != (1, hidden)
            || self.proj_bias.shape() != (1, 1)
        {
            return Err(Error::shape(format!("{name} branch does not match D={d_feat}, H={hidden}")));
        }
        Ok(())
    }

    fn tensors(&self) -> [&Tensor2; 5] {
        [
            &self.cell.input_weights,
            &self.cell.recurrent_weights,
            &self.cell.biases,
            &self.proj_weights,
            &self.proj_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2; 5] {
        [
            &mut self.cell.input_weights,
            &mut self.cell.recurrent_weights,
            &mut self.cell.biases,
            &mut self.proj_weights,
            &mut self.proj_bias,
        ]
    }
}

/// Trainable weights of the attention and completion-score networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub meta: ModelMeta,
    pub attention: Branch,
    pub score: Branch,
}

/// Checkpoint and gradient order. The first five belong to the attention
/// branch.
pub const TENSOR_NAMES: [&str; 10] = [
    "attention.input_weights",
    "attention.recurrent_weights",
    "attention.biases",
    "attention.proj_weights",
    "attention.proj_bias",
    "score.input_weights",
    "score.recurrent_weights",
    "score.biases",
    "score.proj_weights",
    "score.proj_bias",
];

impl ModelParams {
    /// Random initialization from `seed`. In supervised mode, and for uniform
    /// attention, the attention read-out starts at zero so attention is `1/T`.
    pub fn init(meta: ModelMeta, seed: u64) -> Result<Self> {
        if meta.d_feat == 0 || meta.hidden == 0 || meta.length == 0 {
            return Err(Error::config("D_feat, H and L must all be positive"));
        }
        let mut rng = rng::stream(seed, "model/init");
        let attention = Branch::init(meta.d_feat, meta.hidden, meta.mode == Mode::Supervised || meta.attention == AttentionKind::Uniform, &mut rng);
        let score = Branch::init(meta.d_feat, meta.hidden, false, &mut rng);
        Ok(ModelParams {
            meta,
            attention,
            score,
        })
    }

    pub fn from_branches(meta: ModelMeta, attention: Branch, score: Branch) -> Result<Self> {
        attention.check(meta.d_feat, meta.hidden, "attention")?;
        score.check(meta.d_feat, meta.hidden, "score")?;
        Ok(ModelParams {
            meta,
            attention,
            score,
        })
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor2); 10] {
        let a = self.attention.tensors();
        let s = self.score.tensors();
        let all = [a[0], a[1], a[2], a[3], a[4], s[0], s[1], s[2], s[3], s[4]];
        std::array::from_fn(|i| (TENSOR_NAMES[i], all[i]))
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor2; 10] {
        let [a0, a1, a2, a3, a4] = self.attention.tensors_mut();
        let [s0, s1, s2, s3, s4] = self.score.tensors_mut();
        [a0, a1, a2, a3, a4, s0, s1, s2, s3, s4]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
