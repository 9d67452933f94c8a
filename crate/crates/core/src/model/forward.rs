use super::params::{Branch, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::tape::record_sequence;
use crate::numerics::tensor::dot;
use crate::numerics::{sequence_forward, sigmoid, temporal_softmax, CellVars, Tape, Tensor2, Var};
use crate::sequence::FeatureSequence;

/// Per-frame outputs for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTrace {
    /// Attention read-out before the temporal softmax.
    pub o_a: Vec<f64>,
    /// Completion read-out.
    pub o_s: Vec<f64>,
    /// Temporal attention, sums to 1.
    pub a: Vec<f64>,
    /// `sigmoid(a_t * o_s_t)`.
    pub s: Vec<f64>,
}

impl FrameTrace {
    /// Builds a trace from raw read-outs.
    pub fn from_outputs(o_a: Vec<f64>, o_s: Vec<f64>) -> Result<Self> {
        if o_a.len() != o_s.len() {
            return Err(Error::shape(format!("o_a has {} frames, o_s {}", o_a.len(), o_s.len())));
        }
        let a = temporal_softmax(&o_a)?;
        let s = a.iter().zip(&o_s).map(|(a, o)| sigmoid(a * o)).collect();
        Ok(FrameTrace { o_a, o_s, a, s })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

fn readout(branch: &Branch, x: &Tensor2) -> Result<Vec<f64>> {
    let hidden = sequence_forward(x, &branch.cell)?;
    let w = branch.proj_weights.data();
    let b = branch.proj_bias.data()[0];
    Ok((0..hidden.rows()).map(|t| dot(w, hidden.row(t)) + b).collect())
}

fn check_input(p: &ModelParams, x: &FeatureSequence) -> Result<()> {
    if x.len() != p.meta.length || x.dim() != p.meta.d_feat {
        return Err(Error::shape(format!(
            "model expects {}x{} input, got {}x{} (resample first)",
            p.meta.length,
            p.meta.d_feat,
            x.len(),
            x.dim()
        )));
    }
    Ok(())
}

pub fn forward(p: &ModelParams, x: &FeatureSequence) -> Result<FrameTrace> {
    check_input(p, x)?;
    let o_a = readout(&p.attention, x.as_tensor())?;
    let o_s = readout(&p.score, x.as_tensor())?;
    FrameTrace::from_outputs(o_a, o_s)
}

/// Parameter leaves in [`super::params::TENSOR_NAMES`] order.
pub struct ParamVars(pub [Var; 10]);

/// Model outputs recorded on a tape.
pub struct Recorded {
    pub params: ParamVars,
    pub o_a: Var,
    pub o_s: Var,
    pub a: Var,
}

fn record_readout(tape: &mut Tape, cell: &CellVars, w: Var, b: Var, frames: &[Var]) -> Result<Var> {
    let hidden = record_sequence(tape, cell, frames)?;
    let mut outs = Vec::with_capacity(hidden.len());
    for h in hidden {
        let z = tape.matvec(w, h)?;
        outs.push(tape.add(z, b)?);
    }
    tape.stack(&outs)
}

pub fn record(tape: &mut Tape, p: &ModelParams, x: &FeatureSequence) -> Result<Recorded> {
    check_input(p, x)?;
    let vars: [Var; 10] = p.tensors().map(|(_, t)| tape.leaf(t.clone()));
    let cell = |i: usize, hidden| CellVars {
        input_weights: vars[i],
        recurrent_weights: vars[i + 1],
        biases: vars[i + 2],
        hidden_size: hidden,
    };
    let attention = cell(0, p.meta.hidden);
    let score = cell(5, p.meta.hidden);
    let frames: Vec<Var> = (0..x.len())
        .map(|t| tape.leaf(Tensor2::column(x.frame(t).to_vec())))
        .collect();
    let o_a = record_readout(tape, &attention, vars[3], vars[4], &frames)?;
    let o_s = record_readout(tape, &score, vars[8], vars[9], &frames)?;
    let a = tape.softmax(o_a)?;
    Ok(Recorded {
        params: ParamVars(vars),
        o_a,
        o_s,
        a,
    })
}
