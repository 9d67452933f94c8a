//! Sequence-level objectives: the weak completion loss and the
//! attention-weighted relative-distance regression.

use super::forward::{FrameTrace, Recorded};
use super::params::LossVariant;
use crate::error::{Error, Result};
use crate::numerics::tensor::dot;
use crate::numerics::{sigmoid, Tape, Tensor2, Var};
use crate::sequence::{Label, LabeledSequence};

/// Predictions are clamped to `[YHAT_CLAMP, 1 - YHAT_CLAMP]` in the log variant.
pub const YHAT_CLAMP: f64 = 1e-12;

/// `sigmoid(sum_t a_t o_s_t)`: confidence the attempt completed somewhere.
pub fn weak_sequence_prediction(trace: &FrameTrace) -> f64 {
    sigmoid(dot(&trace.a, &trace.o_s))
}

pub fn weak_loss_term(yhat: f64, label: Label, variant: LossVariant) -> f64 {
    let y = label.target();
    match variant {
        LossVariant::Literal => -(y * yhat + (1.0 - y) * (1.0 - yhat)),
        LossVariant::Log => {
            let p = yhat.clamp(YHAT_CLAMP, 1.0 - YHAT_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

pub fn weak_loss<'a, I>(batch: I, variant: LossVariant) -> f64
where
    I: IntoIterator<Item = (&'a FrameTrace, Label)>,
{
    batch
        .into_iter()
        .map(|(trace, label)| weak_loss_term(weak_sequence_prediction(trace), label, variant))
        .sum()
}

/// `r_t = (t - tau)/tau` for `t = 1..=len`.
pub fn relative_targets(len: usize, tau: usize) -> Result<Vec<f64>> {
    if tau == 0 {
        return Err(Error::Domain("completion frame tau must be at least 1".into()));
    }
    let tau = tau as f64;
    Ok((1..=len).map(|t| (t as f64 - tau) / tau).collect())
}

/// `sum_t a_t (o_s_t - r_t)^2`.
pub fn supervised_loss(trace: &FrameTrace, tau: usize) -> Result<f64> {
    let r = relative_targets(trace.len(), tau)?;
    let sq: Vec<f64> = trace.o_s.iter().zip(&r).map(|(o, r)| (o - r) * (o - r)).collect();
    Ok(dot(&trace.a, &sq))
}

/// Regression target for a training sequence: its annotated `tau`, or the
/// last frame when the attempt is incomplete.
pub fn supervised_tau(seq: &LabeledSequence) -> Result<usize> {
    match (seq.label, seq.tau) {
        (Label::Complete, Some(tau)) => Ok(tau),
        (Label::Complete, None) => Err(Error::config(format!(
            "{}: supervised training needs tau for complete sequences",
            seq.id
        ))),
        (Label::Incomplete, _) => Ok(seq.len()),
    }
}

pub fn record_weak_loss(tape: &mut Tape, rec: &Recorded, label: Label, variant: LossVariant) -> Result<Var> {
    let z = tape.dot(rec.a, rec.o_s)?;
    let yhat = tape.sigmoid(z)?;
    match (variant, label) {
        (LossVariant::Literal, Label::Complete) => tape.scale(yhat, -1.0),
        (LossVariant::Literal, Label::Incomplete) => tape.offset(yhat, -1.0),
        (LossVariant::Log, _) => {
            let p = tape.clamp(yhat, YHAT_CLAMP, 1.0 - YHAT_CLAMP)?;
            let target = if label == Label::Complete {
                p
            } else {
                let q = tape.scale(p, -1.0)?;
                tape.offset(q, 1.0)?
            };
            let l = tape.ln(target)?;
            tape.scale(l, -1.0)
        }
    }
}

pub fn record_supervised_loss(tape: &mut Tape, rec: &Recorded, tau: usize) -> Result<Var> {
    let len = tape.value(rec.o_s)?.rows();
    let r = tape.leaf(Tensor2::column(relative_targets(len, tau)?));
    let diff = tape.sub(rec.o_s, r)?;
    let sq = tape.square(diff)?;
    tape.dot(rec.a, sq)
}
