//! From per-frame outputs to a completion moment.
//!
//! Frames are 1-based. A prediction names the first post-completion frame, or
//! [`Moment::Incomplete`] when the evidence says the goal was never reached.

use std::fmt;

use crate::error::{Error, Result};
use crate::features::resample_sequence;
use crate::model::{forward, FrameTrace, ModelParams, Mode};
use crate::numerics::sigmoid;
use crate::sequence::FeatureSequence;

pub use crate::model::AttentionKind;

/// Offset keeping `o_s + 1` away from zero in the supervised estimator.
pub const OS_FLOOR_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Moment {
    Frame(usize),
    Incomplete,
}

impl Moment {
    /// Frame index with `Incomplete` mapped to `len + 1`.
    pub fn effective(self, len: usize) -> usize {
        match self {
            Moment::Frame(t) => t,
            Moment::Incomplete => len + 1,
        }
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Moment::Frame(t) => write!(f, "{t}"),
            Moment::Incomplete => f.write_str("incomplete"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub moment: Moment,
    /// Objective at the chosen split (weak), or the unrounded estimate (supervised).
    pub objective: f64,
    /// Split objective for `j = 0..=T` (weak only).
    pub objectives: Vec<f64>,
}

/// Min-max normalization followed by zeroing everything below 0.5. A constant
/// input maps to all zeros.
pub fn postprocess_attention(a: &[f64]) -> Vec<f64> {
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0.0; a.len()];
    }
    let range = max - min;
    a.iter()
        .map(|&v| {
            let n = (v - min) / range;
            if n < 0.5 {
                0.0
            } else {
                n
            }
        })
        .collect()
}

/// `s_t = sigmoid(att_t * o_s_t)`.
pub fn completion_scores(att: &[f64], o_s: &[f64]) -> Result<Vec<f64>> {
    if att.len() != o_s.len() {
        return Err(Error::shape(format!("attention has {} frames, o_s {}", att.len(), o_s.len())));
    }
    Ok(att.iter().zip(o_s).map(|(a, o)| sigmoid(a * o)).collect())
}

/// Index of the maximum, preferring the largest index among equal values.
fn argmax_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = j;
        }
    }
    best
}

fn split_prediction(objectives: Vec<f64>) -> Prediction {
    let t = objectives.len() - 1;
    let j = argmax_last(&objectives);
    Prediction {
        moment: if j == t { Moment::Incomplete } else { Moment::Frame(j + 1) },
        objective: objectives[j],
        objectives,
    }
}

/// Evidence-accumulation detector over splits `j = 0..=T`:
/// `sum_{t<=j} (1 - s_t) + sum_{t>j} s_t`, evaluated in one pass.
pub fn detect_completion_weak(s: &[f64]) -> Result<Prediction> {
    if s.is_empty() {
        return Err(Error::shape("detect_completion_weak: empty scores"));
    }
    let mut objectives = Vec::with_capacity(s.len() + 1);
    let mut current: f64 = s.iter().sum();
    objectives.push(current);
    for &st in s {
        current += 1.0 - 2.0 * st;
        objectives.push(current);
    }
    Ok(split_prediction(objectives))
}

/// Quadratic re-evaluation of every split; same contract as
/// [`detect_completion_weak`].
pub fn detect_completion_weak_oracle(s: &[f64]) -> Result<Prediction> {
    if s.is_empty() {
        return Err(Error::shape("detect_completion_weak_oracle: empty scores"));
    }
    let objectives = (0..=s.len())
        .map(|j| {
            let mut total = 0.0;
            for (t, &st) in s.iter().enumerate() {
                total += if t < j { 1.0 - st } else { st };
            }
            total
        })
        .collect();
    Ok(split_prediction(objectives))
}

/// Attention-weighted average of per-frame estimates `t / (o_s_t + 1)`,
/// rounded half up and clamped to `[1, T]`.
pub fn detect_completion_supervised(a: &[f64], o_s: &[f64]) -> Result<Prediction> {
    let estimate = supervised_estimate(a, o_s)?;
    let t = a.len();
    let frame = ((estimate + 0.5).floor().max(1.0) as usize).min(t);
    Ok(Prediction {
        moment: Moment::Frame(frame),
        objective: estimate,
        objectives: Vec::new(),
    })
}

/// The unrounded supervised estimate `sum_t a_t t / (o_s_t + 1)`.
pub fn supervised_estimate(a: &[f64], o_s: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != o_s.len() {
        return Err(Error::shape(format!("attention has {} frames, o_s {}", a.len(), o_s.len())));
    }
    let floor = -1.0 + OS_FLOOR_MARGIN;
    Ok(a.iter()
        .zip(o_s)
        .enumerate()
        .map(|(i, (&at, &o))| at * (i + 1) as f64 / (o.max(floor) + 1.0))
        .sum())
}

/// A trace plus the attention actually used by the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceTrace {
    pub trace: FrameTrace,
    /// Attention fed to the detector: post-processed (weak, learnt), raw
    /// softmax (supervised, learnt) or `1/T` (uniform).
    pub a_used: Vec<f64>,
    /// Detector scores: `sigmoid(a_used * o_s)` (weak) or
    /// `a_used * t / (o_s + 1)` (supervised).
    pub s_used: Vec<f64>,
}

/// Runs inference on a trace according to the model mode.
pub fn infer_trace(trace: FrameTrace, mode: Mode, attention: AttentionKind) -> Result<(Prediction, InferenceTrace)> {
    let t = trace.len();
    let uniform = || vec![1.0 / t as f64; t];
    match mode {
        Mode::Weak => {
            let a_used = match attention {
                AttentionKind::Learnt => postprocess_attention(&trace.a),
                AttentionKind::Uniform => uniform(),
            };
            let s_used = completion_scores(&a_used, &trace.o_s)?;
            let pred = detect_completion_weak(&s_used)?;
            Ok((pred, InferenceTrace { trace, a_used, s_used }))
        }
        Mode::Supervised => {
            let a_used = match attention {
                AttentionKind::Learnt => trace.a.clone(),
                AttentionKind::Uniform => uniform(),
            };
            let pred = detect_completion_supervised(&a_used, &trace.o_s)?;
            let floor = -1.0 + OS_FLOOR_MARGIN;
            let s_used = a_used
                .iter()
                .zip(&trace.o_s)
                .enumerate()
                .map(|(i, (&at, &o))| at * (i + 1) as f64 / (o.max(floor) + 1.0))
                .collect();
            Ok((pred, InferenceTrace { trace, a_used, s_used }))
        }
    }
}

/// Resamples `features` to the model length, runs the networks and the detector.
/// A model trained with uniform attention always infers with uniform attention.
pub fn predict(p: &ModelParams, features: &FeatureSequence, attention: AttentionKind) -> Result<(Prediction, InferenceTrace)> {
    let x = resample_sequence(features, p.meta.length)?;
    let trace = forward(p, &x)?;
    let attention = match p.meta.attention {
        AttentionKind::Uniform => AttentionKind::Uniform,
        AttentionKind::Learnt => attention,
    };
    infer_trace(trace, p.meta.mode, attention)
}

/// CSV dump of an inference trace: `t,o_a,o_s,a,a_post,s`.
///
/// `a_post` is the attention the detector used and `s` its per-frame score.
pub fn trace_csv(tr: &InferenceTrace) -> String {
    let mut out = String::from("t,o_a,o_s,a,a_post,s\n");
    for i in 0..tr.trace.len() {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            i + 1,
            tr.trace.o_a[i],
            tr.trace.o_s[i],
            tr.trace.a[i],
            tr.a_used[i],
            tr.s_used[i]
        ));
    }
    out
}

/// Reads the `s` column of a trace CSV (any other columns are ignored).
pub fn scores_from_trace_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::config("empty trace file"))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == "s")
        .ok_or_else(|| Error::config("trace file has no `s` column"))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let field = line
                .split(',')
                .nth(col)
                .ok_or_else(|| Error::config(format!("trace row {} is missing `s`", i + 1)))?;
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("trace row {}: bad score {field:?}", i + 1)))?;
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Domain(format!("trace row {}: score {v} outside (0, 1)", i + 1)));
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn postprocess_examples() {
        let out = postprocess_attention(&[0.1, 0.2, 0.4, 0.3]);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
        assert!((out[2] - 1.0).abs() < 1e-15);
        assert!((out[3] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(postprocess_attention(&[0.25; 4]), vec![0.0; 4]);
        let shaped = [0.0, 0.6, 1.0, 0.0];
        assert_eq!(postprocess_attention(&shaped), shaped.to_vec());
    }

    #[test]
    fn score_examples() {
        assert_eq!(completion_scores(&[0.0; 3], &[5.0, -2.0, 0.3]).unwrap(), vec![0.5; 3]);
        let s = completion_scores(&[1.0], &[3f64.ln()]).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-15);
        assert!(completion_scores(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn weak_detector_examples() {
        let p = detect_completion_weak(&[0.1, 0.1, 0.9, 0.9]).unwrap();
        let expect = [2.0, 2.8, 3.6, 2.8, 2.0];
        for (a, b) in p.objectives.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.moment, Moment::Frame(3));
        let p = detect_completion_weak(&[0.9, 0.9]).unwrap();
        assert_eq!(p.moment, Moment::Frame(1));
        assert!((p.objectives[2] - 0.2).abs() < 1e-12);
        assert_eq!(detect_completion_weak(&[0.3; 5]).unwrap().moment, Moment::Incomplete);
        assert_eq!(detect_completion_weak(&[0.5]).unwrap().moment, Moment::Incomplete);
        assert_eq!(detect_completion_weak_oracle(&[0.5]).unwrap().moment, Moment::Incomplete);
        assert!(detect_completion_weak(&[]).is_err());
    }

    #[test]
    fn supervised_examples() {
        let r: Vec<f64> = (1..=4).map(|t| (t as f64 - 2.0) / 2.0).collect();
        let p = detect_completion_supervised(&[0.25; 4], &r).unwrap();
        assert!((p.objective - 2.0).abs() < 1e-12);
        assert_eq!(p.moment, Moment::Frame(2));
        let p = detect_completion_supervised(&[0.1, 0.2, 0.3, 0.4], &r).unwrap();
        assert!((p.objective - 2.0).abs() < 1e-12);
        let p = detect_completion_supervised(&[0.5, 0.5], &[-1.0, -3.0]).unwrap();
        assert!(p.objective.is_finite());
        assert_eq!(p.moment, Moment::Frame(2));
    }

    #[test]
    fn trace_csv_scores_round_trip() {
        let trace = FrameTrace::from_outputs(vec![0.1, 0.5, -0.2], vec![1.0, -2.0, 0.5]).unwrap();
        let (_, tr) = infer_trace(trace, Mode::Weak, AttentionKind::Learnt).unwrap();
        let csv = trace_csv(&tr);
        assert!(csv.starts_with("t,o_a,o_s,a,a_post,s\n"));
        assert_eq!(scores_from_trace_csv(&csv).unwrap(), tr.s_used);
        assert!(scores_from_trace_csv("t,s\n1,1.5\n").is_err());
        assert!(scores_from_trace_csv("t,x\n1,0.5\n").is_err());
    }

    #[test]
    fn uniform_weak_inference_uses_one_over_t() {
        let trace = FrameTrace::from_outputs(vec![3.0, -1.0, 0.0, 2.0], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let (_, tr) = infer_trace(trace, Mode::Weak, AttentionKind::Uniform).unwrap();
        assert_eq!(tr.a_used, vec![0.25; 4]);
        assert_eq!(tr.s_used[0], sigmoid(0.25));
    }

    proptest! {
        #[test]
        fn postprocessed_values_are_zero_or_at_least_half(a in prop::collection::vec(0.0f64..1.0, 1..40)) {
            for v in postprocess_attention(&a) {
                prop_assert!(v == 0.0 || (0.5..=1.0).contains(&v));
            }
        }

        #[test]
        fn score_sign_follows_product(a in -3.0f64..3.0, o in -3.0f64..3.0) {
            let s = completion_scores(&[a], &[o]).unwrap()[0];
            prop_assert_eq!((s - 0.5).partial_cmp(&0.0), (a * o).partial_cmp(&0.0));
        }

        #[test]
        fn mirrored_scores_mirror_the_split(s in prop::collection::vec(0.001f64..0.999, 1..40)) {
            let mirrored: Vec<f64> = s.iter().rev().map(|v| 1.0 - v).collect();
            let j = |p: &Prediction| match p.moment { Moment::Frame(f) => f - 1, Moment::Incomplete => p.objectives.len() - 1 };
            let a = detect_completion_weak(&s).unwrap();
            let b = detect_completion_weak(&mirrored).unwrap();
            prop_assert_eq!(j(&a) + j(&b), s.len());
        }
    }
}
