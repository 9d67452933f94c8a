//! Synthetic attempts with a planted completion moment.
//!
//! Every sequence draws its length, a candidate completion frame and then its
//! noise in the same order regardless of label, so the frames before the
//! planted moment of a complete sequence are distributed exactly like the
//! frames of an incomplete one.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::ManifestRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::rng;
use crate::sequence::{FeatureSequence, Label, RawSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_action")]
    pub action: String,
    pub num_complete: usize,
    pub num_incomplete: usize,
    /// Inclusive range of sequence lengths.
    pub t_range: [usize; 2],
    pub d_raw: usize,
    pub pre_mean: Vec<f64>,
    pub post_mean: Vec<f64>,
    pub noise_std: f64,
    /// Completion frame as a fraction of the sequence length.
    pub tau_fraction_range: [f64; 2],
    pub seed: u64,
}

fn default_action() -> String {
    "synthetic".to_string()
}

fn tau_bounds(t: usize, frac: [f64; 2]) -> (usize, usize) {
    let lo = ((frac[0] * t as f64 - 1e-9).ceil() as usize).max(1);
    let hi = ((frac[1] * t as f64 + 1e-9).floor() as usize).min(t);
    (lo, hi)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let [t_min, t_max] = self.t_range;
        if t_min < 1 || t_min > t_max {
            return Err(Error::config(format!("t_range {:?} must satisfy 1 <= min <= max", self.t_range)));
        }
        if self.d_raw < 1 {
            return Err(Error::config("d_raw must be at least 1"));
        }
        if self.pre_mean.len() != self.d_raw || self.post_mean.len() != self.d_raw {
            return Err(Error::config(format!(
                "pre_mean/post_mean must have d_raw = {} entries",
                self.d_raw
            )));
        }
        if self.pre_mean.iter().chain(&self.post_mean).any(|v| !v.is_finite()) {
            return Err(Error::config("means must be finite"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std must be finite and non-negative"));
        }
        let [lo, hi] = self.tau_fraction_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::config(format!(
                "tau_fraction_range {:?} must lie inside (0, 1) with lo <= hi",
                self.tau_fraction_range
            )));
        }
        if self.num_complete + self.num_incomplete == 0 {
            return Err(Error::config("spec generates no sequences"));
        }
        if let Some(t) = (t_min..=t_max).find(|&t| {
            let (a, b) = tau_bounds(t, self.tau_fraction_range);
            a > b
        }) {
            return Err(Error::config(format!(
                "no integer completion frame fits tau_fraction_range for T = {t}"
            )));
        }
        Ok(())
    }

    /// Euclidean distance between the pre- and post-completion means.
    pub fn mean_separation(&self) -> f64 {
        self.pre_mean
            .iter()
            .zip(&self.post_mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// A generated dataset held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub sequences: Vec<RawSequence>,
    pub records: Vec<ManifestRecord>,
}

pub fn raw_path(id: &str) -> String {
    format!("raw/{id}.cmrw")
}

pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let total = spec.num_complete + spec.num_incomplete;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let width = total.to_string().len().max(4);
    let mut sequences = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    for i in 0..total {
        let label = if i < spec.num_complete {
            Label::Complete
        } else {
            Label::Incomplete
        };
        let mut r = rng::stream(spec.seed, &format!("synth/{}/{i}", spec.action));
        let t = r.gen_range(spec.t_range[0]..=spec.t_range[1]);
        let (lo, hi) = tau_bounds(t, spec.tau_fraction_range);
        let planted = r.gen_range(lo..=hi);
        let tau = (label == Label::Complete).then_some(planted);
        let mut frames = Tensor2::zeros(t, spec.d_raw);
        for row in 0..t {
            let mean = match tau {
                Some(tau) if row + 1 >= tau => &spec.post_mean,
                _ => &spec.pre_mean,
            };
            for (v, &m) in frames.row_mut(row).iter_mut().zip(mean) {
                *v = m + noise.sample(&mut r);
            }
        }
        let id = format!("{}-{:0width$}", spec.action, i);
        records.push(ManifestRecord {
            id: id.clone(),
            action: spec.action.clone(),
            label,
            tau,
            features: raw_path(&id),
        });
        sequences.push(RawSequence {
            id,
            frames: FeatureSequence::new(frames)?,
        });
    }
    Ok(SynthDataset { sequences, records })
}
