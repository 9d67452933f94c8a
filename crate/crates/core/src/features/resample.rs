//! Fixed-length temporal normalization.

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::sequence::{FeatureSequence, LabeledSequence};

/// 1-based source frames for a resample of `source_len` frames to `target_len`.
///
/// `index_k = round_half_up(1 + (k - 1)(T - 1)/(L - 1))`, and the middle frame
/// `round_half_up((T + 1)/2)` when `L = 1`. Integer arithmetic keeps the
/// rounding exact.
pub fn source_indices(source_len: usize, target_len: usize) -> Vec<usize> {
    assert!(source_len >= 1 && target_len >= 1);
    if target_len == 1 {
        return vec![(source_len + 2) / 2];
    }
    let den = target_len - 1;
    (0..target_len)
        .map(|k| 1 + (2 * k * (source_len - 1) + den) / (2 * den))
        .collect()
}

/// First resampled frame whose source index is at or after `tau`; clamped to
/// `L` when every sampled frame precedes `tau` (only possible for `L = 1`).
pub fn remap_tau(indices: &[usize], tau: usize) -> usize {
    indices
        .iter()
        .position(|&i| i >= tau)
        .map_or(indices.len(), |k| k + 1)
}

pub fn resample_sequence(s: &FeatureSequence, target_len: usize) -> Result<FeatureSequence> {
    if target_len == 0 {
        return Err(Error::Domain("resample length must be at least 1".into()));
    }
    let idx = source_indices(s.len(), target_len);
    let mut out = Tensor2::zeros(target_len, s.dim());
    for (k, &i) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(s.frame(i - 1));
    }
    FeatureSequence::new(out)
}

/// Resamples the features and remaps `tau` by the same index rule.
pub fn resample_labeled(s: &LabeledSequence, target_len: usize) -> Result<LabeledSequence> {
    let features = resample_sequence(&s.features, target_len)?;
    let tau = s
        .tau
        .map(|tau| remap_tau(&source_indices(s.len(), target_len), tau));
    LabeledSequence::new(s.id.clone(), s.action.clone(), s.label, tau, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new(Tensor2::from_fn(t, d, |r, c| (r * 10 + c) as f64)).unwrap()
    }

    #[test]
    fn worked_indices() {
        assert_eq!(source_indices(6, 3), vec![1, 4, 6]);
        assert_eq!(source_indices(5, 1), vec![3]);
        assert_eq!(source_indices(4, 1), vec![3]);
        assert_eq!(source_indices(1, 4), vec![1, 1, 1, 1]);
    }

    #[test]
    fn selects_rows() {
        let s = resample_sequence(&seq(6, 2), 3).unwrap();
        assert_eq!(s.frame(0), &[0.0, 1.0]);
        assert_eq!(s.frame(1), &[30.0, 31.0]);
        assert_eq!(s.frame(2), &[50.0, 51.0]);
        assert!(resample_sequence(&seq(3, 1), 0).is_err());
    }

    #[test]
    fn tau_remap() {
        let idx = source_indices(6, 3);
        assert_eq!(remap_tau(&idx, 1), 1);
        assert_eq!(remap_tau(&idx, 2), 2);
        assert_eq!(remap_tau(&idx, 4), 2);
        assert_eq!(remap_tau(&idx, 5), 3);
        assert_eq!(remap_tau(&[3], 5), 1);
    }

    proptest! {
        #[test]
        fn identity_and_idempotence(t in 1usize..60, l in 1usize..60, d in 1usize..4) {
            let s = seq(t, d);
            prop_assert_eq!(&resample_sequence(&s, t).unwrap(), &s);
            let once = resample_sequence(&s, l).unwrap();
            let twice = resample_sequence(&once, l).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn indices_are_monotone_and_in_range(t in 1usize..200, l in 2usize..200) {
            let idx = source_indices(t, l);
            prop_assert_eq!(idx[0], 1);
            prop_assert_eq!(idx[l - 1], t);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
