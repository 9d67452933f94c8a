//! Pure forward kernels. The taped versions in [`crate::numerics::tape`] must
//! agree with these bit for bit.

use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

/// `W x + b`.
pub fn affine(x: &[f64], w: &Tensor2, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::shape(format!(
            "affine: W is {}x{}, x has {}, b has {}",
            w.rows(),
            w.cols(),
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.rows()).map(|r| dot(w.row(r), x) + b[r]).collect())
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Softmax over the time axis, computed after subtracting the maximum.
pub fn temporal_softmax(o: &[f64]) -> Result<Vec<f64>> {
    if o.is_empty() {
        return Err(Error::shape("temporal_softmax: empty input"));
    }
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = o.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_examples() {
        let id = Tensor2::identity(2);
        assert_eq!(affine(&[1.0, 2.0], &id, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let w = Tensor2::from_rows(&[vec![0.3, -7.0], vec![2.0, 5.5]]).unwrap();
        assert_eq!(affine(&[0.0, 0.0], &w, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
        let w = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(affine(&[1.0, 1.0], &w, &[0.0, 0.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn affine_rejects_mismatch() {
        let w = Tensor2::zeros(2, 3);
        assert!(matches!(affine(&[1.0, 2.0], &w, &[0.0, 0.0]), Err(Error::Shape(_))));
        assert!(matches!(affine(&[1.0, 2.0, 3.0], &w, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-15);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-1.0) < sigmoid(-0.999));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(temporal_softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let a = temporal_softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = temporal_softmax(&[1000.0, 0.0]).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        assert!((a[0] - 1.0).abs() < 1e-15 && a[1] < 1e-300);
        assert!(matches!(temporal_softmax(&[]), Err(Error::Shape(_))));
    }
}
