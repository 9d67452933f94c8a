use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Step used by [`extrapolated_gradient`].
pub const EXTRAPOLATED_EPS: f64 = 3e-3;

/// Central-difference estimate of the gradient of `f` at `p`.
pub fn finite_difference_gradient<F>(f: F, p: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        probe[i] = p[i] + eps;
        let up = f(&probe);
        probe[i] = p[i] - eps;
        let down = f(&probe);
        probe[i] = p[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Central differences at steps `eps` and `eps / 2`, combined so the
/// second-order truncation term cancels: `(4 D(eps/2) - D(eps)) / 3`.
///
/// Truncation error is fourth order in `eps`, so a step large enough to keep
/// cancellation noise negligible can be used.
pub fn extrapolated_gradient<F>(f: F, p: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let coarse = finite_difference_gradient(&f, p, eps)?;
    let fine = finite_difference_gradient(&f, p, eps / 2.0)?;
    Ok(coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect())
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Agreement between an analytic and a numerical gradient for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub case: String,
    pub tensor: String,
    pub max_rel_error: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn compare(
        case: impl Into<String>,
        tensor: impl Into<String>,
        analytic: &[f64],
        numeric: &[f64],
        eps: f64,
        tolerance: f64,
    ) -> Self {
        assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
        let max_rel_error = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        GradReport {
            case: case.into(),
            tensor: tensor.into(),
            max_rel_error,
            eps,
            tolerance,
            pass: max_rel_error < tolerance,
        }
    }
}
