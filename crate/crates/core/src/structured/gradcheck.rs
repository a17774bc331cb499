use super::layer::StructuredLinear;
use crate::error::{Error, Result};

/// Scalar losses on a layer output used for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeLoss {
    /// `uᵀ·y`; linear in every single parameter of every parametrization.
    Linear(Vec<f64>),
    /// Softmax cross-entropy (nats) against a target index.
    CrossEntropy(usize),
}

impl ProbeLoss {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            ProbeLoss::Linear(u) => u.iter().zip(y).map(|(a, b)| a * b).sum(),
            ProbeLoss::CrossEntropy(t) => {
                let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - y[*t]
            }
        }
    }

    /// `∂loss/∂y`.
    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        match self {
            ProbeLoss::Linear(u) => u.clone(),
            ProbeLoss::CrossEntropy(t) => {
                let mut p = softmax(y);
                p[*t] -= 1.0;
                p
            }
        }
    }
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Relative discrepancy used by the checks: `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference check of an analytic gradient of `f` at `params`.
/// Returns the maximum relative error over coordinates.
pub fn fd_check(params: &[f64], analytic: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Result<f64> {
    if params.len() != analytic.len() {
        return Err(Error::ShapeMismatch(
            "gradient length differs from parameter count".into(),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Analytic vs central-difference gradient of `loss(layer(x))`.
pub fn fd_gradient_check(layer: &StructuredLinear, x: &[f64], loss: &ProbeLoss, eps: f64) -> Result<f64> {
    let y = layer.apply(x)?;
    let analytic = layer.grad(x, &loss.grad(&y))?;
    let mut probe = layer.clone();
    fd_check(&layer.flatten(), &analytic, eps, |p| {
        probe.unpack(p).expect("same length");
        loss.value(&probe.apply(x).expect("same shape"))
    })
}
