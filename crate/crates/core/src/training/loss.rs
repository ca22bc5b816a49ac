//! Per-sample losses `f(z; y)` on the network output `z`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A label as seen by a loss.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Vector(ArrayView1<'a, f64>),
    Class(usize),
}

/// A smooth loss supplied by the caller.
pub trait SmoothLoss: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, z: ArrayView1<f64>, target: Target<'_>) -> f64;
    fn gradient(&self, z: ArrayView1<f64>, target: Target<'_>) -> Array1<f64>;
    /// Declared upper-smoothness constant in `z`.
    fn smoothness(&self) -> f64;
}

#[derive(Clone)]
pub enum LossFunction {
    /// `½‖z − y‖²`; class targets are one-hot encoded.
    L2,
    /// Softmax cross-entropy; vector targets are read as distributions.
    CrossEntropy,
    Custom(Arc<dyn SmoothLoss>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    CrossEntropy,
    CustomSmooth,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossFunction::L2 => f.write_str("L2"),
            LossFunction::CrossEntropy => f.write_str("CrossEntropy"),
            LossFunction::Custom(l) => write!(f, "Custom({})", l.name()),
        }
    }
}

fn dense_target(target: Target<'_>, d: usize) -> Array1<f64> {
    match target {
        Target::Vector(y) => y.to_owned(),
        Target::Class(c) => {
            let mut y = Array1::zeros(d);
            y[c] = 1.0;
            y
        }
    }
}

fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.mapv(|v| v - lse)
}

impl LossFunction {
    pub fn kind(&self) -> LossKind {
        match self {
            LossFunction::L2 => LossKind::L2,
            LossFunction::CrossEntropy => LossKind::CrossEntropy,
            LossFunction::Custom(_) => LossKind::CustomSmooth,
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossFunction::L2 => "l2".into(),
            LossFunction::CrossEntropy => "cross_entropy".into(),
            LossFunction::Custom(l) => l.name().into(),
        }
    }

    pub fn smoothness(&self) -> f64 {
        match self {
            LossFunction::L2 => 1.0,
            // Hessian of log-sum-exp is bounded by 1/2 in spectral norm.
            LossFunction::CrossEntropy => 0.5,
            LossFunction::Custom(l) => l.smoothness(),
        }
    }

    pub fn value(&self, z: ArrayView1<f64>, target: Target<'_>) -> f64 {
        match self {
            LossFunction::L2 => {
                let y = dense_target(target, z.len());
                0.5 * z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            LossFunction::CrossEntropy => {
                let ls = log_softmax(z);
                match target {
                    Target::Class(c) => -ls[c],
                    Target::Vector(p) => -p.iter().zip(&ls).map(|(p, l)| p * l).sum::<f64>(),
                }
            }
            LossFunction::Custom(l) => l.value(z, target),
        }
    }

    /// `∇_z f(z; y)`, the loss vector handed to the backward pass.
    pub fn gradient(&self, z: ArrayView1<f64>, target: Target<'_>) -> Array1<f64> {
        match self {
            LossFunction::L2 => &z - &dense_target(target, z.len()),
            LossFunction::CrossEntropy => {
                let p = log_softmax(z).mapv(f64::exp);
                p - dense_target(target, z.len())
            }
            LossFunction::Custom(l) => l.gradient(z, target),
        }
    }
}

/// `Σ_k c²(sqrt(1 + ((z_k − y_k)/c)²) − 1)`: quadratic near the label, linear far from it.
#[derive(Debug, Clone, Copy)]
pub struct PseudoHuber {
    pub scale: f64,
}

impl SmoothLoss for PseudoHuber {
    fn name(&self) -> &str {
        "pseudo_huber"
    }

    fn value(&self, z: ArrayView1<f64>, target: Target<'_>) -> f64 {
        let y = dense_target(target, z.len());
        let c = self.scale;
        z.iter()
            .zip(&y)
            .map(|(a, b)| c * c * ((1.0 + ((a - b) / c).powi(2)).sqrt() - 1.0))
            .sum()
    }

    fn gradient(&self, z: ArrayView1<f64>, target: Target<'_>) -> Array1<f64> {
        let y = dense_target(target, z.len());
        let c = self.scale;
        Array1::from_iter(z.iter().zip(&y).map(|(a, b)| {
            let r = a - b;
            r / (1.0 + (r / c).powi(2)).sqrt()
        }))
    }

    fn smoothness(&self) -> f64 {
        1.0
    }
}
