use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{axpy, dot, hidden_weights, norm, objective_gradient, scale, Weights};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::netcore::NetworkParams;
use crate::rng::{gaussian_matrix, Role};
use crate::training::loss::LossFunction;

/// Anything that returns a gradient in the hidden-matrix space.
pub trait GradientField {
    fn gradient(&self, point: &[Array2<f64>]) -> Result<Weights>;
}

/// The network objective as a function of `W_1..W_L` with `A`, `B` fixed.
pub struct NetworkField<'a> {
    pub params: &'a NetworkParams,
    pub dataset: &'a Dataset,
    pub loss: &'a LossFunction,
}

impl GradientField for NetworkField<'_> {
    fn gradient(&self, point: &[Array2<f64>]) -> Result<Weights> {
        let p = self.params.with_hidden(point.to_vec())?;
        Ok(objective_gradient(&p, self.dataset, self.loss)?.1)
    }
}

/// `½ λ₁ ⟨W, e₁⟩² − ½ λ₂ ⟨W, e₂⟩²` with orthonormal `e₁`, `e₂`.
#[derive(Debug, Clone)]
pub struct QuadraticSurrogate {
    pub e1: Weights,
    pub e2: Weights,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl QuadraticSurrogate {
    pub fn value(&self, w: &[Array2<f64>]) -> f64 {
        0.5 * self.lambda1 * dot(w, &self.e1).powi(2) - 0.5 * self.lambda2 * dot(w, &self.e2).powi(2)
    }
}

impl GradientField for QuadraticSurrogate {
    fn gradient(&self, w: &[Array2<f64>]) -> Result<Weights> {
        let mut g: Weights = w.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
        axpy(&mut g, self.lambda1 * dot(w, &self.e1), &self.e1);
        axpy(&mut g, -self.lambda2 * dot(w, &self.e2), &self.e2);
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OjaConfig {
    /// Per-entry standard deviation of the weight-space smoothing; `None` picks
    /// `1e-3 · ‖W‖_F / √(#entries)`.
    pub smoothing_radius: Option<f64>,
    pub samples: usize,
    pub steps: usize,
    pub seed: u64,
    /// Converged once an update moves the direction by at most this much.
    pub tol: f64,
}

impl Default for OjaConfig {
    fn default() -> Self {
        Self {
            smoothing_radius: None,
            samples: 8,
            steps: 300,
            seed: 0,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OjaResult {
    /// Unit Frobenius norm.
    pub direction: Weights,
    /// Smoothed `⟨v, H v⟩` along `direction`.
    pub rayleigh: f64,
    /// Smoothed quotient along the normalized gradient at the center, when it is nonzero.
    pub gradient_rayleigh: Option<f64>,
    pub steps: usize,
    pub converged: bool,
    pub smoothing_radius: f64,
    pub samples: usize,
    pub notes: Vec<String>,
}

pub fn default_smoothing_radius(center: &[Array2<f64>]) -> f64 {
    let count: usize = center.iter().map(|m| m.len()).sum();
    1e-3 * norm(center) / (count.max(1) as f64).sqrt()
}

/// Smoothed Hessian-vector products by central differences of the gradient,
/// averaged over a fixed set of Gaussian offsets of the center.
struct SmoothedHessian<'a, F: GradientField + ?Sized> {
    field: &'a F,
    centers: Vec<Weights>,
    step: f64,
}

impl<F: GradientField + ?Sized> SmoothedHessian<'_, F> {
    fn apply(&self, v: &[Array2<f64>]) -> Result<Weights> {
        let mut out: Weights = v.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
        for c in &self.centers {
            let mut plus = c.clone();
            axpy(&mut plus, self.step, v);
            let mut minus = c.clone();
            axpy(&mut minus, -self.step, v);
            axpy(&mut out, 1.0, &self.field.gradient(&plus)?);
            axpy(&mut out, -1.0, &self.field.gradient(&minus)?);
        }
        scale(&mut out, 1.0 / (2.0 * self.step * self.centers.len() as f64));
        Ok(out)
    }
}

fn gaussian_like(shape: &[Array2<f64>], seed: u64, role: Role, index: u64, std: f64) -> Weights {
    shape
        .iter()
        .enumerate()
        .map(|(l, m)| gaussian_matrix(seed, role, (index << 16) | l as u64, m.nrows(), m.ncols(), std))
        .collect()
}

/// Oja iteration `v ← normalize(v − η H v)` for the most negative curvature of `field` at `center`.
///
/// The step is `1 / (8 ‖Hv‖ + 1)`; `‖Hv‖` bounds the Rayleigh quotient in magnitude.
pub fn oja_iterate<F: GradientField + ?Sized>(field: &F, center: &[Array2<f64>], config: &OjaConfig) -> Result<OjaResult> {
    if config.samples == 0 {
        return Err(Error::Precondition("at least one smoothing sample is needed".into()));
    }
    let radius = config.smoothing_radius.unwrap_or_else(|| default_smoothing_radius(center));
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Precondition(format!("smoothing radius must be positive, got {radius}")));
    }
    let count: usize = center.iter().map(|m| m.len()).sum();
    let centers = (0..config.samples as u64)
        .map(|k| {
            let mut c = center.to_vec();
            axpy(&mut c, 1.0, &gaussian_like(center, config.seed, Role::Smoothing, k, radius));
            c
        })
        .collect();
    let hess = SmoothedHessian {
        field,
        centers,
        step: radius * (count as f64).sqrt(),
    };

    let mut v = gaussian_like(center, config.seed, Role::Probe, 0, 1.0);
    let n0 = norm(&v);
    scale(&mut v, 1.0 / n0);
    let mut best = (v.clone(), f64::INFINITY);
    let mut converged = false;
    let mut steps = 0;
    for _ in 0..config.steps {
        steps += 1;
        let hv = hess.apply(&v)?;
        let rho = dot(&v, &hv);
        if rho < best.1 {
            best = (v.clone(), rho);
        }
        let eta = 1.0 / (8.0 * norm(&hv) + 1.0);
        let mut next = v.clone();
        axpy(&mut next, -eta, &hv);
        let nn = norm(&next);
        if !(nn > 0.0 && nn.is_finite()) {
            break;
        }
        scale(&mut next, 1.0 / nn);
        let mut diff = next.clone();
        axpy(&mut diff, -1.0, &v);
        v = next;
        if norm(&diff) <= config.tol {
            converged = true;
            break;
        }
    }
    let last = dot(&v, &hess.apply(&v)?);
    if last <= best.1 {
        best = (v, last);
    }

    let g = field.gradient(center)?;
    let gn = norm(&g);
    let gradient_rayleigh = if gn > 0.0 {
        let mut u = g;
        scale(&mut u, 1.0 / gn);
        Some(dot(&u, &hess.apply(&u)?))
    } else {
        None
    };
    let mut notes = vec![format!(
        "smoothing: {} Gaussian offsets of per-entry std {radius:e}, difference step {:e}",
        config.samples, hess.step
    )];
    if !converged {
        notes.push(format!("no convergence within {} steps, returned the best direction seen", config.steps));
    }
    Ok(OjaResult {
        direction: best.0,
        rayleigh: best.1,
        gradient_rayleigh,
        steps,
        converged,
        smoothing_radius: radius,
        samples: config.samples,
        notes,
    })
}

/// Most negatively curved direction of the objective in `W_1..W_L` at `params`.
pub fn oja_negative_curvature(
    params: &NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    config: &OjaConfig,
) -> Result<OjaResult> {
    let field = NetworkField { params, dataset, loss };
    oja_iterate(&field, &hidden_weights(params), config)
}
