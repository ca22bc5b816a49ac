//! The objective near a weight point: gradient bounds, semi-smoothness
//! residuals, negative-curvature search and 2-D slices.

mod bounds;
mod oja;
mod slice;
mod smooth;

pub use bounds::{gradient_bound_sweep, gradient_bounds, trajectory_bounds, BoundSweep, GradientBounds, WidthBounds};
pub use oja::{
    default_smoothing_radius, oja_iterate, oja_negative_curvature, GradientField, NetworkField, OjaConfig, OjaResult,
    QuadraticSurrogate,
};
pub use slice::{landscape_slice, GridSpec, LandscapeGrid};
pub use smooth::{fit_envelope, semi_smoothness_probe, Envelope, SemiSmoothConfig, SemiSmoothReport, SmoothProbe};

use ndarray::Array2;

use crate::datagen::Dataset;
use crate::error::Result;
use crate::netcore::{evaluate, Backprop, NetworkParams};
use crate::training::loss::LossFunction;

/// A point or direction in the space of hidden matrices `W_1..W_L`.
pub type Weights = Vec<Array2<f64>>;

pub fn dot(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| crate::linalg::frobenius_dot(x.view(), y.view())).sum()
}

pub fn norm(a: &[Array2<f64>]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(y: &mut [Array2<f64>], alpha: f64, x: &[Array2<f64>]) {
    y.iter_mut().zip(x).for_each(|(a, b)| a.scaled_add(alpha, b));
}

pub(crate) fn scale(a: &mut [Array2<f64>], s: f64) {
    a.iter_mut().for_each(|m| *m *= s);
}

pub fn hidden_weights(params: &NetworkParams) -> Weights {
    (1..=params.depth()).map(|l| params.hidden(l).clone()).collect()
}

/// Objective and its gradient in the hidden matrices.
pub fn objective_gradient(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction) -> Result<(f64, Weights)> {
    let eval = evaluate(params, dataset, loss)?;
    let bp = Backprop::new(params, &eval.trace, eval.loss_vectors.view())?;
    Ok((eval.value, bp.gradient_set(false).hidden))
}

/// Unit-Frobenius gradient direction and the gradient norm.
pub fn gradient_direction(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction) -> Result<(Weights, f64)> {
    let (_, mut g) = objective_gradient(params, dataset, loss)?;
    let n = norm(&g);
    if n > 0.0 {
        scale(&mut g, 1.0 / n);
    }
    Ok((g, n))
}

/// `W + alpha · dir` on the hidden matrices.
pub fn shifted(params: &NetworkParams, dir: &[Array2<f64>], alpha: f64) -> Result<NetworkParams> {
    crate::theoryprobes::apply_deltas(params, dir, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_separated_dataset, LabelMode};
    use crate::netcore::{init_network, ArchSpec};

    #[test]
    fn gradient_direction_recovers_norm() {
        let ds = generate_separated_dataset(4, 5, 0.2, LabelMode::Regression { output_dim: 1 }, 1).unwrap();
        let p = init_network(&ArchSpec::fully_connected(5, 32, 1, 2), 2).unwrap();
        let (_, g) = objective_gradient(&p, &ds, &LossFunction::L2).unwrap();
        let (d, n) = gradient_direction(&p, &ds, &LossFunction::L2).unwrap();
        assert!((norm(&d) - 1.0).abs() < 1e-12);
        assert!((dot(&g, &d) - n).abs() <= 1e-10 * n.max(1.0));
    }
}
