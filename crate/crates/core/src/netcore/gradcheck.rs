use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{evaluate, Backprop, NetworkParams};
use crate::datagen::Dataset;
use crate::error::Result;
use crate::linalg::{frobenius, frobenius_dot};
use crate::rng::{gaussian_matrix, Role};
use crate::training::loss::LossFunction;

/// Which block a directional check moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Input,
    Hidden(usize),
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub block: Block,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub checks: Vec<DirectionalCheck>,
    pub max_rel_error: f64,
}

impl GradientCheck {
    pub fn pass(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Central differences of `F` along one random unit-Frobenius direction per block,
/// against the analytic directional derivative.
pub fn gradient_check(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction, step: f64, seed: u64) -> Result<GradientCheck> {
    let eval = evaluate(params, dataset, loss)?;
    let bp = Backprop::new(params, &eval.trace, eval.loss_vectors.view())?;
    let depth = params.depth();
    let mut blocks: Vec<(Block, Array2<f64>)> = (1..=depth).map(|l| (Block::Hidden(l), bp.layer_gradient(l))).collect();
    blocks.push((Block::Input, bp.layer_gradient(0)));
    blocks.push((Block::Output, bp.output_gradient()));

    let mut checks = Vec::with_capacity(blocks.len());
    for (k, (block, grad)) in blocks.into_iter().enumerate() {
        let (r, c) = grad.dim();
        let mut dir = gaussian_matrix(seed, Role::Probe, 0x6C00 + k as u64, r, c, 1.0);
        dir /= frobenius(dir.view());
        let at = |s: f64| -> Result<f64> {
            let mut p = params.clone();
            let w = match block {
                Block::Input => p.weight_mut(0),
                Block::Hidden(l) => p.weight_mut(l),
                Block::Output => p.output_matrix_mut(),
            };
            w.scaled_add(s, &dir);
            Ok(evaluate(&p, dataset, loss)?.value)
        };
        let numeric = (at(step)? - at(-step)?) / (2.0 * step);
        let analytic = frobenius_dot(grad.view(), dir.view());
        let scale = analytic.abs().max(numeric.abs()).max(1e-12);
        checks.push(DirectionalCheck {
            block,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / scale,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradientCheck { checks, max_rel_error })
}
