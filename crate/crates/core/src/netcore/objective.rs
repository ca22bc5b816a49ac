use ndarray::Array2;

use super::forward::{forward_batch, BatchTrace};
use super::NetworkParams;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::training::loss::LossFunction;

/// Objective value with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub per_sample: Vec<f64>,
    /// `d × n`: column `i` is `∇f(B h_{i,L}; y_i)`.
    pub loss_vectors: Array2<f64>,
    pub trace: BatchTrace,
}

pub fn evaluate(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction) -> Result<Evaluation> {
    let arch = params.arch();
    if dataset.input_dim() != arch.input_dim || dataset.output_dim() != arch.output_dim {
        return Err(Error::Dimension(format!(
            "dataset is {}→{}, network is {}→{}",
            dataset.input_dim(),
            dataset.output_dim(),
            arch.input_dim,
            arch.output_dim
        )));
    }
    let trace = forward_batch(params, dataset.inputs.view())?;
    let n = dataset.len();
    let mut per_sample = Vec::with_capacity(n);
    let mut loss_vectors = Array2::zeros((arch.output_dim, n));
    for i in 0..n {
        let z = trace.output.column(i);
        per_sample.push(loss.value(z, dataset.target(i)));
        loss_vectors.column_mut(i).assign(&loss.gradient(z, dataset.target(i)));
    }
    let value = per_sample.iter().sum();
    Ok(Evaluation {
        value,
        per_sample,
        loss_vectors,
        trace,
    })
}

/// `F = Σ_i f(B h_{i,L}; y_i)` and the per-sample loss vectors.
pub fn objective(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction) -> Result<(f64, Array2<f64>)> {
    let e = evaluate(params, dataset, loss)?;
    Ok((e.value, e.loss_vectors))
}
