use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm, PowerIterationConfig};
use crate::netcore::{active, forward_batch, objective, ArchKind, Backprop, NetworkParams};
use crate::rng::{self, Role};
use crate::training::default_loss;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum PerturbationMode {
    /// Gaussian matrix per layer rescaled to spectral norm `omega`.
    RandomGaussianScaled,
    /// Objective gradient per layer rescaled to spectral norm `omega`.
    GradientAligned,
    /// Rank-one move per layer that reflects the pre-activations of one sample
    /// closest to zero, restricted to units whose output sensitivity is positive.
    SignFlip { sample: usize, output: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Per-layer spectral norm budget.
    pub omega: f64,
    pub mode: PerturbationMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub params: NetworkParams,
    /// `W'_1..W'_L`
    pub deltas: Vec<Array2<f64>>,
    /// Spectral norm of each delta (exact for rank-one moves, power iteration otherwise).
    pub spectral: Vec<f64>,
    pub notes: Vec<String>,
}

fn check_supported(params: &NetworkParams) -> Result<()> {
    if let ArchKind::Conv(_) = params.arch().kind {
        return Err(Error::Unsupported(
            "perturbations are defined on dense hidden layers; conv layers store unshared filters".into(),
        ));
    }
    Ok(())
}

/// Tighter than the reporting default so the rescaled norm lands within 1e-9 of the budget.
const NORMALIZE: PowerIterationConfig = PowerIterationConfig {
    max_iters: 1000,
    rel_tol: 1e-13,
};

fn unit_spectral(mut m: Array2<f64>, seed: u64) -> Option<Array2<f64>> {
    let s = spectral_norm(&m, seed, NORMALIZE).value();
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    m /= s;
    Some(m)
}

fn gaussian_direction(params: &NetworkParams, l: usize, seed: u64) -> Array2<f64> {
    let (r, c) = params.arch().weight_shape(l);
    let g = rng::gaussian_matrix(seed, Role::Perturbation, l as u64, r, c, 1.0);
    unit_spectral(g, seed).expect("Gaussian matrix is nonzero")
}

/// Directions with unit spectral norm for the modes that scale linearly in omega.
pub fn unit_directions(
    params: &NetworkParams,
    dataset: &Dataset,
    mode: PerturbationMode,
    seed: u64,
) -> Result<(Vec<Array2<f64>>, Vec<String>)> {
    check_supported(params)?;
    let depth = params.depth();
    let mut notes = Vec::new();
    let dirs = match mode {
        PerturbationMode::RandomGaussianScaled => (1..=depth).map(|l| gaussian_direction(params, l, seed)).collect(),
        PerturbationMode::GradientAligned => {
            let (_, v) = objective(params, dataset, &default_loss(dataset))?;
            let trace = forward_batch(params, dataset.inputs.view())?;
            let bp = Backprop::new(params, &trace, v.view())?;
            (1..=depth)
                .map(|l| match unit_spectral(bp.layer_gradient(l), seed) {
                    Some(d) => d,
                    None => {
                        notes.push(format!("layer {l}: zero gradient, used a random Gaussian direction"));
                        gaussian_direction(params, l, seed)
                    }
                })
                .collect()
        }
        PerturbationMode::SignFlip { .. } => {
            return Err(Error::Unsupported("sign-flip moves depend on omega nonlinearly".into()));
        }
    };
    Ok((dirs, notes))
}

/// Rank-one deltas `Δ_l h_{l-1}ᵀ / ‖h_{l-1}‖²` built from the unperturbed trace of one sample.
pub fn sign_flip_deltas(
    params: &NetworkParams,
    dataset: &Dataset,
    sample: usize,
    output: usize,
    omega: f64,
) -> Result<(Vec<Array2<f64>>, Vec<String>)> {
    check_supported(params)?;
    if sample >= dataset.len() || output >= params.arch().output_dim {
        return Err(Error::Precondition(format!(
            "sample {sample} / output {output} out of range ({} samples, {} outputs)",
            dataset.len(),
            params.arch().output_dim
        )));
    }
    let x = dataset.inputs.row(sample).insert_axis(Axis(0));
    let trace = forward_batch(params, x)?;
    let mut e = Array2::zeros((params.arch().output_dim, 1));
    e[[output, 0]] = 1.0;
    let bp = Backprop::new(params, &trace, e.view())?;
    let mut notes = Vec::new();
    let mut deltas = Vec::with_capacity(params.depth());
    for l in 1..=params.depth() {
        let h = trace.h[l - 1].column(0);
        let g = trace.g[l].column(0);
        let w = bp.activation_gradient(l);
        let hn2 = h.dot(&h);
        let (r, c) = params.arch().weight_shape(l);
        if hn2 == 0.0 || omega == 0.0 {
            deltas.push(Array2::zeros((r, c)));
            continue;
        }
        let budget2 = omega * omega * hn2;
        let mut order: Vec<usize> = (0..g.len()).filter(|&k| w[[k, 0]] > 0.0).collect();
        order.sort_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(a.cmp(&b)));
        let mut delta = ndarray::Array1::<f64>::zeros(g.len());
        let mut used = 0.0;
        let mut last = None;
        for &k in &order {
            let step = 2.0 * g[k];
            if used + step * step <= budget2 {
                delta[k] = -step;
                used += step * step;
                last = Some(k);
            } else {
                let dir = if active(g[k]) { -1.0 } else { 1.0 };
                delta[k] = dir * (budget2 - used).sqrt();
                used = budget2;
                break;
            }
        }
        if used < budget2 {
            notes.push(format!("layer {l}: every candidate unit reflected, extended the last move"));
            let k = last.or(order.first().copied()).unwrap_or(0);
            let rest = used - delta[k] * delta[k];
            let dir = if active(g[k]) { -1.0 } else { 1.0 };
            delta[k] = dir * (budget2 - rest).sqrt();
        }
        let d2 = delta.view().insert_axis(Axis(1));
        let hrow = h.insert_axis(Axis(0));
        deltas.push(d2.dot(&hrow) / hn2);
    }
    Ok((deltas, notes))
}

/// `W_l + scale · deltas[l-1]` for every hidden layer.
pub fn apply_deltas(params: &NetworkParams, deltas: &[Array2<f64>], scale: f64) -> Result<NetworkParams> {
    if deltas.len() != params.depth() {
        return Err(Error::Dimension(format!("{} deltas for depth {}", deltas.len(), params.depth())));
    }
    let hidden = (1..=params.depth())
        .map(|l| {
            let mut w = params.hidden(l).clone();
            w.scaled_add(scale, &deltas[l - 1]);
            w
        })
        .collect();
    params.with_hidden(hidden)
}

/// Like [`apply_deltas`] with unit scale, reusing the delta buffers for the result.
pub fn apply_deltas_owned(params: &NetworkParams, deltas: Vec<Array2<f64>>) -> Result<NetworkParams> {
    if deltas.len() != params.depth() {
        return Err(Error::Dimension(format!("{} deltas for depth {}", deltas.len(), params.depth())));
    }
    let hidden = deltas
        .into_iter()
        .enumerate()
        .map(|(k, mut d)| {
            d += params.hidden(k + 1);
            d
        })
        .collect();
    params.with_hidden(hidden)
}

pub fn make_perturbation(params: &NetworkParams, dataset: &Dataset, spec: &PerturbationSpec) -> Result<Perturbation> {
    if !(spec.omega >= 0.0 && spec.omega.is_finite()) {
        return Err(Error::Precondition(format!("omega must be finite and nonnegative, got {}", spec.omega)));
    }
    check_supported(params)?;
    let depth = params.depth();
    let mut notes = Vec::new();
    let lf = depth as f64;
    if spec.omega * lf.powf(1.5) > 1.0 {
        notes.push(format!(
            "omega·L^1.5 = {:.3} exceeds 1; outside the small-perturbation regime",
            spec.omega * lf.powf(1.5)
        ));
    }
    if spec.omega == 0.0 {
        let deltas: Vec<Array2<f64>> = (1..=depth).map(|l| Array2::zeros(params.arch().weight_shape(l))).collect();
        return Ok(Perturbation {
            params: params.clone(),
            deltas,
            spectral: vec![0.0; depth],
            notes,
        });
    }
    let (deltas, spectral, extra) = match spec.mode {
        PerturbationMode::SignFlip { sample, output } => {
            let (d, n) = sign_flip_deltas(params, dataset, sample, output, spec.omega)?;
            // Rank one: the spectral norm is the product of the factor norms.
            let s = d.iter().map(|m| linalg::frobenius(m.view())).collect();
            (d, s, n)
        }
        mode => {
            let (mut d, n) = unit_directions(params, dataset, mode, spec.seed)?;
            d.iter_mut().for_each(|m| *m *= spec.omega);
            (d, vec![spec.omega; depth], n)
        }
    };
    notes.extend(extra);
    Ok(Perturbation {
        params: apply_deltas(params, &deltas, 1.0)?,
        deltas,
        spectral,
        notes,
    })
}
