use serde::{Deserialize, Serialize};

use crate::datagen::{check_delta, Dataset};
use crate::error::{Error, Result};
use crate::netcore::{evaluate, init_network, ArchSpec, Backprop, NetworkParams};
use crate::theoryprobes::{Check, ProbeReport, SeriesPoint};
use crate::training::loss::LossFunction;
use crate::training::{train, ConvergenceTrace, TrainConfig};

/// Objectives below this leave nothing to bound.
const TINY_OBJECTIVE: f64 = 1e-14;

/// Normalized gradient norms at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBounds {
    pub objective: f64,
    /// `‖∇_{W_L} F‖²_F · d n² / (F δ m)`
    pub r_low: f64,
    /// `‖∇_{W_l} F‖²_F · d / (F n m)` for `l` in `1..=L`.
    pub r_up: Vec<f64>,
}

impl GradientBounds {
    pub fn r_up_max(&self) -> f64 {
        self.r_up.iter().copied().fold(0.0, f64::max)
    }
}

struct Scales {
    low: f64,
    up: f64,
}

fn scales(params: &NetworkParams, dataset: &Dataset) -> Result<Scales> {
    let delta = check_delta(dataset)?;
    let n = dataset.len() as f64;
    let d = params.arch().output_dim as f64;
    let m = params.arch().width as f64;
    Ok(Scales {
        low: d * n * n / (delta * m),
        up: d / (n * m),
    })
}

/// `None` when the objective is below `1e-14`.
pub fn gradient_bounds(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction) -> Result<Option<GradientBounds>> {
    let s = scales(params, dataset)?;
    let eval = evaluate(params, dataset, loss)?;
    let f = eval.value;
    if f < TINY_OBJECTIVE {
        return Ok(None);
    }
    let bp = Backprop::new(params, &eval.trace, eval.loss_vectors.view())?;
    let sq: Vec<f64> = (1..=params.depth()).map(|l| bp.layer_gradient_sq_norm(l)).collect();
    Ok(Some(GradientBounds {
        objective: f,
        r_low: sq.last().expect("depth >= 1") * s.low / f,
        r_up: sq.iter().map(|g| g * s.up / f).collect(),
    }))
}

/// Smallest `r_low` and largest `r_up` (max over layers) along a recorded trajectory.
pub fn trajectory_bounds(trace: &ConvergenceTrace, params: &NetworkParams, dataset: &Dataset) -> Result<Option<(f64, f64)>> {
    let s = scales(params, dataset)?;
    let mut floor = f64::INFINITY;
    let mut cap: f64 = 0.0;
    let mut seen = false;
    for r in &trace.records {
        if r.objective < TINY_OBJECTIVE || !r.grad_fro_last.is_finite() || !r.grad_fro_max.is_finite() {
            continue;
        }
        seen = true;
        floor = floor.min(r.grad_fro_last.powi(2) * s.low / r.objective);
        cap = cap.max(r.grad_fro_max.powi(2) * s.up / r.objective);
    }
    Ok(seen.then_some((floor, cap)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthBounds {
    pub width: usize,
    pub eta: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub r_low_floor: f64,
    pub r_up_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub widths: Vec<WidthBounds>,
    /// Floors of `r_low`, one point per width (the `layer` column holds the width).
    pub r_low: ProbeReport,
    pub r_up: ProbeReport,
}

/// GD at each width with `eta_m = eta_ref · ref_width / m`, tracking the normalized
/// gradient bounds along the whole trajectory.
pub fn gradient_bound_sweep(
    dataset: &Dataset,
    widths: &[usize],
    depth: usize,
    seed: u64,
    eta_ref: f64,
    ref_width: usize,
    base: &TrainConfig,
    spread: f64,
) -> Result<BoundSweep> {
    if dataset.is_classification() {
        return Err(Error::Precondition("gradient bounds use the squared loss on regression labels".into()));
    }
    let mut rows = Vec::new();
    for &m in widths {
        let arch = ArchSpec::fully_connected(dataset.input_dim(), m, dataset.output_dim(), depth);
        let mut p = init_network(&arch, seed)?;
        let start = p.clone();
        let eta = eta_ref * ref_width as f64 / m as f64;
        let cfg = TrainConfig {
            eta,
            batch: None,
            track_travel: false,
            ..base.clone()
        };
        let trace = train(&mut p, dataset, &LossFunction::L2, &cfg)?;
        let (floor, cap) = trajectory_bounds(&trace, &start, dataset)?.unwrap_or((0.0, 0.0));
        rows.push(WidthBounds {
            width: m,
            eta,
            iterations: trace.iterations(),
            final_objective: trace.final_objective(),
            r_low_floor: floor,
            r_up_cap: cap,
        });
    }
    let series = |get: fn(&WidthBounds) -> f64| -> Vec<SeriesPoint> {
        rows.iter()
            .map(|r| SeriesPoint {
                omega: None,
                layer: r.width as i64,
                value: get(r),
            })
            .collect()
    };
    Ok(BoundSweep {
        r_low: ProbeReport::new("gradient_lower_bound", series(|r| r.r_low_floor), Check::SpreadAtMost { factor: spread }),
        r_up: ProbeReport::new("gradient_upper_bound", series(|r| r.r_up_cap), Check::SpreadAtMost { factor: spread }),
        widths: rows,
    })
}
