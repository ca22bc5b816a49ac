use ndarray::{s, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::perturb::{apply_deltas, apply_deltas_owned, sign_flip_deltas, unit_directions, PerturbationMode};
use super::report::{Check, ProbeReport, SeriesPoint};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::netcore::{active, forward_batch, Backprop, BatchTrace, NetworkParams};
use crate::rng::{self, Role};

/// Random probe vectors per sample for the backward drift.
pub const BACKWARD_DRAWS: usize = 4;

fn same_shape(a: &NetworkParams, b: &NetworkParams) -> Result<()> {
    if a.arch() != b.arch() {
        return Err(Error::Dimension("parameter sets have different architectures".into()));
    }
    Ok(())
}

fn point(omega: f64, layer: usize, value: f64) -> SeriesPoint {
    SeriesPoint {
        omega: Some(omega),
        layer: layer as i64,
        value,
    }
}

fn sign_change_series(t0: &BatchTrace, t1: &BatchTrace, omega: f64) -> Vec<SeriesPoint> {
    let n = t0.len() as f64;
    (1..=t0.depth())
        .map(|l| {
            let flips = t0.g[l]
                .iter()
                .zip(t1.g[l].iter())
                .filter(|(a, b)| active(**a) != active(**b))
                .count();
            point(omega, l, flips as f64 / (n * t0.g[l].nrows() as f64))
        })
        .collect()
}

fn forward_drift_series(t0: &BatchTrace, t1: &BatchTrace, omega: f64) -> Vec<SeriesPoint> {
    (1..=t0.depth())
        .map(|l| {
            let diff = &t1.h[l] - &t0.h[l];
            let mean = diff.columns().into_iter().map(linalg::norm).sum::<f64>() / t0.len() as f64;
            point(omega, l, mean)
        })
        .collect()
}

fn probe_matrix(params: &NetworkParams, n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, Role::Probe, 3);
    Array2::from_shape_fn((params.arch().output_dim, n * BACKWARD_DRAWS), |_| StandardNormal.sample(&mut r))
}

fn repeated(trace: &BatchTrace) -> BatchTrace {
    let rep = |m: &Array2<f64>| {
        let n = m.ncols();
        let mut out = Array2::zeros((m.nrows(), n * BACKWARD_DRAWS));
        for k in 0..BACKWARD_DRAWS {
            out.slice_mut(s![.., k * n..(k + 1) * n]).assign(m);
        }
        out
    };
    BatchTrace {
        inputs: rep(&trace.inputs),
        g: trace.g.iter().map(rep).collect(),
        h: trace.h.iter().map(rep).collect(),
        output: rep(&trace.output),
    }
}

fn backward_drift_series(
    p0: &NetworkParams,
    t0: &BatchTrace,
    p1: &NetworkParams,
    t1: &BatchTrace,
    omega: f64,
    seed: u64,
) -> Result<Vec<SeriesPoint>> {
    let v = probe_matrix(p0, t0.len(), seed);
    let (r0, r1) = (repeated(t0), repeated(t1));
    let b0 = Backprop::new(p0, &r0, v.view())?;
    let b1 = Backprop::new(p1, &r1, v.view())?;
    let arch = p0.arch();
    let scale = (arch.hidden_dim() as f64 / arch.output_dim as f64).sqrt();
    let vnorms: Vec<f64> = v.columns().into_iter().map(linalg::norm).collect();
    Ok((1..=p0.depth())
        .map(|a| {
            let diff = &b1.activation_gradient(a - 1) - &b0.activation_gradient(a - 1);
            let mean = diff
                .columns()
                .into_iter()
                .zip(&vnorms)
                .map(|(c, vn)| linalg::norm(c) / (scale * vn))
                .sum::<f64>()
                / vnorms.len() as f64;
            point(omega, a, mean)
        })
        .collect())
}

/// Fraction of units whose activity differs, per hidden layer (averaged over samples).
pub fn probe_sign_changes(params0: &NetworkParams, perturbed: &NetworkParams, dataset: &Dataset, omega: f64) -> Result<ProbeReport> {
    same_shape(params0, perturbed)?;
    let t0 = forward_batch(params0, dataset.inputs.view())?;
    let t1 = forward_batch(perturbed, dataset.inputs.view())?;
    Ok(ProbeReport::new("sign_changes", sign_change_series(&t0, &t1, omega), Check::AtMost { threshold: 1.0 }))
}

/// `‖h_l - h⁰_l‖` per hidden layer, averaged over samples.
pub fn probe_forward_drift(params0: &NetworkParams, perturbed: &NetworkParams, dataset: &Dataset, omega: f64) -> Result<ProbeReport> {
    same_shape(params0, perturbed)?;
    let t0 = forward_batch(params0, dataset.inputs.view())?;
    let t1 = forward_batch(perturbed, dataset.inputs.view())?;
    Ok(ProbeReport::new("forward_drift", forward_drift_series(&t0, &t1, omega), Check::Informational))
}

/// `‖vᵀ(Back'_a - Back_a)‖ / (√(m/d)‖v‖)` per layer `a`, averaged over samples and random `v`.
pub fn probe_backward_drift(
    params0: &NetworkParams,
    perturbed: &NetworkParams,
    dataset: &Dataset,
    omega: f64,
    seed: u64,
) -> Result<ProbeReport> {
    same_shape(params0, perturbed)?;
    let t0 = forward_batch(params0, dataset.inputs.view())?;
    let t1 = forward_batch(perturbed, dataset.inputs.view())?;
    let series = backward_drift_series(params0, &t0, perturbed, &t1, omega, seed)?;
    Ok(ProbeReport::new("backward_drift", series, Check::Informational))
}

/// Slope windows used by [`perturbation_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepWindows {
    pub sign_changes: Check,
    pub forward_drift: Check,
    pub backward_drift: Check,
}

impl Default for SweepWindows {
    fn default() -> Self {
        Self {
            sign_changes: Check::SlopeWindow {
                lo: 0.45,
                hi: 0.85,
                min_r2: 0.9,
            },
            forward_drift: Check::SlopeWindow {
                lo: 0.9,
                hi: 1.1,
                min_r2: 0.0,
            },
            backward_drift: Check::SlopeWindow {
                lo: 0.2,
                hi: 0.5,
                min_r2: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySweep {
    pub sign_changes: ProbeReport,
    pub forward_drift: ProbeReport,
    pub backward_drift: ProbeReport,
}

impl StabilitySweep {
    pub fn reports(&self) -> [&ProbeReport; 3] {
        [&self.sign_changes, &self.forward_drift, &self.backward_drift]
    }
}

/// Runs the three drift probes at every omega and fits their log-log slopes.
///
/// Cells run one after another: each holds a full perturbed copy of the weights.
pub fn perturbation_sweep(
    params: &NetworkParams,
    dataset: &Dataset,
    omegas: &[f64],
    mode: PerturbationMode,
    seed: u64,
    windows: SweepWindows,
) -> Result<StabilitySweep> {
    let t0 = forward_batch(params, dataset.inputs.view())?;
    let linear = match mode {
        PerturbationMode::SignFlip { .. } => None,
        m => Some(unit_directions(params, dataset, m, seed)?),
    };
    let mut notes = linear.as_ref().map(|(_, n)| n.clone()).unwrap_or_default();
    let (mut sc, mut fd, mut bd) = (Vec::new(), Vec::new(), Vec::new());
    for &omega in omegas {
        let perturbed = match (&linear, mode) {
            (Some((dirs, _)), _) => apply_deltas(params, dirs, omega)?,
            (None, PerturbationMode::SignFlip { sample, output }) => {
                let (deltas, n) = sign_flip_deltas(params, dataset, sample, output, omega)?;
                notes.extend(n.into_iter().map(|s| format!("omega {omega}: {s}")));
                apply_deltas_owned(params, deltas)?
            }
            _ => unreachable!(),
        };
        let t1 = forward_batch(&perturbed, dataset.inputs.view())?;
        sc.extend(sign_change_series(&t0, &t1, omega));
        fd.extend(forward_drift_series(&t0, &t1, omega));
        bd.extend(backward_drift_series(params, &t0, &perturbed, &t1, omega, seed)?);
    }
    let depth = params.depth() as f64;
    let mut sign_changes =
        ProbeReport::new("sign_changes", sc, windows.sign_changes).with_prediction(2.0 / 3.0, "fraction ∝ omega^(2/3)");
    sign_changes.notes = notes;
    if omegas.iter().any(|w| w * depth.powf(1.5) > 1.0) {
        sign_changes.notes.push("some omega exceed L^-1.5; expect curvature at the top of the sweep".into());
    }
    Ok(StabilitySweep {
        sign_changes,
        forward_drift: ProbeReport::new("forward_drift", fd, windows.forward_drift).with_prediction(1.0, "drift ∝ omega"),
        backward_drift: ProbeReport::new("backward_drift", bd, windows.backward_drift)
            .with_prediction(1.0 / 3.0, "drift ∝ omega^(1/3)"),
    })
}
