//! Gradient descent, SGD and convergence tracking.
//!
//! Only the hidden matrices move unless joint training is switched on.

pub mod loss;

pub use loss::{LossFunction, LossKind, PseudoHuber, SmoothLoss, Target};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::linalg::{self, LinearFit, LinearOperator, PowerIterationConfig};
use crate::netcore::{evaluate, forward_batch, Backprop, BatchTrace, NetworkParams};
use crate::rng::{self, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Mini-batch size; `None` means full-batch GD.
    pub batch: Option<usize>,
    pub target_eps: f64,
    pub track_travel: bool,
    pub seed: u64,
    /// Also train the input and output matrices.
    pub joint: bool,
    /// Classification runs stop once every sample is classified correctly.
    pub stop_on_accuracy: bool,
    /// Spectral travel is estimated every this many iterations and at the end (0 = only at the end).
    pub travel_spec_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            max_iters: 2000,
            batch: None,
            target_eps: 1e-3,
            track_travel: true,
            seed: 0,
            joint: false,
            stop_on_accuracy: true,
            travel_spec_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.target_eps > 0.0) {
            return Err(Error::Config(format!("target eps must be positive, got {}", self.target_eps)));
        }
        if let Some(b) = self.batch {
            if b == 0 || b > n {
                return Err(Error::Config(format!("batch size {b} must be in 1..={n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Converged,
    PerfectAccuracy,
    MaxIterations,
    /// Objective exceeded ten times its initial value.
    Diverged,
    NonFinite,
}

/// State at iterate `t` (before the update that produces `t + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    pub objective: f64,
    /// Largest hidden-layer gradient Frobenius norm (stochastic for SGD).
    pub grad_fro_max: f64,
    /// Frobenius norm of the last hidden layer's gradient.
    pub grad_fro_last: f64,
    /// `sqrt(Σ_i ‖∇f_i‖²)` over the loss vectors.
    pub loss_grad_norm: f64,
    pub travel_fro_max: Option<f64>,
    /// `max_l ‖W_l(t) − W_l(0)‖_F / ‖W_l(0)‖_F`
    pub travel_rel_max: Option<f64>,
    pub travel_spec_max: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<IterRecord>,
    pub status: TrainStatus,
    pub eta: f64,
    pub batch: Option<usize>,
    pub loss: String,
    /// Least-squares line through `log F(t)` over the trailing 80% of iterations.
    pub linearity: Option<LinearFit>,
    pub diagnostic: Option<String>,
}

impl ConvergenceTrace {
    /// Number of updates performed.
    pub fn iterations(&self) -> usize {
        self.records.last().map(|r| r.t).unwrap_or(0)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }

    pub fn initial_objective(&self) -> f64 {
        self.records.first().map(|r| r.objective).unwrap_or(f64::NAN)
    }

    pub fn max_travel_rel(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.travel_rel_max).reduce(f64::max)
    }

    pub fn max_travel_spec(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.travel_spec_max).reduce(f64::max)
    }

    /// Fraction of steps with `F(t+1) <= F(t)`.
    pub fn monotone_fraction(&self) -> f64 {
        let steps = self.records.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        let good = self.records.windows(2).filter(|w| w[1].objective <= w[0].objective).count();
        good as f64 / steps as f64
    }

    pub fn reached(&self, eps: f64) -> bool {
        self.final_objective() <= eps
    }

    /// Rows of `t,F,grad_fro_max,travel_fro_max,travel_spec_max,accuracy`.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        use crate::io::{fmt_f64, fmt_opt};
        self.records
            .iter()
            .map(|r| {
                vec![
                    r.t.to_string(),
                    fmt_f64(r.objective),
                    fmt_f64(r.grad_fro_max),
                    fmt_opt(r.travel_fro_max),
                    fmt_opt(r.travel_spec_max),
                    fmt_opt(r.accuracy),
                ]
            })
            .collect()
    }

    pub const CSV_HEADER: [&'static str; 6] = ["t", "F", "grad_fro_max", "travel_fro_max", "travel_spec_max", "accuracy"];
}

/// Squared loss for regression labels, cross-entropy for classes.
pub fn default_loss(dataset: &Dataset) -> LossFunction {
    if dataset.is_classification() {
        LossFunction::CrossEntropy
    } else {
        LossFunction::L2
    }
}

/// Norms of the update just applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Objective at the iterate the gradient was taken at (batch objective for SGD).
    pub objective: f64,
    pub grad_norms: Vec<f64>,
}

impl StepRecord {
    fn grad_max(&self) -> f64 {
        self.grad_norms.iter().copied().fold(0.0, f64::max)
    }
}

/// Applies `W_l -= eta · ∇_l` using the trace and (already scaled) loss vectors.
fn descend(
    params: &mut NetworkParams,
    trace: &BatchTrace,
    loss_vectors: ArrayView2<f64>,
    eta: f64,
    joint: bool,
) -> Result<Vec<f64>> {
    let depth = params.depth();
    let (upstream, output_grad) = {
        let bp = Backprop::new(params, trace, loss_vectors)?;
        let first = if joint { 0 } else { 1 };
        let ups: Vec<Array2<f64>> = (first..=depth).map(|l| bp.upstream(l).to_owned()).collect();
        (ups, joint.then(|| bp.output_gradient()))
    };
    let first = if joint { 0 } else { 1 };
    let mut norms = Vec::with_capacity(depth);
    for (k, u) in upstream.iter().enumerate() {
        let l = first + k;
        let grad = params.weight_gradient(l, u.view(), trace.layer_input(l));
        let norm = linalg::frobenius(grad.view());
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient of layer {l}")));
        }
        if l >= 1 {
            norms.push(norm);
        }
        params.weight_mut(l).scaled_add(-eta, &grad);
    }
    if let Some(g) = output_grad {
        params.output_matrix_mut().scaled_add(-eta, &g);
    }
    Ok(norms)
}

/// One full-batch step `W_l ← W_l − η ∇_{W_l} F`.
pub fn gd_step(params: &mut NetworkParams, dataset: &Dataset, loss: &LossFunction, eta: f64, joint: bool) -> Result<StepRecord> {
    let eval = evaluate(params, dataset, loss)?;
    let grad_norms = descend(params, &eval.trace, eval.loss_vectors.view(), eta, joint)?;
    Ok(StepRecord {
        objective: eval.value,
        grad_norms,
    })
}

/// One step `W ← W − η · n/|S| · Σ_{i∈S} ∇F_i`.
pub fn sgd_step(
    params: &mut NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    eta: f64,
    batch: &[usize],
    joint: bool,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty mini-batch".into()));
    }
    if let Some(i) = batch.iter().find(|i| **i >= dataset.len()) {
        return Err(Error::Dimension(format!("batch index {i} out of range")));
    }
    let (objective, vectors, trace) = batch_loss(params, dataset, loss, batch)?;
    let grad_norms = descend(params, &trace, vectors.view(), eta, joint)?;
    Ok(StepRecord { objective, grad_norms })
}

/// Batch objective, scaled loss vectors and trace for the rows in `batch`.
fn batch_loss(
    params: &NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    batch: &[usize],
) -> Result<(f64, Array2<f64>, BatchTrace)> {
    let x = dataset.inputs.select(Axis(0), batch);
    let trace = forward_batch(params, x.view())?;
    let scale = dataset.len() as f64 / batch.len() as f64;
    let mut vectors = Array2::zeros((params.arch().output_dim, batch.len()));
    let mut objective = 0.0;
    for (c, &i) in batch.iter().enumerate() {
        let z = trace.output.column(c);
        objective += loss.value(z, dataset.target(i));
        vectors.column_mut(c).assign(&(loss.gradient(z, dataset.target(i)) * scale));
    }
    Ok((objective, vectors, trace))
}

// Batch streams live in their own key range, away from dataset streams.
const BATCH_STREAM: u64 = 1 << 40;

/// Uniform subset of size `b` without replacement, sorted.
pub fn sample_batch(n: usize, b: usize, seed: u64, t: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, Role::Data, BATCH_STREAM + t as u64);
    let mut idx = index::sample(&mut r, n, b).into_vec();
    idx.sort_unstable();
    idx
}

/// Argmax of the logits (lowest index on ties) against class labels.
pub fn accuracy(params: &NetworkParams, dataset: &Dataset) -> Result<f64> {
    let trace = forward_batch(params, dataset.inputs.view())?;
    accuracy_of_outputs(trace.output.view(), dataset)
}

pub fn argmax(z: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = k;
        }
    }
    best
}

/// `outputs` is `d × n`.
pub fn accuracy_of_outputs(outputs: ArrayView2<f64>, dataset: &Dataset) -> Result<f64> {
    let classes = match &dataset.labels {
        Labels::Classes { classes, .. } => classes,
        Labels::Regression(_) => {
            return Err(Error::Precondition("accuracy needs class labels".into()));
        }
    };
    let hits = classes
        .iter()
        .enumerate()
        .filter(|(i, c)| argmax(outputs.column(*i)) == **c)
        .count();
    Ok(hits as f64 / classes.len() as f64)
}

/// `x ↦ (W − W₀) x` without forming the difference.
struct Difference<'a> {
    current: &'a Array2<f64>,
    start: &'a Array2<f64>,
}

impl LinearOperator for Difference<'_> {
    fn rows(&self) -> usize {
        self.current.nrows()
    }
    fn cols(&self) -> usize {
        self.current.ncols()
    }
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        linalg::matvec(self.current.view(), x) - linalg::matvec(self.start.view(), x)
    }
    fn apply_t(&self, y: ArrayView1<f64>) -> Array1<f64> {
        linalg::matvec_t(self.current.view(), y) - linalg::matvec_t(self.start.view(), y)
    }
}

struct Travel {
    start: Vec<Array2<f64>>,
    start_norms: Vec<f64>,
}

impl Travel {
    fn new(params: &NetworkParams) -> Self {
        let start: Vec<Array2<f64>> = (1..=params.depth()).map(|l| params.hidden(l).clone()).collect();
        let start_norms = start.iter().map(|w| linalg::frobenius(w.view())).collect();
        Self { start, start_norms }
    }

    fn frobenius(&self, params: &NetworkParams) -> (f64, f64) {
        let mut abs_max: f64 = 0.0;
        let mut rel_max: f64 = 0.0;
        for (k, w0) in self.start.iter().enumerate() {
            let d = params
                .hidden(k + 1)
                .iter()
                .zip(w0.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            abs_max = abs_max.max(d);
            rel_max = rel_max.max(d / self.start_norms[k]);
        }
        (abs_max, rel_max)
    }

    fn spectral(&self, params: &NetworkParams, seed: u64) -> f64 {
        self.start
            .iter()
            .enumerate()
            .map(|(k, w0)| {
                let op = Difference {
                    current: params.hidden(k + 1),
                    start: w0,
                };
                linalg::spectral_norm(&op, seed ^ k as u64, PowerIterationConfig::default()).value()
            })
            .fold(0.0, f64::max)
    }
}

/// Trailing-80% least-squares fit of `log F(t)` against `t`.
pub fn linearity_fit(records: &[IterRecord]) -> Option<LinearFit> {
    let last = records.last()?.t;
    let from = (last as f64 * 0.2).floor() as usize;
    let (ts, ls): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.t >= from && r.objective > 0.0)
        .map(|r| (r.t as f64, r.objective.ln()))
        .unzip();
    linalg::linear_fit(&ts, &ls)
}

/// Runs GD (or SGD when a batch size below `n` is set) until `F <= eps` or the cap.
pub fn train(params: &mut NetworkParams, dataset: &Dataset, loss: &LossFunction, config: &TrainConfig) -> Result<ConvergenceTrace> {
    config.validate(dataset.len())?;
    let n = dataset.len();
    let travel = config.track_travel.then(|| Travel::new(params));
    let mut records: Vec<IterRecord> = Vec::new();
    let status;
    let mut diagnostic = None;
    let mut f0 = f64::NAN;
    let all: Vec<usize> = (0..n).collect();
    let mut t = 0;
    loop {
        let eval = evaluate(params, dataset, loss)?;
        let f = eval.value;
        if t == 0 {
            f0 = f;
        }
        let accuracy = if dataset.is_classification() {
            Some(accuracy_of_outputs(eval.trace.output.view(), dataset)?)
        } else {
            None
        };
        let (travel_fro_max, travel_rel_max) = match &travel {
            Some(tr) => {
                let (a, r) = tr.frobenius(params);
                (Some(a), Some(r))
            }
            None => (None, None),
        };
        let stop = if !f.is_finite() {
            Some(TrainStatus::NonFinite)
        } else if f <= config.target_eps {
            Some(TrainStatus::Converged)
        } else if config.stop_on_accuracy && accuracy == Some(1.0) {
            Some(TrainStatus::PerfectAccuracy)
        } else if f > 10.0 * f0 {
            Some(TrainStatus::Diverged)
        } else if t >= config.max_iters {
            Some(TrainStatus::MaxIterations)
        } else {
            None
        };
        let spec_due = config.travel_spec_every > 0 && t % config.travel_spec_every == 0;
        let travel_spec_max = match &travel {
            Some(_) if t == 0 => Some(0.0),
            Some(tr) if spec_due || stop.is_some() => Some(tr.spectral(params, config.seed)),
            _ => None,
        };
        let loss_grad_norm = linalg::frobenius(eval.loss_vectors.view());
        let mut record = IterRecord {
            t,
            objective: f,
            grad_fro_max: f64::NAN,
            grad_fro_last: f64::NAN,
            loss_grad_norm,
            travel_fro_max,
            travel_rel_max,
            travel_spec_max,
            accuracy,
        };
        if let Some(s) = stop {
            // Gradient norms at the final iterate, without updating.
            if f.is_finite() {
                let bp = Backprop::new(params, &eval.trace, eval.loss_vectors.view())?;
                let norms: Vec<f64> = (1..=params.depth()).map(|l| bp.layer_gradient_sq_norm(l).sqrt()).collect();
                record.grad_fro_max = norms.iter().copied().fold(0.0, f64::max);
                record.grad_fro_last = *norms.last().expect("depth >= 1");
            }
            records.push(record);
            status = s;
            if s == TrainStatus::Diverged {
                diagnostic = Some(format!("objective {f:.4e} exceeded 10x its initial value {f0:.4e} at t={t}"));
            }
            break;
        }
        let step = match config.batch {
            Some(b) if b < n => {
                let batch = sample_batch(n, b, config.seed, t);
                let (objective, vectors, trace) = batch_loss(params, dataset, loss, &batch)?;
                let norms = descend(params, &trace, vectors.view(), config.eta, config.joint);
                norms.map(|grad_norms| StepRecord { objective, grad_norms })
            }
            Some(_) => {
                // b = n goes through the batch path so it matches GD bit for bit.
                let (objective, vectors, trace) = batch_loss(params, dataset, loss, &all)?;
                let norms = descend(params, &trace, vectors.view(), config.eta, config.joint);
                norms.map(|grad_norms| StepRecord { objective, grad_norms })
            }
            None => descend(params, &eval.trace, eval.loss_vectors.view(), config.eta, config.joint)
                .map(|grad_norms| StepRecord { objective: f, grad_norms }),
        };
        let step = match step {
            Ok(s) => s,
            Err(Error::NonFinite(what)) => {
                records.push(record);
                status = TrainStatus::NonFinite;
                diagnostic = Some(format!("non-finite {what} at t={t}"));
                break;
            }
            Err(e) => return Err(e),
        };
        record.grad_fro_max = step.grad_max();
        record.grad_fro_last = *step.grad_norms.last().expect("depth >= 1");
        records.push(record);
        t += 1;
    }
    let linearity = linearity_fit(&records);
    Ok(ConvergenceTrace {
        records,
        status,
        eta: config.eta,
        batch: config.batch,
        loss: loss.name(),
        linearity,
        diagnostic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRun {
    pub eta: f64,
    pub monotone: bool,
    pub status: TrainStatus,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSweep {
    pub chosen: f64,
    pub pilots: Vec<PilotRun>,
}

pub const PILOT_ITERS: usize = 50;

/// Largest step size in `grid` whose pilot run decreases the objective at every step.
pub fn eta_sweep(params: &NetworkParams, dataset: &Dataset, loss: &LossFunction, grid: &[f64]) -> Result<EtaSweep> {
    eta_sweep_with(params, dataset, loss, grid, PILOT_ITERS, None)
}

/// Pilots run `pilot_iters` GD steps (or SGD with `batch`).
pub fn eta_sweep_with(
    params: &NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    grid: &[f64],
    pilot_iters: usize,
    batch: Option<usize>,
) -> Result<EtaSweep> {
    if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::Config("eta grid must be non-empty and positive".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    sorted.dedup();
    let mut pilots = Vec::new();
    for &eta in &sorted {
        let mut p = params.clone();
        let cfg = TrainConfig {
            eta,
            max_iters: pilot_iters,
            batch,
            target_eps: f64::MIN_POSITIVE,
            track_travel: false,
            seed: params.seed(),
            joint: false,
            stop_on_accuracy: false,
            travel_spec_every: 0,
        };
        let trace = train(&mut p, dataset, loss, &cfg)?;
        let monotone = trace.monotone_fraction() == 1.0
            && matches!(trace.status, TrainStatus::MaxIterations | TrainStatus::Converged);
        pilots.push(PilotRun {
            eta,
            monotone,
            status: trace.status,
            final_objective: trace.final_objective(),
        });
        if monotone {
            return Ok(EtaSweep { chosen: eta, pilots });
        }
    }
    let summary: Vec<String> = pilots
        .iter()
        .map(|p| format!("eta={:.3e}: {:?}, final F={:.3e}", p.eta, p.status, p.final_objective))
        .collect();
    Err(Error::Diverged(format!(
        "no step size in the grid decreased the objective monotonically ({})",
        summary.join("; ")
    )))
}

/// Geometric grid from `hi` down to `lo` with `per_decade` points per decade.
pub fn geometric_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let steps = ((hi / lo).log10() * per_decade as f64).round().max(0.0) as usize;
    (0..=steps)
        .map(|k| hi * 10f64.powf(-(k as f64) / per_decade as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// `‖∇_{W_L} F‖²_F / F(t)` at every recorded iterate with `F >= 1e-14`.
    pub ratios: Vec<(usize, f64)>,
    pub floor: Option<f64>,
    pub skipped: usize,
    pub positive: bool,
}

/// Empirical gradient-dominance ratio along a trajectory.
pub fn gradient_dominance_check(trace: &ConvergenceTrace) -> DominanceReport {
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for r in &trace.records {
        if r.objective < 1e-14 || !r.grad_fro_last.is_finite() {
            skipped += 1;
            continue;
        }
        ratios.push((r.t, r.grad_fro_last * r.grad_fro_last / r.objective));
    }
    let floor = ratios.iter().map(|r| r.1).reduce(f64::min);
    DominanceReport {
        positive: floor.is_some_and(|f| f > 0.0),
        ratios,
        floor,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_separated_dataset, LabelMode};
    use crate::netcore::{backward_batch, init_network, objective, ArchSpec};

    fn setup(m: usize, n: usize) -> (NetworkParams, Dataset) {
        let ds = generate_separated_dataset(n, 6, 0.2, LabelMode::Regression { output_dim: 1 }, 3).unwrap();
        let p = init_network(&ArchSpec::fully_connected(6, m, 1, 2), 7).unwrap();
        (p, ds)
    }

    #[test]
    fn zero_step_is_identity() {
        let (mut p, ds) = setup(8, 3);
        let before = p.clone();
        let f0 = objective(&p, &ds, &LossFunction::L2).unwrap().0;
        gd_step(&mut p, &ds, &LossFunction::L2, 0.0, false).unwrap();
        assert_eq!(p, before);
        assert_eq!(objective(&p, &ds, &LossFunction::L2).unwrap().0, f0);
    }

    #[test]
    fn step_equals_hand_composed_update() {
        let (mut p, ds) = setup(8, 3);
        let eval = evaluate(&p, &ds, &LossFunction::L2).unwrap();
        let grads = backward_batch(&p, &eval.trace, eval.loss_vectors.view()).unwrap();
        let mut expected = p.clone();
        for l in 1..=2 {
            let w = expected.hidden(l) - &(grads.layer(l) * 0.01);
            *expected.weight_mut(l) = w;
        }
        gd_step(&mut p, &ds, &LossFunction::L2, 0.01, false).unwrap();
        assert_eq!(p, expected);
    }

    #[test]
    fn small_step_descends() {
        let (mut p, ds) = setup(16, 4);
        let f0 = objective(&p, &ds, &LossFunction::L2).unwrap().0;
        gd_step(&mut p, &ds, &LossFunction::L2, 1e-4, false).unwrap();
        assert!(objective(&p, &ds, &LossFunction::L2).unwrap().0 < f0);
    }

    #[test]
    fn full_batch_sgd_matches_gd() {
        let (p, ds) = setup(12, 4);
        let mut a = p.clone();
        let mut b = p.clone();
        gd_step(&mut a, &ds, &LossFunction::L2, 0.05, false).unwrap();
        sgd_step(&mut b, &ds, &LossFunction::L2, 0.05, &[0, 1, 2, 3], false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_batches_average_to_full_gradient() {
        let (p, ds) = setup(10, 5);
        let full = {
            let e = evaluate(&p, &ds, &LossFunction::L2).unwrap();
            backward_batch(&p, &e.trace, e.loss_vectors.view()).unwrap()
        };
        let mut avg: Vec<Array2<f64>> = full.hidden.iter().map(|g| Array2::zeros(g.dim())).collect();
        for i in 0..5 {
            let (_, v, trace) = batch_loss(&p, &ds, &LossFunction::L2, &[i]).unwrap();
            let g = backward_batch(&p, &trace, v.view()).unwrap();
            for (a, gi) in avg.iter_mut().zip(&g.hidden) {
                a.scaled_add(1.0 / 5.0, gi);
            }
        }
        for (a, f) in avg.iter().zip(&full.hidden) {
            assert!((a - f).iter().all(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn batch_sampling_is_sorted_and_distinct() {
        let b = sample_batch(10, 4, 1, 0);
        assert_eq!(b.len(), 4);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(sample_batch(10, 4, 1, 0), sample_batch(10, 4, 1, 1));
        assert_eq!(sample_batch(10, 4, 1, 3), sample_batch(10, 4, 1, 3));
    }

    #[test]
    fn already_converged_returns_immediately() {
        let (mut p, ds) = setup(8, 3);
        let cfg = TrainConfig {
            target_eps: 1e9,
            ..Default::default()
        };
        let tr = train(&mut p, &ds, &LossFunction::L2, &cfg).unwrap();
        assert_eq!(tr.iterations(), 0);
        assert_eq!(tr.status, TrainStatus::Converged);
        assert_eq!(tr.records[0].travel_fro_max, Some(0.0));
    }

    #[test]
    fn sweep_selection_rule() {
        let (p, ds) = setup(16, 4);
        let one = eta_sweep(&p, &ds, &LossFunction::L2, &[1e-3]).unwrap();
        assert_eq!(one.chosen, 1e-3);
        let two = eta_sweep(&p, &ds, &LossFunction::L2, &[1e3, 1e-3]).unwrap();
        assert_eq!(two.chosen, 1e-3);
        assert!(!two.pilots[0].monotone);
        assert!(eta_sweep(&p, &ds, &LossFunction::L2, &[1e3, 1e4]).is_err());
    }

    #[test]
    fn accuracy_counting() {
        let ds = generate_separated_dataset(4, 5, 0.2, LabelMode::Classification { classes: 3 }, 1).unwrap();
        let p = init_network(&ArchSpec::fully_connected(5, 8, 3, 1), 2).unwrap();
        let out = forward_batch(&p, ds.inputs.view()).unwrap().output;
        let predicted: Vec<usize> = (0..4).map(|i| argmax(out.column(i))).collect();
        let fitted = Dataset::new(
            ds.inputs.clone(),
            Labels::Classes {
                classes: predicted.clone(),
                num_classes: 3,
            },
            0,
        )
        .unwrap();
        assert_eq!(accuracy(&p, &fitted).unwrap(), 1.0);
        let mut wrong = predicted;
        wrong[2] = (wrong[2] + 1) % 3;
        let one_off = Dataset::new(ds.inputs.clone(), Labels::Classes { classes: wrong, num_classes: 3 }, 0).unwrap();
        assert_eq!(accuracy(&p, &one_off).unwrap(), 0.75);
        let (_, reg) = setup(8, 2);
        assert!(accuracy(&init_network(&ArchSpec::fully_connected(6, 8, 1, 1), 0).unwrap(), &reg).is_err());
        assert_eq!(argmax(ndarray::array![1.0, 3.0, 3.0].view()), 1);
    }

    #[test]
    fn dominance_skips_zero_objective() {
        let trace = ConvergenceTrace {
            records: vec![IterRecord {
                t: 0,
                objective: 0.0,
                grad_fro_max: 0.0,
                grad_fro_last: 0.0,
                loss_grad_norm: 0.0,
                travel_fro_max: None,
                travel_rel_max: None,
                travel_spec_max: None,
                accuracy: None,
            }],
            status: TrainStatus::Converged,
            eta: 1.0,
            batch: None,
            loss: "l2".into(),
            linearity: None,
            diagnostic: None,
        };
        let r = gradient_dominance_check(&trace);
        assert_eq!(r.skipped, 1);
        assert!(r.floor.is_none() && !r.positive);
    }
}
