//! Normalized, pairwise-separated synthetic datasets.
//!
//! Every input has unit norm with last coordinate `1/√2`, so the free part
//! (all other coordinates) lives on a sphere of radius `1/√2`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Role};
use crate::training::loss::Target;

pub const LAST_COORD: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Candidate draws before generation gives up.
pub const DEFAULT_MAX_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LabelMode {
    /// Gaussian label vectors clipped to norm at most 1.
    Regression { output_dim: usize },
    /// Uniform class indices.
    Classification { classes: usize },
}

impl LabelMode {
    pub fn output_dim(&self) -> usize {
        match *self {
            LabelMode::Regression { output_dim } => output_dim,
            LabelMode::Classification { classes } => classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Labels {
    /// `n × d`
    Regression(Array2<f64>),
    Classes { classes: Vec<usize>, num_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `n × input_dim`, one sample per row.
    pub inputs: Array2<f64>,
    pub labels: Labels,
    /// Minimum pairwise distance; infinite when there is no pair.
    pub certified_delta: f64,
    pub seed: u64,
}

impl Dataset {
    /// Checks the normalization invariant and certifies the separation.
    pub fn new(inputs: Array2<f64>, labels: Labels, seed: u64) -> Result<Self> {
        let n = inputs.nrows();
        let label_rows = match &labels {
            Labels::Regression(y) => y.nrows(),
            Labels::Classes { classes, num_classes } => {
                if let Some(c) = classes.iter().find(|c| **c >= *num_classes) {
                    return Err(Error::Dimension(format!("class {c} out of range 0..{num_classes}")));
                }
                classes.len()
            }
        };
        if label_rows != n {
            return Err(Error::Dimension(format!("{n} inputs but {label_rows} labels")));
        }
        if inputs.ncols() < 2 {
            return Err(Error::Dimension("inputs need at least two coordinates".into()));
        }
        for (i, x) in inputs.rows().into_iter().enumerate() {
            let norm = crate::linalg::norm(x);
            let last = x[x.len() - 1];
            if (norm - 1.0).abs() > 1e-12 || (last - LAST_COORD).abs() > 1e-12 {
                return Err(Error::Precondition(format!(
                    "input {i} is not normalized (norm {norm}, last coordinate {last})"
                )));
            }
        }
        let certified_delta = if n < 2 { f64::INFINITY } else { min_pairwise_distance(inputs.view()) };
        Ok(Self {
            inputs,
            labels,
            certified_delta,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        match &self.labels {
            Labels::Regression(y) => y.ncols(),
            Labels::Classes { num_classes, .. } => *num_classes,
        }
    }

    pub fn label_mode(&self) -> LabelMode {
        match &self.labels {
            Labels::Regression(y) => LabelMode::Regression { output_dim: y.ncols() },
            Labels::Classes { num_classes, .. } => LabelMode::Classification { classes: *num_classes },
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Labels::Classes { .. })
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.labels {
            Labels::Regression(y) => Target::Vector(y.row(i)),
            Labels::Classes { classes, .. } => Target::Class(classes[i]),
        }
    }

    /// Largest absolute label entry (1 for class labels).
    pub fn label_sup(&self) -> f64 {
        match &self.labels {
            Labels::Regression(y) => y.iter().fold(0.0, |a, v| a.max(v.abs())),
            Labels::Classes { .. } => 1.0,
        }
    }

    /// Rows `indices`, labels carried along; separation recertified.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = match &self.labels {
            Labels::Regression(y) => Labels::Regression(y.select(Axis(0), indices)),
            Labels::Classes { classes, num_classes } => Labels::Classes {
                classes: indices.iter().map(|&i| classes[i]).collect(),
                num_classes: *num_classes,
            },
        };
        Self::new(inputs, labels, self.seed)
    }

    /// Same inputs with regression labels replaced.
    pub fn with_regression_labels(&self, labels: Array2<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), Labels::Regression(labels), self.seed)
    }
}

fn min_pairwise_distance(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Exact minimum pairwise distance by exhaustive scan.
pub fn check_delta(dataset: &Dataset) -> Result<f64> {
    if dataset.len() < 2 {
        return Err(Error::Precondition("separation needs at least two samples".into()));
    }
    Ok(min_pairwise_distance(dataset.inputs.view()))
}

/// Rescale rows to norm at most `1/√2`, pad to exactly `1/√2`, append `1/√2`.
pub fn normalize_inputs(raw: ArrayView2<f64>) -> Result<Array2<f64>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw inputs".into()));
    }
    let max_norm = raw
        .rows()
        .into_iter()
        .map(|r| crate::linalg::norm(r))
        .fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Err(Error::Precondition("all raw inputs are zero".into()));
    }
    let k = raw.ncols();
    let scale = LAST_COORD / max_norm;
    let mut out = Array2::zeros((raw.nrows(), k + 2));
    for (mut row, r) in out.rows_mut().into_iter().zip(raw.rows()) {
        let scaled = r.mapv(|v| v * scale);
        let sq = scaled.dot(&scaled);
        row.slice_mut(s![..k]).assign(&scaled);
        let slack = 0.5 - sq;
        // Rounding on the longest vector must not leave a 1e-8 pad.
        row[k] = if slack > 1e-15 { slack.sqrt() } else { 0.0 };
        row[k + 1] = LAST_COORD;
    }
    Ok(out)
}

/// Upper bound on how many points of a radius-`r` sphere in `dim` dimensions can be
/// `delta`-separated (disjoint balls of radius `delta/2` inside radius `r + delta/2`).
pub fn packing_budget(dim: usize, delta: f64) -> f64 {
    let ratio = 1.0 + 2.0 * LAST_COORD / delta;
    ratio.powi(dim as i32)
}

/// Rejection-samples `n` inputs of dimension `input_dim` with pairwise distance `>= delta_target`.
pub fn generate_separated_dataset(
    n: usize,
    input_dim: usize,
    delta_target: f64,
    label_mode: LabelMode,
    seed: u64,
) -> Result<Dataset> {
    generate_separated_dataset_with(n, input_dim, delta_target, label_mode, seed, DEFAULT_MAX_DRAWS)
}

pub fn generate_separated_dataset_with(
    n: usize,
    input_dim: usize,
    delta_target: f64,
    label_mode: LabelMode,
    seed: u64,
    max_draws: usize,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Precondition("dataset needs at least one sample".into()));
    }
    if input_dim < 2 {
        return Err(Error::Precondition("input_dim must be at least 2".into()));
    }
    if !(delta_target > 0.0 && delta_target <= 1.0) {
        return Err(Error::Precondition(format!("delta_target must be in (0, 1], got {delta_target}")));
    }
    let free = input_dim - 1;
    if (n as f64) > packing_budget(free, delta_target) || (free == 1 && n > 2) {
        return Err(Error::Infeasible(format!(
            "{n} points cannot be {delta_target}-separated on the {}-sphere",
            free - 1
        )));
    }
    if label_mode.output_dim() == 0 {
        return Err(Error::Precondition("labels need a positive dimension".into()));
    }
    let mut r = rng::stream(seed, Role::Data, 0);
    let mut inputs = Array2::zeros((n, input_dim));
    let mut accepted = 0;
    let mut draws = 0;
    while accepted < n {
        if draws >= max_draws {
            return Err(Error::Infeasible(format!(
                "only {accepted} of {n} points placed at separation {delta_target} after {max_draws} draws"
            )));
        }
        draws += 1;
        let mut cand: Array1<f64> = (0..free).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let norm = crate::linalg::norm(cand.view());
        if norm == 0.0 {
            continue;
        }
        cand *= LAST_COORD / norm;
        let far = (0..accepted).all(|j| {
            let row = inputs.row(j);
            cand.iter()
                .zip(row.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                >= delta_target * delta_target * (1.0 + 1e-9)
        });
        if far {
            let mut row = inputs.row_mut(accepted);
            row.slice_mut(s![..free]).assign(&cand);
            row[free] = LAST_COORD;
            accepted += 1;
        }
    }
    // Renormalize so the unit-norm invariant holds to rounding.
    for mut row in inputs.rows_mut() {
        let fnorm = crate::linalg::norm(row.slice(s![..free]));
        row.slice_mut(s![..free]).mapv_inplace(|v| v * LAST_COORD / fnorm);
    }
    let mut lr = rng::stream(seed, Role::Data, 1);
    let labels = match label_mode {
        LabelMode::Regression { output_dim } => {
            let mut y = Array2::zeros((n, output_dim));
            for mut row in y.rows_mut() {
                row.mapv_inplace(|_| lr.sample::<f64, _>(StandardNormal));
                let norm = crate::linalg::norm(row.view());
                if norm > 1.0 {
                    row /= norm;
                }
            }
            Labels::Regression(y)
        }
        LabelMode::Classification { classes } => Labels::Classes {
            classes: (0..n).map(|_| lr.gen_range(0..classes)).collect(),
            num_classes: classes,
        },
    };
    Dataset::new(inputs, labels, seed)
}
