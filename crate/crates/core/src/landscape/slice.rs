use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Weights;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, save_checkpoint, write_csv};
use crate::linalg::orthonormalize_pair;
use crate::netcore::{objective, NetworkParams};
use crate::training::loss::LossFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Half-width of the grid along each direction.
    pub extent1: f64,
    pub extent2: f64,
    /// Odd, so that the center is a grid point.
    pub steps1: usize,
    pub steps2: usize,
    pub max_evals: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            extent1: 1.0,
            extent2: 1.0,
            steps1: 21,
            steps2: 21,
            max_evals: 10_000,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (s, e) in [(self.steps1, self.extent1), (self.steps2, self.extent2)] {
            if s == 0 || s % 2 == 0 {
                return Err(Error::Config(format!("grid steps must be odd and positive, got {s}")));
            }
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("grid extent must be finite and nonnegative, got {e}")));
            }
        }
        let cells = self.steps1.saturating_mul(self.steps2);
        if cells > self.max_evals {
            return Err(Error::Budget {
                requested: cells,
                budget: self.max_evals,
            });
        }
        Ok(())
    }
}

/// Symmetric coordinates with an exact zero in the middle.
fn axis(extent: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    let k = (steps - 1) as f64;
    (0..steps).map(|i| extent * (2.0 * i as f64 - k) / k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    /// Fingerprint of the center parameters.
    pub center: u64,
    pub center_value: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    /// `values[[i, j]] = F(W + s1[i] D1 + s2[j] D2)`
    pub values: Array2<f64>,
    pub direction1: Weights,
    pub direction2: Weights,
    pub direction1_label: String,
    pub direction2_label: String,
    pub width: usize,
    pub depth: usize,
    pub loss: String,
    pub iteration: Option<usize>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    center: String,
    center_value: f64,
    extent1: f64,
    extent2: f64,
    steps1: usize,
    steps2: usize,
    direction1: &'a str,
    direction2: &'a str,
    direction1_file: &'a str,
    direction2_file: &'a str,
    width: usize,
    depth: usize,
    loss: &'a str,
    iteration: Option<usize>,
}

impl LandscapeGrid {
    pub const CSV_HEADER: [&'static str; 3] = ["s1", "s2", "F"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::with_capacity(self.values.len());
        for (i, a) in self.s1.iter().enumerate() {
            for (j, b) in self.s2.iter().enumerate() {
                rows.push(vec![fmt_f64(*a), fmt_f64(*b), fmt_f64(self.values[[i, j]])]);
            }
        }
        rows
    }

    /// Row of the grid through the center of the second direction.
    pub fn center_row(&self) -> Array1<f64> {
        self.values.column(self.s2.len() / 2).to_owned()
    }

    pub fn center_cell(&self) -> f64 {
        self.values[[self.s1.len() / 2, self.s2.len() / 2]]
    }

    /// `grid.csv`, `grid.json` and the two directions as checkpoint-format deltas.
    pub fn write(&self, dir: &Path, params: &NetworkParams) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("grid.csv"), &Self::CSV_HEADER, &self.csv_rows())?;
        save_checkpoint(&dir.join("direction1.opl"), &as_delta(params, &self.direction1)?)?;
        save_checkpoint(&dir.join("direction2.opl"), &as_delta(params, &self.direction2)?)?;
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        let side = Sidecar {
            center: format!("{:016x}", self.center),
            center_value: self.center_value,
            extent1: last(&self.s1),
            extent2: last(&self.s2),
            steps1: self.s1.len(),
            steps2: self.s2.len(),
            direction1: &self.direction1_label,
            direction2: &self.direction2_label,
            direction1_file: "direction1.opl",
            direction2_file: "direction2.opl",
            width: self.width,
            depth: self.depth,
            loss: &self.loss,
            iteration: self.iteration,
        };
        let path = dir.join("grid.json");
        std::fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }
}

/// Direction stored as a network whose input, output and bias blocks are zero.
fn as_delta(params: &NetworkParams, dir: &[Array2<f64>]) -> Result<NetworkParams> {
    let mut weights = vec![Array2::zeros(params.input_matrix().raw_dim())];
    weights.extend(dir.iter().cloned());
    let bias = params.biases().iter().map(|b| Array1::zeros(b.len())).collect();
    NetworkParams::from_parts(
        params.arch().clone(),
        params.seed(),
        weights,
        Array2::zeros(params.output_matrix().raw_dim()),
        bias,
    )
}

/// `F` on the affine grid `W + s1 D1 + s2 D2` after Gram–Schmidt on the directions.
pub fn landscape_slice(
    params: &NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    d1: &[Array2<f64>],
    d2: &[Array2<f64>],
    grid: &GridSpec,
) -> Result<LandscapeGrid> {
    grid.validate()?;
    let depth = params.depth();
    if d1.len() != depth || d2.len() != depth {
        return Err(Error::Dimension(format!("directions have {} and {} layers, depth is {depth}", d1.len(), d2.len())));
    }
    for (l, (a, b)) in d1.iter().zip(d2).enumerate() {
        let shape = params.hidden(l + 1).shape();
        if a.shape() != shape || b.shape() != shape {
            return Err(Error::Dimension(format!("direction shape mismatch at layer {}", l + 1)));
        }
    }
    let (mut u1, mut u2) = (d1.to_vec(), d2.to_vec());
    orthonormalize_pair(&mut u1, &mut u2)
        .ok_or_else(|| Error::Precondition("slice directions are zero or parallel".into()))?;

    let s1 = axis(grid.extent1, grid.steps1);
    let s2 = axis(grid.extent2, grid.steps2);
    let cells: Vec<(usize, usize)> = (0..s1.len()).flat_map(|i| (0..s2.len()).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (s1[i], s2[j]);
            let hidden = (1..=depth)
                .map(|l| {
                    // Sum the two moves first so that swapping the directions is exact.
                    let mut w = Array2::zeros(u1[l - 1].raw_dim());
                    Zip::from(&mut w)
                        .and(&u1[l - 1])
                        .and(&u2[l - 1])
                        .for_each(|w, x, y| *w = a * x + b * y);
                    w += params.hidden(l);
                    w
                })
                .collect();
            objective(&params.with_hidden(hidden)?, dataset, loss).map(|(f, _)| f)
        })
        .collect::<Result<_>>()?;
    let values = Array2::from_shape_vec((s1.len(), s2.len()), values).expect("grid shape");
    let (center_value, _) = objective(params, dataset, loss)?;
    Ok(LandscapeGrid {
        center: params.fingerprint(),
        center_value,
        s1,
        s2,
        values,
        direction1: u1,
        direction2: u2,
        direction1_label: "direction 1".into(),
        direction2_label: "direction 2".into(),
        width: params.arch().width,
        depth,
        loss: loss.name(),
        iteration: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_separated_dataset, LabelMode};
    use crate::io::load_checkpoint;
    use crate::landscape::{gradient_direction, hidden_weights};
    use crate::netcore::{init_network, ArchSpec};
    use crate::theoryprobes::{unit_directions, PerturbationMode};

    fn setup() -> (NetworkParams, Dataset) {
        let ds = generate_separated_dataset(6, 5, 0.2, LabelMode::Regression { output_dim: 1 }, 7).unwrap();
        let p = init_network(&ArchSpec::fully_connected(5, 48, 1, 2), 8).unwrap();
        (p, ds)
    }

    #[test]
    fn center_matches_objective_and_swap_transposes() {
        let (p, ds) = setup();
        let (g, _) = gradient_direction(&p, &ds, &LossFunction::L2).unwrap();
        let (r, _) = unit_directions(&p, &ds, PerturbationMode::RandomGaussianScaled, 3).unwrap();
        let spec = GridSpec {
            extent1: 0.05,
            extent2: 0.05,
            steps1: 5,
            steps2: 5,
            ..Default::default()
        };
        let grid = landscape_slice(&p, &ds, &LossFunction::L2, &g, &r, &spec).unwrap();
        assert_eq!(grid.center_cell(), grid.center_value);
        let row = grid.center_row();
        let argmin = row.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(grid.s1[argmin] < 0.0);

        // With already orthonormal inputs the swap only exchanges the roles.
        let (d1, d2) = (grid.direction1.clone(), grid.direction2.clone());
        let a = landscape_slice(&p, &ds, &LossFunction::L2, &d1, &d2, &spec).unwrap();
        let b = landscape_slice(&p, &ds, &LossFunction::L2, &d2, &d1, &spec).unwrap();
        let tol = 1e-12 * a.center_value;
        assert!(a.values.iter().zip(b.values.t().iter()).all(|(x, y)| (x - y).abs() <= tol));
    }

    #[test]
    fn single_cell_and_budget() {
        let (p, ds) = setup();
        let w = hidden_weights(&p);
        let (r, _) = unit_directions(&p, &ds, PerturbationMode::RandomGaussianScaled, 3).unwrap();
        let one = GridSpec {
            steps1: 1,
            steps2: 1,
            ..Default::default()
        };
        let grid = landscape_slice(&p, &ds, &LossFunction::L2, &w, &r, &one).unwrap();
        assert_eq!(grid.values.dim(), (1, 1));
        assert_eq!(grid.values[[0, 0]], objective(&p, &ds, &LossFunction::L2).unwrap().0);
        let big = GridSpec {
            steps1: 101,
            steps2: 101,
            max_evals: 100,
            ..Default::default()
        };
        assert!(matches!(
            landscape_slice(&p, &ds, &LossFunction::L2, &w, &r, &big),
            Err(Error::Budget { .. })
        ));
        let even = GridSpec { steps1: 4, ..one };
        assert!(landscape_slice(&p, &ds, &LossFunction::L2, &w, &r, &even).is_err());
    }

    #[test]
    fn export_round_trip() {
        let (p, ds) = setup();
        let (g, _) = gradient_direction(&p, &ds, &LossFunction::L2).unwrap();
        let (r, _) = unit_directions(&p, &ds, PerturbationMode::RandomGaussianScaled, 3).unwrap();
        let spec = GridSpec {
            steps1: 3,
            steps2: 3,
            extent1: 0.1,
            extent2: 0.1,
            ..Default::default()
        };
        let grid = landscape_slice(&p, &ds, &LossFunction::L2, &g, &r, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        grid.write(dir.path(), &p).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
        assert!(csv.starts_with("s1,s2,F\n"));
        assert_eq!(csv.lines().count(), 10);
        let d = load_checkpoint(&dir.path().join("direction1.opl")).unwrap();
        assert_eq!(d.hidden(1), &grid.direction1[0]);
        assert!(d.output_matrix().iter().all(|v| *v == 0.0));
    }
}
