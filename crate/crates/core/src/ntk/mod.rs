//! Finite-width tangent kernel: gradient features of single outputs, kernel
//! values, the linearized output and its agreement with the network under
//! small weight moves.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{self, LinearFit};
use crate::netcore::{forward_batch, Backprop, BatchTrace, NetworkParams};
use crate::theoryprobes::{
    apply_deltas_owned, sign_flip_deltas, unit_directions, Check, PerturbationMode, ProbeReport, SeriesPoint,
};

/// Gradient of output `j` at one input, per trainable layer `1..=L`, in factored form:
/// the layer gradient is `u hᵀ` (or its conv/residual image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtkFeature {
    pub output: usize,
    /// Fingerprint of the weights the feature was taken at.
    pub snapshot: u64,
    pub u: Vec<Array1<f64>>,
    pub h: Vec<Array1<f64>>,
}

impl NtkFeature {
    pub fn depth(&self) -> usize {
        self.u.len()
    }

    /// Dense gradient of layer `l` (test-scale helper).
    pub fn layer_gradient(&self, params: &NetworkParams, l: usize) -> Array2<f64> {
        params.weight_gradient(l, col(&self.u[l - 1]), col(&self.h[l - 1]))
    }
}

fn col(v: &Array1<f64>) -> ArrayView2<'_, f64> {
    v.view().insert_axis(Axis(1))
}

fn check_output(params: &NetworkParams, j: usize) -> Result<()> {
    let d = params.arch().output_dim;
    if j >= d {
        return Err(Error::Precondition(format!("output index {j} out of range 0..{d}")));
    }
    Ok(())
}

/// Features of every (sample, output) pair of a batch; `result[j][i]`.
fn batch_features(params: &NetworkParams, trace: &BatchTrace) -> Result<Vec<Vec<NtkFeature>>> {
    let d = params.arch().output_dim;
    let n = trace.len();
    let snapshot = params.fingerprint();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut e = Array2::zeros((d, n));
        e.row_mut(j).fill(1.0);
        let bp = Backprop::new(params, trace, e.view())?;
        let feats = (0..n)
            .map(|i| NtkFeature {
                output: j,
                snapshot,
                u: (1..=params.depth()).map(|l| bp.upstream(l).column(i).to_owned()).collect(),
                h: (1..=params.depth()).map(|l| trace.layer_input(l).column(i).to_owned()).collect(),
            })
            .collect();
        out.push(feats);
    }
    Ok(out)
}

/// `∇_W y_j(W; x)` for the trainable layers.
pub fn ntk_feature(params: &NetworkParams, x: ArrayView1<f64>, j: usize) -> Result<NtkFeature> {
    check_output(params, j)?;
    let trace = forward_batch(params, x.insert_axis(Axis(0)))?;
    let mut all = batch_features(params, &trace)?;
    Ok(all.swap_remove(j).swap_remove(0))
}

/// Features of every sample for output `j`.
pub fn ntk_features(params: &NetworkParams, dataset: &Dataset, j: usize) -> Result<Vec<NtkFeature>> {
    check_output(params, j)?;
    let trace = forward_batch(params, dataset.inputs.view())?;
    Ok(batch_features(params, &trace)?.swap_remove(j))
}

fn check_snapshot(params: &NetworkParams, f: &NtkFeature) -> Result<()> {
    let fp = params.fingerprint();
    if f.snapshot != fp {
        return Err(Error::SnapshotMismatch {
            left: f.snapshot,
            right: fp,
        });
    }
    if f.depth() != params.depth() {
        return Err(Error::Dimension(format!("feature has {} layers, network {}", f.depth(), params.depth())));
    }
    Ok(())
}

/// Inner product of two features without checking where they were taken.
fn raw_inner(params: &NetworkParams, a: &NtkFeature, b: &NtkFeature) -> f64 {
    (1..=params.depth())
        .map(|l| params.gradient_inner(l, col(&a.u[l - 1]), col(&a.h[l - 1]), col(&b.u[l - 1]), col(&b.h[l - 1])))
        .sum()
}

/// `⟨∇y_j(x), ∇y_j(x̃)⟩`; both features must come from `params`.
pub fn kernel_value(params: &NetworkParams, a: &NtkFeature, b: &NtkFeature) -> Result<f64> {
    if a.snapshot != b.snapshot {
        return Err(Error::SnapshotMismatch {
            left: a.snapshot,
            right: b.snapshot,
        });
    }
    check_snapshot(params, a)?;
    if a.output != b.output {
        return Err(Error::Precondition(format!("features of outputs {} and {}", a.output, b.output)));
    }
    Ok(raw_inner(params, a, b))
}

/// Per-output kernel values `K_j(x, x̃)` for `j` in `0..d`.
pub fn ntk_kernel(params: &NetworkParams, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    let mut both = Array2::zeros((2, x.len()));
    both.row_mut(0).assign(&x);
    both.row_mut(1).assign(&y);
    let trace = forward_batch(params, both.view())?;
    let feats = batch_features(params, &trace)?;
    Ok(feats.iter().map(|f| raw_inner(params, &f[0], &f[1])).collect())
}

/// `n × n` kernel matrix of output `j`; symmetric by construction.
pub fn ntk_gram(params: &NetworkParams, dataset: &Dataset, j: usize) -> Result<Array2<f64>> {
    let feats = ntk_features(params, dataset, j)?;
    let n = feats.len();
    let mut k = Array2::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let v = raw_inner(params, &feats[a], &feats[b]);
            k[[a, b]] = v;
            k[[b, a]] = v;
        }
    }
    Ok(k)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &Array2<f64>) -> f64 {
    let n = k.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
    m.symmetric_eigen().eigenvalues.min()
}

/// `⟨∇y_j(W⁰; x), W'⟩` with `W'` given for layers `1..=L`.
pub fn ntk_objective(params: &NetworkParams, feature: &NtkFeature, wprime: &[Array2<f64>]) -> Result<f64> {
    check_snapshot(params, feature)?;
    if wprime.len() != params.depth() {
        return Err(Error::Dimension(format!("{} matrices for depth {}", wprime.len(), params.depth())));
    }
    for (k, w) in wprime.iter().enumerate() {
        if w.dim() != params.arch().weight_shape(k + 1) {
            return Err(Error::Dimension(format!(
                "layer {} has shape {:?}, expected {:?}",
                k + 1,
                w.dim(),
                params.arch().weight_shape(k + 1)
            )));
        }
    }
    Ok(linear_output(params, feature, wprime))
}

fn linear_output(params: &NetworkParams, f: &NtkFeature, wprime: &[Array2<f64>]) -> f64 {
    (1..=params.depth())
        .map(|l| {
            let moved = params.linear_action(l, wprime[l - 1].view(), col(&f.h[l - 1]));
            f.u[l - 1].dot(&moved.column(0))
        })
        .sum()
}

/// `‖∇(a) - ∇(b)‖_F` using bilinearity: `G(u', h') - G(u, h) = G(u' - u, h') + G(u, h' - h)`.
fn feature_distance(params: &NetworkParams, a: &NtkFeature, b: &NtkFeature) -> f64 {
    let mut sq = 0.0;
    for l in 1..=params.depth() {
        let du = &a.u[l - 1] - &b.u[l - 1];
        let dh = &a.h[l - 1] - &b.h[l - 1];
        let (ha, ub) = (&a.h[l - 1], &b.u[l - 1]);
        let p = params.gradient_inner(l, col(&du), col(ha), col(&du), col(ha));
        let q = params.gradient_inner(l, col(&du), col(ha), col(ub), col(&dh));
        let r = params.gradient_inner(l, col(ub), col(&dh), col(ub), col(&dh));
        sq += p + 2.0 * q + r;
    }
    sq.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub omega: f64,
    pub width: usize,
    pub output: usize,
    /// `‖∇y_j(W⁰+W') - ∇y_j(W⁰)‖_F / ‖∇y_j(W⁰)‖_F`
    pub grad_ratio: f64,
    /// `|y_j(W⁰+W') - y_j(W⁰) - ⟨∇y_j(W⁰), W'⟩|`
    pub first_order_residual: f64,
    /// `|K' - K| / |K|` at the pair `(x, x̃)`.
    pub kernel_dev: f64,
    pub kernel_dev_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtkEquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub grad_ratio: ProbeReport,
    pub first_order_residual: ProbeReport,
    pub kernel_dev: ProbeReport,
    pub notes: Vec<String>,
}

impl NtkEquivalenceReport {
    pub const CSV_HEADER: [&'static str; 5] = ["omega", "m", "grad_ratio", "first_order_residual", "kernel_dev"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    io::fmt_f64(r.omega),
                    r.width.to_string(),
                    io::fmt_f64(r.grad_ratio),
                    io::fmt_f64(r.first_order_residual),
                    io::fmt_f64(r.kernel_dev),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &Self::CSV_HEADER, &self.csv_rows())
    }

    pub fn residual_fit(&self) -> Option<LinearFit> {
        self.first_order_residual.fit
    }
}

/// Windows on the log-log slopes against omega.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceWindows {
    pub grad_ratio: Check,
    pub first_order_residual: Check,
}

impl Default for EquivalenceWindows {
    fn default() -> Self {
        Self {
            grad_ratio: Check::Informational,
            first_order_residual: Check::SlopeWindow {
                lo: 1.1,
                hi: 1.55,
                min_r2: 0.0,
            },
        }
    }
}

/// Compares the network with its linearization at `W⁰` for every omega.
///
/// `sample` is the input `x`, `partner` the second kernel argument `x̃`.
pub fn ntk_equivalence(
    params: &NetworkParams,
    dataset: &Dataset,
    sample: usize,
    partner: usize,
    omegas: &[f64],
    mode: PerturbationMode,
    seed: u64,
    windows: EquivalenceWindows,
) -> Result<NtkEquivalenceReport> {
    if sample >= dataset.len() || partner >= dataset.len() {
        return Err(Error::Precondition(format!(
            "sample {sample} / partner {partner} out of range for {} samples",
            dataset.len()
        )));
    }
    let pair = dataset.subset(&[sample, partner])?;
    let d = params.arch().output_dim;
    let width = params.arch().width;
    let t0 = forward_batch(params, pair.inputs.view())?;
    let f0 = batch_features(params, &t0)?;
    let k0: Vec<f64> = f0.iter().map(|f| raw_inner(params, &f[0], &f[1])).collect();
    let linear = match mode {
        PerturbationMode::SignFlip { .. } => None,
        m => Some(unit_directions(params, dataset, m, seed)?),
    };
    let mut notes = linear.as_ref().map(|(_, n)| n.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    for &omega in omegas {
        let deltas = match (&linear, mode) {
            (Some((dirs, _)), _) => dirs.iter().map(|m| m * omega).collect::<Vec<_>>(),
            (None, PerturbationMode::SignFlip { sample: s, output }) => {
                let (dl, n) = sign_flip_deltas(params, dataset, s, output, omega)?;
                notes.extend(n.into_iter().map(|s| format!("omega {omega}: {s}")));
                dl
            }
            _ => unreachable!(),
        };
        let lin: Vec<f64> = (0..d).map(|j| linear_output(params, &f0[j][0], &deltas)).collect();
        let moved = apply_deltas_owned(params, deltas)?;
        let t1 = forward_batch(&moved, pair.inputs.view())?;
        let f1 = batch_features(&moved, &t1)?;
        for j in 0..d {
            let base = raw_inner(params, &f0[j][0], &f0[j][0]).sqrt();
            let grad_ratio = if base > 0.0 {
                feature_distance(params, &f1[j][0], &f0[j][0]) / base
            } else {
                0.0
            };
            let residual = (t1.output[[j, 0]] - t0.output[[j, 0]] - lin[j]).abs();
            let k1 = raw_inner(&moved, &f1[j][0], &f1[j][1]);
            let abs = (k1 - k0[j]).abs();
            rows.push(EquivalenceRow {
                omega,
                width,
                output: j,
                grad_ratio,
                first_order_residual: residual,
                kernel_dev: if k0[j] != 0.0 { abs / k0[j].abs() } else { abs },
                kernel_dev_abs: abs,
            });
        }
    }
    let series = |get: fn(&EquivalenceRow) -> f64| -> Vec<SeriesPoint> {
        rows.iter()
            .map(|r| SeriesPoint {
                omega: Some(r.omega),
                layer: r.output as i64,
                value: get(r),
            })
            .collect()
    };
    Ok(NtkEquivalenceReport {
        grad_ratio: ProbeReport::new("ntk_grad_ratio", series(|r| r.grad_ratio), windows.grad_ratio)
            .with_prediction(1.0 / 3.0, "ratio ∝ omega^(1/3)"),
        first_order_residual: ProbeReport::new(
            "ntk_first_order_residual",
            series(|r| r.first_order_residual),
            windows.first_order_residual,
        )
        .with_prediction(4.0 / 3.0, "residual ∝ omega^(4/3)"),
        kernel_dev: ProbeReport::new("ntk_kernel_dev", series(|r| r.kernel_dev), Check::Informational),
        rows,
        notes,
    })
}

/// Kernel matrices of every output as `(row, col, j, value)` records.
pub const KERNEL_CSV_HEADER: [&str; 4] = ["row", "col", "j", "value"];

pub fn kernel_csv_rows(grams: &[Array2<f64>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (j, k) in grams.iter().enumerate() {
        for ((r, c), v) in k.indexed_iter() {
            rows.push(vec![r.to_string(), c.to_string(), j.to_string(), io::fmt_f64(*v)]);
        }
    }
    rows
}

pub fn write_kernel_csv(path: &Path, grams: &[Array2<f64>]) -> Result<()> {
    io::write_csv(path, &KERNEL_CSV_HEADER, &kernel_csv_rows(grams))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgFit {
    pub coefficients: Array1<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradients for `(K + ridge·I) α = y`; diagnostic kernel regression.
pub fn cg_fit(k: &Array2<f64>, y: ArrayView1<f64>, ridge: f64, tol: f64, max_iters: usize) -> Result<CgFit> {
    let n = k.nrows();
    if k.ncols() != n || y.len() != n {
        return Err(Error::Dimension(format!("kernel {:?} with {} targets", k.dim(), y.len())));
    }
    let apply = |v: &Array1<f64>| -> Array1<f64> { k.dot(v) + v * ridge };
    let mut alpha = Array1::zeros(n);
    let mut r = y.to_owned();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let target = tol * linalg::norm(y).max(f64::MIN_POSITIVE);
    let mut it = 0;
    while it < max_iters && rs.sqrt() > target {
        let kp = apply(&p);
        let denom = p.dot(&kp);
        if denom <= 0.0 {
            break;
        }
        let step = rs / denom;
        alpha.scaled_add(step, &p);
        r.scaled_add(-step, &kp);
        let next = r.dot(&r);
        p = &r + &(p * (next / rs));
        rs = next;
        it += 1;
    }
    Ok(CgFit {
        coefficients: alpha,
        residual_norm: rs.sqrt(),
        iterations: it,
        converged: rs.sqrt() <= target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_separated_dataset, LabelMode};
    use crate::netcore::{init_network, ArchSpec};
    use ndarray::array;

    fn small() -> (NetworkParams, Dataset) {
        let ds = generate_separated_dataset(4, 5, 0.2, LabelMode::Regression { output_dim: 2 }, 3).unwrap();
        let p = init_network(&ArchSpec::fully_connected(5, 8, 2, 2), 4).unwrap();
        (p, ds)
    }

    fn flatten(params: &NetworkParams, f: &NtkFeature) -> Vec<f64> {
        (1..=params.depth()).flat_map(|l| f.layer_gradient(params, l).into_iter()).collect()
    }

    #[test]
    fn hand_two_by_two() {
        let arch = ArchSpec::fully_connected(2, 2, 1, 1);
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let w = array![[1.0, 2.0], [-3.0, 1.0]];
        let b = array![[2.0, 5.0]];
        let p = NetworkParams::from_parts(arch, 0, vec![a, w], b, vec![]).unwrap();
        let f = ntk_feature(&p, array![1.0, 1.0].view(), 0).unwrap();
        // g1 = (3, -2): D1 Bᵀ = (2, 0), h0 = (1, 1).
        assert_eq!(f.layer_gradient(&p, 1), array![[2.0, 2.0], [0.0, 0.0]]);
    }

    #[test]
    fn factored_kernel_matches_flattened() {
        let (p, ds) = small();
        for j in 0..2 {
            let fs = ntk_features(&p, &ds, j).unwrap();
            let k = ntk_gram(&p, &ds, j).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    let fa = flatten(&p, &fs[a]);
                    let fb = flatten(&p, &fs[b]);
                    let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
                    assert!((k[[a, b]] - dot).abs() < 1e-12 * dot.abs().max(1.0));
                }
            }
            assert_eq!(k, k.t());
            assert!(min_eigenvalue(&k) >= -1e-8 * k.diag().sum() / 4.0);
            let kv = ntk_kernel(&p, ds.input(0), ds.input(1)).unwrap();
            assert!((kv[j] - k[[0, 1]]).abs() < 1e-12 * k[[0, 1]].abs().max(1.0));
        }
    }

    #[test]
    fn cauchy_schwarz_and_determinism() {
        let (p, ds) = small();
        let a = ntk_feature(&p, ds.input(0), 1).unwrap();
        let b = ntk_feature(&p, ds.input(2), 1).unwrap();
        assert_eq!(a, ntk_feature(&p, ds.input(0), 1).unwrap());
        let kab = kernel_value(&p, &a, &b).unwrap();
        let kaa = kernel_value(&p, &a, &a).unwrap();
        let kbb = kernel_value(&p, &b, &b).unwrap();
        assert!(kaa > 0.0 && kab * kab <= kaa * kbb);
        assert_eq!(kab, kernel_value(&p, &b, &a).unwrap());
        assert!(ntk_feature(&p, ds.input(0), 2).is_err());
    }

    #[test]
    fn snapshot_mismatch() {
        let (p, ds) = small();
        let a = ntk_feature(&p, ds.input(0), 0).unwrap();
        let mut q = p.clone();
        q.weight_mut(1)[[0, 0]] += 1e-3;
        let b = ntk_feature(&q, ds.input(1), 0).unwrap();
        assert!(matches!(kernel_value(&p, &a, &b), Err(Error::SnapshotMismatch { .. })));
        assert!(matches!(kernel_value(&q, &a, &a), Err(Error::SnapshotMismatch { .. })));
    }

    #[test]
    fn objective_is_linear_and_matches_flattened() {
        let (p, ds) = small();
        let f = ntk_feature(&p, ds.input(1), 0).unwrap();
        let shape = |l| p.arch().weight_shape(l);
        let mk = |seed: u64| -> Vec<Array2<f64>> {
            (1..=2)
                .map(|l| crate::rng::gaussian_matrix(seed, crate::rng::Role::Probe, l as u64, shape(l).0, shape(l).1, 1.0))
                .collect()
        };
        let (pm, qm) = (mk(1), mk(2));
        let zero: Vec<Array2<f64>> = (1..=2).map(|l| Array2::zeros(shape(l))).collect();
        assert_eq!(ntk_objective(&p, &f, &zero).unwrap(), 0.0);
        let combo: Vec<Array2<f64>> = pm.iter().zip(&qm).map(|(a, b)| a * 2.0 - b * 0.5).collect();
        let lhs = ntk_objective(&p, &f, &combo).unwrap();
        let rhs = 2.0 * ntk_objective(&p, &f, &pm).unwrap() - 0.5 * ntk_objective(&p, &f, &qm).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let flat = flatten(&p, &f);
        let wflat: Vec<f64> = pm.iter().flat_map(|m| m.iter().copied()).collect();
        let dot: f64 = flat.iter().zip(&wflat).map(|(a, b)| a * b).sum();
        assert!((ntk_objective(&p, &f, &pm).unwrap() - dot).abs() < 1e-12 * dot.abs().max(1.0));
        assert!(ntk_objective(&p, &f, &pm[..1]).is_err());
    }

    #[test]
    fn zero_omega_row_is_exact() {
        let (p, ds) = small();
        let r = ntk_equivalence(
            &p,
            &ds,
            0,
            1,
            &[0.0, 1e-3],
            PerturbationMode::RandomGaussianScaled,
            0,
            EquivalenceWindows::default(),
        )
        .unwrap();
        for row in r.rows.iter().filter(|r| r.omega == 0.0) {
            assert!(row.grad_ratio <= 1e-9 && row.first_order_residual <= 1e-9 && row.kernel_dev <= 1e-9);
        }
        assert!(r.rows.iter().all(|r| r.grad_ratio >= 0.0 && r.kernel_dev >= 0.0));
        assert_eq!(r.csv_rows().len(), 4);
    }

    #[test]
    fn cg_solves_small_system() {
        let k = array![[4.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, 2.0];
        let fit = cg_fit(&k, y.view(), 0.0, 1e-12, 10).unwrap();
        assert!(fit.converged);
        let back = k.dot(&fit.coefficients);
        assert!((&back - &y).iter().all(|e| e.abs() < 1e-10));
    }
}
