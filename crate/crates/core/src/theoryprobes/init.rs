use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::report::{Check, ProbeReport, SeriesPoint};
use crate::datagen::{check_delta, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm, LinearOperator, PowerIterationConfig, SpectralEstimate};
use crate::netcore::{active, forward, forward_batch, init_network, ArchKind, ArchSpec, Backprop, NetworkParams};
use crate::rng::{self, Role};

/// Widths below this are flagged as outside the concentration regime.
pub const CONCENTRATION_WIDTH: usize = 64;

fn width_note(params: &NetworkParams) -> Option<String> {
    (params.arch().width < CONCENTRATION_WIDTH).then(|| {
        format!(
            "width {} is below {CONCENTRATION_WIDTH}; concentration is not expected",
            params.arch().width
        )
    })
}

/// `‖h_{i,l}‖` for every sample and layer against `[1-eps, 1+eps]`.
pub fn probe_forward_norms(params: &NetworkParams, dataset: &Dataset, eps: f64) -> Result<ProbeReport> {
    let trace = forward_batch(params, dataset.inputs.view())?;
    let mut series = Vec::new();
    for (l, h) in trace.h.iter().enumerate() {
        for col in h.columns() {
            series.push(SeriesPoint {
                omega: None,
                layer: l as i64,
                value: linalg::norm(col),
            });
        }
    }
    let max_dev = series.iter().map(|p| (p.value - 1.0).abs()).fold(0.0, f64::max);
    let outside = series.iter().filter(|p| (p.value - 1.0).abs() > eps).count() as f64 / series.len() as f64;
    let mut r = ProbeReport::new(
        "forward_norms",
        series,
        Check::FractionWithin {
            lo: 1.0 - eps,
            hi: 1.0 + eps,
            min_fraction: 0.99,
        },
    )
    .metric("max_deviation", max_dev)
    .metric("outside_fraction", outside)
    .metric("eps", eps);
    r.notes.extend(width_note(params));
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub width: usize,
    pub redraws: usize,
    pub mean: f64,
    pub variance: f64,
    pub expected_mean: f64,
    /// Variance of a sum of `m` squared half-normals: `5m/4`.
    pub expected_variance: f64,
    pub standard_error: f64,
    pub active_fraction: f64,
    pub mean_ok: bool,
    pub active_ok: bool,
}

impl ChiSquareReport {
    pub fn pass(&self) -> bool {
        self.mean_ok && self.active_ok
    }
}

/// Redraws the dense layer `l` and checks `m‖h_l‖²/(2‖h_{l-1}‖²)` against its law.
///
/// For Gaussian `W` with entries `N(0, 2/m)` and fixed `h`, `W h` is
/// `N(0, (2‖h‖²/m) I)`, so the product is drawn directly.
pub fn chi_square_oracle(params: &NetworkParams, x: ArrayView1<f64>, l: usize, redraws: usize) -> Result<ChiSquareReport> {
    if !matches!(params.arch().kind, ArchKind::FullyConnected) {
        return Err(Error::Unsupported("the redraw oracle covers fully connected layers".into()));
    }
    if l > params.depth() || redraws < 2 {
        return Err(Error::Precondition(format!(
            "layer {l} must be in 0..={} and redraws ≥ 2",
            params.depth()
        )));
    }
    let trace = forward(params, x)?;
    let prev = trace.layer_input(l);
    let pn2 = prev.dot(&prev);
    if pn2 == 0.0 {
        return Err(Error::Precondition(format!("input of layer {l} is the zero vector")));
    }
    let m = params.arch().width;
    let std = (2.0 * pn2 / m as f64).sqrt();
    let mut stats = Vec::with_capacity(redraws);
    let mut active_count = 0usize;
    for r in 0..redraws {
        let mut s = rng::stream(params.seed(), Role::Redraw, (l as u64) << 32 | r as u64);
        let mut sq = 0.0;
        for _ in 0..m {
            let g: f64 = StandardNormal.sample(&mut s);
            let g = g * std;
            if active(g) {
                active_count += 1;
                sq += g * g;
            }
        }
        stats.push(m as f64 * sq / (2.0 * pn2));
    }
    let rf = redraws as f64;
    let mean = stats.iter().sum::<f64>() / rf;
    let variance = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (rf - 1.0);
    let expected_mean = m as f64 / 2.0;
    let expected_variance = 1.25 * m as f64;
    let se = (expected_variance / rf).sqrt();
    let active_fraction = active_count as f64 / (rf * m as f64);
    Ok(ChiSquareReport {
        width: m,
        redraws,
        mean,
        variance,
        expected_mean,
        expected_variance,
        standard_error: se,
        active_fraction,
        mean_ok: (mean - expected_mean).abs() <= 3.0 * se,
        active_ok: (active_fraction - 0.5).abs() <= 0.03,
    })
}

/// `v ↦ J_b D_{b-1} J_{b-1} ⋯ D_a J_a v` for one sample, where `J_l` is the
/// layer Jacobian (`W_l`, or `I + τW_l` for residual layers).
pub struct InterlacedProduct<'a> {
    params: &'a NetworkParams,
    /// Pre-activations `g_a..g_{b-1}` of the sample.
    gates: Vec<Array1<f64>>,
    a: usize,
    b: usize,
    /// Replace every `D` with the identity.
    ungated: bool,
}

impl<'a> InterlacedProduct<'a> {
    pub fn new(params: &'a NetworkParams, x: ArrayView1<f64>, a: usize, b: usize) -> Result<Self> {
        if a < 1 || a > b || b > params.depth() {
            return Err(Error::LayerRange {
                index: if a < 1 { a } else { b },
                lo: 1,
                hi: params.depth(),
            });
        }
        let t = forward(params, x)?;
        Ok(Self {
            params,
            gates: t.g[a..b].to_vec(),
            a,
            b,
            ungated: false,
        })
    }

    pub fn ungated(mut self) -> Self {
        self.ungated = true;
        self
    }

    fn gate(&self, l: usize, v: &mut Array2<f64>) {
        if self.ungated {
            return;
        }
        let g = &self.gates[l - self.a];
        Zip::from(v.rows_mut()).and(g).for_each(|mut row, gv| {
            if !active(*gv) {
                row.fill(0.0);
            }
        });
    }
}

impl LinearOperator for InterlacedProduct<'_> {
    fn rows(&self) -> usize {
        self.params.arch().weight_shape(self.b).0
    }
    fn cols(&self) -> usize {
        self.params.arch().weight_shape(self.a).1
    }
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut v = x.insert_axis(Axis(1)).to_owned();
        for l in self.a..=self.b {
            if l > self.a {
                self.gate(l - 1, &mut v);
            }
            v = self.params.layer_jacobian(l, v.view());
        }
        v.remove_axis(Axis(1))
    }
    fn apply_t(&self, y: ArrayView1<f64>) -> Array1<f64> {
        let mut v = y.insert_axis(Axis(1)).to_owned();
        for l in (self.a..=self.b).rev() {
            v = self.params.pull_back(l, v.view());
            if l > self.a {
                self.gate(l - 1, &mut v);
            }
        }
        v.remove_axis(Axis(1))
    }
}

fn interlaced_estimate(params: &NetworkParams, x: ArrayView1<f64>, a: usize, b: usize) -> Result<SpectralEstimate> {
    let op = InterlacedProduct::new(params, x, a, b)?;
    Ok(spectral_norm(&op, params.seed(), PowerIterationConfig::default()))
}

/// Spectral norm of the interlaced product from layer `a` to `b`, per sample.
///
/// Series values are raw norms (`layer = b`); `ratio` divides the maximum by `√L`.
pub fn probe_intermediate_spectral(params: &NetworkParams, dataset: &Dataset, a: usize, b: usize) -> Result<ProbeReport> {
    let mut series = Vec::new();
    let mut notes = Vec::new();
    for i in 0..dataset.len() {
        let est = interlaced_estimate(params, dataset.input(i), a, b)?;
        if !est.converged {
            notes.push(format!(
                "sample {i}: power iteration stopped at the cap (estimates {:.6} / {:.6})",
                est.primary, est.restart
            ));
        }
        series.push(SeriesPoint {
            omega: None,
            layer: b as i64,
            value: est.value(),
        });
    }
    let max = series.iter().map(|p| p.value).fold(0.0, f64::max);
    let mut r = ProbeReport::new("intermediate_spectral", series, Check::Informational)
        .metric("max", max)
        .metric("ratio", max / (params.depth() as f64).sqrt())
        .metric("a", a as f64)
        .metric("b", b as f64);
    r.notes = notes;
    Ok(r)
}

/// Full-depth product norm over `√L` for fresh networks of each depth; the
/// ratio must stay within `factor` of the first depth's value.
pub fn spectral_depth_sweep(dataset: &Dataset, width: usize, depths: &[usize], seed: u64, factor: f64) -> Result<ProbeReport> {
    let mut series = Vec::new();
    for &depth in depths {
        let arch = ArchSpec::fully_connected(dataset.input_dim(), width, 1, depth);
        let p = init_network(&arch, seed)?;
        let est = interlaced_estimate(&p, dataset.input(0), 1, depth)?;
        series.push(SeriesPoint {
            omega: None,
            layer: depth as i64,
            value: est.value() / (depth as f64).sqrt(),
        });
    }
    Ok(ProbeReport::new("spectral_depth_sweep", series, Check::WithinFactorOfFirst { factor }).metric("width", width as f64))
}

/// `‖vᵀ Back_a‖ / (√(m/d)‖v‖)` for one sample trace, `a` in `1..=L+1`.
pub fn backward_norm_ratio(params: &NetworkParams, x: ArrayView1<f64>, a: usize, v: ArrayView1<f64>) -> Result<f64> {
    let ratios = backward_ratios(params, x.insert_axis(Axis(0)), a, v.insert_axis(Axis(1)))?;
    Ok(ratios[0])
}

fn backward_ratios(params: &NetworkParams, xs: ArrayView2<f64>, a: usize, vs: ArrayView2<f64>) -> Result<Vec<f64>> {
    let depth = params.depth();
    if a == 0 || a > depth + 1 {
        return Err(Error::LayerRange {
            index: a,
            lo: 1,
            hi: depth + 1,
        });
    }
    let vnorms: Vec<f64> = vs.columns().into_iter().map(linalg::norm).collect();
    if vnorms.iter().any(|n| *n == 0.0) {
        return Err(Error::Precondition("v must be nonzero".into()));
    }
    let trace = forward_batch(params, xs)?;
    let bp = Backprop::new(params, &trace, vs)?;
    let grad = bp.activation_gradient(a - 1);
    let arch = params.arch();
    let scale = (arch.hidden_dim() as f64 / arch.output_dim as f64).sqrt();
    Ok(grad
        .columns()
        .into_iter()
        .zip(&vnorms)
        .map(|(c, vn)| linalg::norm(c) / (scale * vn))
        .collect())
}

/// Random directions `v`, one column per (draw, sample).
fn probe_vectors(d: usize, n: usize, draws: usize, seed: u64) -> Array2<f64> {
    let mut s = rng::stream(seed, Role::Probe, 2);
    Array2::from_shape_fn((d, n * draws), |_| StandardNormal.sample(&mut s))
}

/// Back-matrix norms for `draws` random `v` per sample; passes when every ratio is at most `cap`.
pub fn probe_backward_norm(
    params: &NetworkParams,
    dataset: &Dataset,
    a: usize,
    draws: usize,
    cap: f64,
    seed: u64,
) -> Result<ProbeReport> {
    let n = dataset.len();
    let vs = probe_vectors(params.arch().output_dim, n, draws, seed);
    let mut xs = Array2::zeros((n * draws, dataset.input_dim()));
    for k in 0..draws {
        xs.slice_mut(ndarray::s![k * n..(k + 1) * n, ..]).assign(&dataset.inputs);
    }
    let ratios = backward_ratios(params, xs.view(), a, vs.view())?;
    let series: Vec<SeriesPoint> = ratios
        .iter()
        .map(|v| SeriesPoint {
            omega: None,
            layer: a as i64,
            value: *v,
        })
        .collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ProbeReport::new("backward_norm", series, Check::AtMost { threshold: cap }).metric("max", max))
}

/// `‖(I - ĥĥᵀ) h_j‖` minimized over ordered pairs, per layer (input level is `-1`).
pub fn probe_separateness(params: &NetworkParams, dataset: &Dataset) -> Result<ProbeReport> {
    let delta = check_delta(dataset)?;
    let trace = forward_batch(params, dataset.inputs.view())?;
    let mut series = vec![SeriesPoint {
        omega: None,
        layer: -1,
        value: min_orthogonal_residual(trace.inputs.view()),
    }];
    for (l, h) in trace.h.iter().enumerate() {
        series.push(SeriesPoint {
            omega: None,
            layer: l as i64,
            value: min_orthogonal_residual(h.view()),
        });
    }
    let min = series.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    // Coincident inputs (delta = 0) must still fail.
    let threshold = (delta / 2.0).max(f64::MIN_POSITIVE);
    Ok(ProbeReport::new("separateness", series, Check::AtLeast { threshold })
        .metric("delta", delta)
        .metric("min", min))
}

/// Columns are vectors; a zero reference vector counts as residual `‖h_j‖`.
pub fn orthogonal_residual(hi: ArrayView1<f64>, hj: ArrayView1<f64>) -> f64 {
    let n = linalg::norm(hi);
    if n == 0.0 {
        return linalg::norm(hj);
    }
    let c = hi.dot(&hj) / (n * n);
    let r = &hj - &(&hi * c);
    linalg::norm(r.view())
}

fn min_orthogonal_residual(cols: ArrayView2<f64>) -> f64 {
    let n = cols.ncols();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                best = best.min(orthogonal_residual(cols.column(i), cols.column(j)));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_separated_dataset, LabelMode, Labels};
    use ndarray::array;

    fn ds(n: usize, dim: usize, seed: u64) -> Dataset {
        generate_separated_dataset(n, dim, 0.2, LabelMode::Regression { output_dim: 1 }, seed).unwrap()
    }

    #[test]
    fn forward_norms_concentrate() {
        let d = ds(3, 8, 1);
        let p = init_network(&ArchSpec::fully_connected(8, 1024, 1, 3), 2).unwrap();
        let r = probe_forward_norms(&p, &d, 0.15).unwrap();
        assert!(r.pass, "{:?}", r.metrics);
        assert_eq!(r.series.len(), 3 * 4);
        assert!(r.notes.is_empty());
        let small = init_network(&ArchSpec::fully_connected(8, 8, 1, 2), 2).unwrap();
        let r = probe_forward_norms(&small, &d, 0.15).unwrap();
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn chi_square_law() {
        let d = ds(1, 6, 3);
        let p = init_network(&ArchSpec::fully_connected(6, 512, 1, 2), 4).unwrap();
        let r = chi_square_oracle(&p, d.input(0), 1, 200).unwrap();
        assert!(r.pass(), "{r:?}");
        // Sample variance agrees with 5m/4 within a loose band.
        assert!((r.variance / r.expected_variance - 1.0).abs() < 0.35, "{r:?}");
    }

    #[test]
    fn chi_square_rejects_zero_input() {
        let arch = ArchSpec::fully_connected(2, 4, 1, 1);
        let z = Array2::zeros((4, 2));
        let p = NetworkParams::from_parts(arch, 0, vec![z.clone(), Array2::eye(4)], Array2::ones((1, 4)), vec![]).unwrap();
        assert!(matches!(
            chi_square_oracle(&p, array![0.5, 0.5].view(), 1, 10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn identity_product_has_unit_norm() {
        let arch = ArchSpec::fully_connected(2, 4, 1, 3);
        let a = Array2::from_elem((4, 2), 1.0);
        let eye = Array2::<f64>::eye(4);
        let p = NetworkParams::from_parts(arch, 0, vec![a, eye.clone(), eye.clone(), eye], Array2::ones((1, 4)), vec![])
            .unwrap();
        let x = array![0.5, 0.5];
        let op = InterlacedProduct::new(&p, x.view(), 1, 3).unwrap();
        let s = spectral_norm(&op, 0, PowerIterationConfig::default()).value();
        assert!((s - 1.0).abs() < 1e-12);
        let op = InterlacedProduct::new(&p, x.view(), 1, 3).unwrap().ungated();
        assert!((spectral_norm(&op, 0, PowerIterationConfig::default()).value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interlaced_operator_matches_dense_product() {
        let p = init_network(&ArchSpec::fully_connected(5, 12, 1, 3), 6).unwrap();
        let d = ds(1, 5, 6);
        let t = forward(&p, d.input(0)).unwrap();
        let gate = |l: usize| Array2::from_diag(&t.g[l].mapv(|v| if active(v) { 1.0 } else { 0.0 }));
        let dense = p.hidden(3).dot(&gate(2)).dot(p.hidden(2)).dot(&gate(1)).dot(p.hidden(1));
        let op = InterlacedProduct::new(&p, d.input(0), 1, 3).unwrap();
        let e = Array1::from_iter((0..12).map(|k| k as f64 - 5.0));
        let diff = &op.apply(e.view()) - &dense.dot(&e);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
        let diff = &op.apply_t(e.view()) - &dense.t().dot(&e);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn depth_sweep_ratio_bounded() {
        let d = ds(1, 6, 7);
        let r = spectral_depth_sweep(&d, 256, &[2, 6, 12], 1, 4.0).unwrap();
        assert!(r.pass, "{:?}", r.series);
    }

    #[test]
    fn output_level_backward_ratio_is_order_one() {
        let d = ds(4, 6, 8);
        let p = init_network(&ArchSpec::fully_connected(6, 1024, 4, 2), 9).unwrap();
        let r = probe_backward_norm(&p, &d, 3, 4, 3.0, 0).unwrap();
        // Row-norm oracle: ‖Bᵀv‖² ≈ (m/d)‖v‖² for Gaussian B with variance 1/d.
        assert!(r.series.iter().all(|s| (s.value - 1.0).abs() < 0.15), "{:?}", r.series);
        assert!(r.pass);
        assert!(matches!(
            backward_norm_ratio(&p, d.input(0), 1, Array1::zeros(4).view()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn input_level_separateness_hand_value() {
        // Free parts orthogonal, shared last coordinate: ⟨x_i, x_j⟩ = 1/2.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = array![[s, 0.0, s], [0.0, s, s]];
        let d = Dataset::new(x, Labels::Regression(Array2::zeros((2, 1))), 0).unwrap();
        let p = init_network(&ArchSpec::fully_connected(3, 16, 1, 1), 0).unwrap();
        let r = probe_separateness(&p, &d).unwrap();
        assert!((r.series[0].value - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(r.series[0].layer, -1);
    }

    #[test]
    fn duplicated_input_violates() {
        let d = ds(2, 5, 1);
        let mut x = d.inputs.clone();
        let first = x.row(0).to_owned();
        x.row_mut(1).assign(&first);
        let dup = Dataset::new(x, d.labels.clone(), 0).unwrap();
        let p = init_network(&ArchSpec::fully_connected(5, 16, 1, 1), 0).unwrap();
        let r = probe_separateness(&p, &dup);
        // Certified delta of a duplicate pair is zero: the report exists and fails.
        let r = r.unwrap();
        assert_eq!(r.series[0].value, 0.0);
        assert!(!r.pass);
    }
}
