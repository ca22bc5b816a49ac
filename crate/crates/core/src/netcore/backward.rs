use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::forward::{BatchTrace, ForwardTrace};
use super::NetworkParams;
use crate::error::{Error, Result};
use crate::linalg;

/// Gradients of `W_1..W_L` (and optionally `A`, `B`) with Frobenius norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub hidden: Vec<Array2<f64>>,
    pub input: Option<Array2<f64>>,
    pub output: Option<Array2<f64>>,
    /// Frobenius norms of `hidden`.
    pub norms: Vec<f64>,
}

impl GradientSet {
    /// `∇W_l` for `l` in `1..=L`.
    pub fn layer(&self, l: usize) -> &Array2<f64> {
        &self.hidden[l - 1]
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_sq_norm(&self) -> f64 {
        self.norms.iter().map(|n| n * n).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.iter().chain(&self.input).chain(&self.output).all(|g| g.iter().all(|v| *v == 0.0))
    }
}

/// Reverse pass for a batch and caller-supplied loss vectors.
///
/// Keeps the factors `u_l = D_l ⊙ (Back_{l+1}ᵀ v)` per layer; full gradients are
/// formed only on request, one layer at a time.
pub struct Backprop<'a> {
    params: &'a NetworkParams,
    trace: &'a BatchTrace,
    loss: Array2<f64>,
    /// `∂F/∂h_l` for `l` in `0..=L`.
    grad_h: Vec<Array2<f64>>,
    /// `∂F/∂g_l`
    upstream: Vec<Array2<f64>>,
}

fn mask(mut grad: Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    Zip::from(&mut grad).and(g).for_each(|u, &gv| {
        if !super::active(gv) {
            *u = 0.0;
        }
    });
    grad
}

impl<'a> Backprop<'a> {
    /// `loss_vectors` is `d × n`, one column per sample of `trace`.
    pub fn new(params: &'a NetworkParams, trace: &'a BatchTrace, loss_vectors: ArrayView2<f64>) -> Result<Self> {
        let arch = params.arch();
        if loss_vectors.ncols() != trace.len() {
            return Err(Error::Dimension(format!(
                "{} loss vectors for {} traces",
                loss_vectors.ncols(),
                trace.len()
            )));
        }
        if loss_vectors.nrows() != arch.output_dim {
            return Err(Error::Dimension(format!(
                "loss vectors have length {}, output_dim is {}",
                loss_vectors.nrows(),
                arch.output_dim
            )));
        }
        if trace.depth() != arch.depth || trace.h[0].nrows() != arch.hidden_dim() {
            return Err(Error::Dimension("trace does not match the network".into()));
        }
        let depth = arch.depth;
        let mut grad_h = vec![Array2::zeros((0, 0)); depth + 1];
        let mut upstream = vec![Array2::zeros((0, 0)); depth + 1];
        grad_h[depth] = params.output_matrix().t().dot(&loss_vectors);
        for l in (0..=depth).rev() {
            upstream[l] = mask(grad_h[l].clone(), &trace.g[l]);
            if l > 0 {
                grad_h[l - 1] = params.pull_back(l, upstream[l].view());
            }
        }
        Ok(Self {
            params,
            trace,
            loss: loss_vectors.to_owned(),
            grad_h,
            upstream,
        })
    }

    /// `∂F/∂g_l` (columns are samples).
    pub fn upstream(&self, l: usize) -> ArrayView2<'_, f64> {
        self.upstream[l].view()
    }

    /// `∂F/∂h_l`; column `i` equals `Back_{i,l+1}ᵀ v_i`.
    pub fn activation_gradient(&self, l: usize) -> ArrayView2<'_, f64> {
        self.grad_h[l].view()
    }

    /// Gradient of layer `l` (0 = input matrix) in stored layout.
    pub fn layer_gradient(&self, l: usize) -> Array2<f64> {
        self.params
            .weight_gradient(l, self.upstream[l].view(), self.trace.layer_input(l))
    }

    pub fn layer_gradient_sq_norm(&self, l: usize) -> f64 {
        self.params
            .gradient_sq_norm(l, self.upstream[l].view(), self.trace.layer_input(l))
    }

    /// `⟨∇_l F, direction⟩` without forming the gradient.
    pub fn directional(&self, l: usize, direction: ArrayView2<f64>) -> f64 {
        let moved = self.params.linear_action(l, direction, self.trace.layer_input(l));
        linalg::frobenius_dot(self.upstream[l].view(), moved.view())
    }

    pub fn output_gradient(&self) -> Array2<f64> {
        self.loss.dot(&self.trace.h[self.params.depth()].t())
    }

    pub fn gradient_set(&self, joint: bool) -> GradientSet {
        let hidden: Vec<Array2<f64>> = (1..=self.params.depth()).map(|l| self.layer_gradient(l)).collect();
        let norms = hidden.iter().map(|g| linalg::frobenius(g.view())).collect();
        GradientSet {
            hidden,
            input: joint.then(|| self.layer_gradient(0)),
            output: joint.then(|| self.output_gradient()),
            norms,
        }
    }
}

/// Hidden-layer gradients for a batch with caller-supplied loss vectors (`d × n`).
pub fn backward_batch(params: &NetworkParams, trace: &BatchTrace, loss_vectors: ArrayView2<f64>) -> Result<GradientSet> {
    Ok(Backprop::new(params, trace, loss_vectors)?.gradient_set(false))
}

/// `Σ_i D_{i,l} (Back_{i,l+1}ᵀ v_i) h_{i,l-1}ᵀ` for every hidden layer.
pub fn backward(params: &NetworkParams, traces: &[ForwardTrace], loss_vectors: &[Array1<f64>]) -> Result<GradientSet> {
    if traces.len() != loss_vectors.len() {
        return Err(Error::Dimension(format!(
            "{} traces but {} loss vectors",
            traces.len(),
            loss_vectors.len()
        )));
    }
    let batch = BatchTrace::from_traces(traces)?;
    let d = params.arch().output_dim;
    let mut v = Array2::zeros((d, traces.len()));
    for (i, lv) in loss_vectors.iter().enumerate() {
        if lv.len() != d {
            return Err(Error::Dimension(format!("loss vector {i} has length {}, expected {d}", lv.len())));
        }
        v.column_mut(i).assign(lv);
    }
    backward_batch(params, &batch, v.view())
}

/// `Back_l = B·D_L·W_L···D_l·W_l` (the Jacobian of the output in `h_{l-1}`), `l` in `1..=L+1`.
pub fn back_matrix(params: &NetworkParams, trace: &ForwardTrace, l: usize) -> Result<Array2<f64>> {
    let depth = params.depth();
    if l == 0 || l > depth + 1 {
        return Err(Error::LayerRange {
            index: l,
            lo: 1,
            hi: depth + 1,
        });
    }
    let mut grad = params.output_matrix().t().to_owned();
    for k in (l..=depth).rev() {
        let g = trace.g[k].view().insert_axis(ndarray::Axis(1));
        Zip::from(grad.rows_mut()).and(g.rows()).for_each(|mut row, gk| {
            if !super::active(gk[0]) {
                row.fill(0.0);
            }
        });
        grad = params.pull_back(k, grad.view());
    }
    Ok(grad.reversed_axes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{forward, forward_batch, init_network, ArchSpec};
    use ndarray::array;

    fn unit_input(dim: usize, seed: u64) -> Array1<f64> {
        let raw = crate::rng::gaussian_vector(seed, crate::rng::Role::Data, 0, dim - 1, 1.0);
        let mut x = Array1::zeros(dim);
        let n = linalg::norm(raw.view());
        x.slice_mut(ndarray::s![..dim - 1]).assign(&(raw / n * std::f64::consts::FRAC_1_SQRT_2));
        x[dim - 1] = std::f64::consts::FRAC_1_SQRT_2;
        x
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let arch = ArchSpec::fully_connected(4, 8, 2, 2);
        let p = init_network(&arch, 0).unwrap();
        let t = forward(&p, unit_input(4, 1).view()).unwrap();
        let g = backward(&p, &[t], &[Array1::zeros(2)]).unwrap();
        assert!(g.is_zero());
        assert!(g.norms.iter().all(|n| *n == 0.0));
    }

    #[test]
    fn last_back_matrix_is_output_matrix() {
        let arch = ArchSpec::fully_connected(4, 8, 3, 2);
        let p = init_network(&arch, 2).unwrap();
        let t = forward(&p, unit_input(4, 2).view()).unwrap();
        assert_eq!(back_matrix(&p, &t, 3).unwrap(), *p.output_matrix());
        assert!(back_matrix(&p, &t, 0).is_err());
        assert!(back_matrix(&p, &t, 4).is_err());
    }

    #[test]
    fn two_by_two_back_matrix() {
        let arch = ArchSpec::fully_connected(2, 2, 1, 1);
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let w = array![[1.0, 2.0], [-3.0, 1.0]];
        let b = array![[2.0, 5.0]];
        let p = NetworkParams::from_parts(arch, 0, vec![a, w], b, vec![]).unwrap();
        let t = forward(&p, array![1.0, 1.0].view()).unwrap();
        // g1 = (3, -2): D1 = diag(1, 0); B D1 W1 = [2, 4]
        assert_eq!(back_matrix(&p, &t, 1).unwrap(), array![[2.0, 4.0]]);
    }

    #[test]
    fn back_matrix_recursion() {
        let arch = ArchSpec::fully_connected(5, 12, 2, 3);
        let p = init_network(&arch, 4).unwrap();
        let t = forward(&p, unit_input(5, 3).view()).unwrap();
        for l in 2..=4 {
            let upper = back_matrix(&p, &t, l).unwrap();
            let lower = back_matrix(&p, &t, l - 1).unwrap();
            // Back_l · D_{l-1} W_{l-1}
            let mut dw = p.hidden(l - 1).clone();
            for (k, mut row) in dw.rows_mut().into_iter().enumerate() {
                if !t.signs[l - 1][k] {
                    row.fill(0.0);
                }
            }
            let composed = upper.dot(&dw);
            assert!((&composed - &lower).iter().all(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn rank_one_norm_identity() {
        let arch = ArchSpec::fully_connected(4, 10, 2, 2);
        let p = init_network(&arch, 8).unwrap();
        let x = unit_input(4, 8);
        let t = forward(&p, x.view()).unwrap();
        let v = array![0.7, -1.3];
        let g = backward(&p, &[t.clone()], &[v.clone()]).unwrap();
        for l in 1..=2 {
            let back = back_matrix(&p, &t, l + 1).unwrap();
            let bound = linalg::norm(back.t().dot(&v).view()) * linalg::norm(t.layer_input(l));
            assert!(g.norms[l - 1] <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gram_norm_matches_materialized() {
        let arch = ArchSpec::fully_connected(4, 9, 2, 2);
        let p = init_network(&arch, 5).unwrap();
        let xs = ndarray::stack![ndarray::Axis(0), unit_input(4, 1), unit_input(4, 2), unit_input(4, 3)];
        let bt = forward_batch(&p, xs.view()).unwrap();
        let v = crate::rng::gaussian_matrix(1, crate::rng::Role::Probe, 0, 2, 3, 1.0);
        let bp = Backprop::new(&p, &bt, v.view()).unwrap();
        for l in 0..=2 {
            let g = bp.layer_gradient(l);
            let direct = g.iter().map(|e| e * e).sum::<f64>();
            assert!((direct - bp.layer_gradient_sq_norm(l)).abs() < 1e-10 * direct.max(1e-300));
            assert!((bp.directional(l, g.view()) - direct).abs() < 1e-10 * direct.max(1e-300));
        }
    }

    #[test]
    fn count_mismatch_rejected() {
        let arch = ArchSpec::fully_connected(3, 4, 1, 1);
        let p = init_network(&arch, 0).unwrap();
        let t = forward(&p, unit_input(3, 0).view()).unwrap();
        assert!(backward(&p, &[t.clone()], &[]).is_err());
        assert!(backward(&p, &[t], &[array![1.0, 2.0]]).is_err());
    }
}
