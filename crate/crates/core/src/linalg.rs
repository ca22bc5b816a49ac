//! Dense helpers, matrix-free spectral norms and least-squares fits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Role};

/// `a · x`.
pub fn matvec(a: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    a.dot(&x)
}

/// `aᵀ · x`, routed through the GEMM kernel (the strided matvec is much slower).
pub fn matvec_t(a: ArrayView2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    a.t().dot(&x.insert_axis(Axis(1))).remove_axis(Axis(1))
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Frobenius inner product.
pub fn frobenius_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Matrix-free linear map, enough for power iteration.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn apply_t(&self, y: ArrayView1<f64>) -> Array1<f64>;
}

impl LinearOperator for Array2<f64> {
    fn rows(&self) -> usize {
        self.nrows()
    }
    fn cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        matvec(self.view(), x)
    }
    fn apply_t(&self, y: ArrayView1<f64>) -> Array1<f64> {
        matvec_t(self.view(), y)
    }
}

impl LinearOperator for ArrayView2<'_, f64> {
    fn rows(&self) -> usize {
        self.nrows()
    }
    fn cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        matvec(self.view(), x)
    }
    fn apply_t(&self, y: ArrayView1<f64>) -> Array1<f64> {
        matvec_t(self.view(), y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-9,
        }
    }
}

/// Spectral norm estimate from two independent starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub primary: f64,
    pub restart: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SpectralEstimate {
    /// Both runs underestimate, so the larger one is kept.
    pub fn value(&self) -> f64 {
        self.primary.max(self.restart)
    }
}

fn power_run(op: &dyn LinearOperator, start: Array1<f64>, cfg: PowerIterationConfig) -> (f64, usize, bool) {
    let mut v = start;
    let n0 = norm(v.view());
    if n0 == 0.0 {
        return (0.0, 0, true);
    }
    v /= n0;
    let mut sigma = 0.0;
    for it in 1..=cfg.max_iters {
        let w = op.apply(v.view());
        let next = norm(w.view());
        if next == 0.0 {
            return (0.0, it, true);
        }
        let z = op.apply_t(w.view());
        let zn = norm(z.view());
        if zn == 0.0 {
            return (next, it, true);
        }
        v = z / zn;
        if it > 1 && (next - sigma).abs() <= cfg.rel_tol * next {
            return (next, it, true);
        }
        sigma = next;
    }
    (sigma, cfg.max_iters, false)
}

/// Power iteration on `AᵀA` with one restart from a second random vector.
pub fn spectral_norm(op: &dyn LinearOperator, seed: u64, cfg: PowerIterationConfig) -> SpectralEstimate {
    let n = op.cols();
    let start = |k: u64| {
        let mut r = rng::stream(seed, Role::Probe, k);
        Array1::from_iter((0..n).map(|_| StandardNormal.sample(&mut r)))
    };
    let (primary, it1, c1) = power_run(op, start(0), cfg);
    let (restart, it2, c2) = power_run(op, start(1), cfg);
    SpectralEstimate {
        primary,
        restart,
        iterations: it1.max(it2),
        converged: c1 && c2,
    }
}

/// Ordinary least-squares line with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs[..n].iter().sum::<f64>() / nf;
    let my = ys[..n].iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        points: n,
    })
}

/// Fit of `log y` against `log x`, skipping points with non-positive coordinates.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    linear_fit(&lx, &ly)
}

/// Frobenius-orthonormalize a pair of directions (Gram–Schmidt).
pub fn orthonormalize_pair(d1: &mut [Array2<f64>], d2: &mut [Array2<f64>]) -> Option<()> {
    let n1 = d1.iter().map(|m| frobenius_dot(m.view(), m.view())).sum::<f64>().sqrt();
    if n1 == 0.0 {
        return None;
    }
    d1.iter_mut().for_each(|m| *m /= n1);
    let proj: f64 = d1
        .iter()
        .zip(d2.iter())
        .map(|(a, b)| frobenius_dot(a.view(), b.view()))
        .sum();
    for (b, a) in d2.iter_mut().zip(d1.iter()) {
        b.scaled_add(-proj, a);
    }
    let n2 = d2.iter().map(|m| frobenius_dot(m.view(), m.view())).sum::<f64>().sqrt();
    if n2 == 0.0 {
        return None;
    }
    d2.iter_mut().for_each(|m| *m /= n2);
    Some(())
}
