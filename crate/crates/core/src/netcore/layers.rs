//! Per-layer linear maps for every architecture kind.
//!
//! Batches are stored column-wise: a `dim × n` matrix holds one sample per column.

use ndarray::{Array2, ArrayView2, Axis};

use super::{ArchKind, NetworkParams};
use crate::archext::conv;

#[derive(Clone, Copy)]
enum Kind<'a> {
    Dense,
    /// `g = h + tau·W h`
    Residual(f64),
    /// Per-position filters over patches; `in_width` channels per input position.
    Patch {
        map: &'a crate::archext::PatchMap,
        in_width: usize,
    },
}

impl NetworkParams {
    fn kind(&self, l: usize) -> Kind<'_> {
        let depth = self.arch.depth;
        match &self.arch.kind {
            ArchKind::FullyConnected => Kind::Dense,
            ArchKind::Residual(spec) if l >= 1 && l < depth => Kind::Residual(spec.tau),
            ArchKind::Residual(_) => Kind::Dense,
            ArchKind::Conv(spec) if l < depth => Kind::Patch {
                map: &spec.patches,
                in_width: if l == 0 { 1 } else { self.arch.width },
            },
            ArchKind::Conv(_) => Kind::Dense,
        }
    }

    /// Part of the pre-activation that is linear in the weights, evaluated at `w`.
    pub(crate) fn linear_action(&self, l: usize, w: ArrayView2<f64>, h: ArrayView2<f64>) -> Array2<f64> {
        match self.kind(l) {
            Kind::Dense => w.dot(&h),
            Kind::Residual(tau) => {
                let mut g = w.dot(&h);
                g *= tau;
                g
            }
            Kind::Patch { map, in_width } => conv::patch_action(map, in_width, w, h),
        }
    }

    /// Jacobian of `g_l` in `h_{l-1}` applied to the columns of `v`.
    pub(crate) fn layer_jacobian(&self, l: usize, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = self.linear_action(l, self.weights[l].view(), v);
        if let Kind::Residual(_) = self.kind(l) {
            out += &v;
        }
        out
    }

    /// `g_l` for a batch of layer inputs `h_{l-1}`.
    pub(crate) fn pre_activation(&self, l: usize, h: ArrayView2<f64>) -> Array2<f64> {
        let mut g = self.linear_action(l, self.weights[l].view(), h);
        match self.kind(l) {
            Kind::Residual(_) => g += &h,
            Kind::Patch { .. } if l >= 1 => {
                let tau = match &self.arch.kind {
                    ArchKind::Conv(spec) => spec.tau,
                    _ => unreachable!(),
                };
                let b = self.bias[l - 1].view().insert_axis(Axis(1));
                g.scaled_add(tau, &b.broadcast(g.dim()).expect("bias broadcast"));
            }
            _ => {}
        }
        g
    }

    /// Gradient with respect to the layer input, given `u = dF/dg_l`.
    pub(crate) fn pull_back(&self, l: usize, u: ArrayView2<f64>) -> Array2<f64> {
        let w = self.weights[l].view();
        match self.kind(l) {
            Kind::Dense => w.t().dot(&u),
            Kind::Residual(tau) => {
                let mut back = w.t().dot(&u);
                back *= tau;
                back += &u;
                back
            }
            Kind::Patch { map, in_width } => conv::patch_action_t(map, in_width, w, u),
        }
    }

    /// `Σ_i` of the per-sample weight gradients `u_i ⊗ h_i` (in stored layout).
    pub(crate) fn weight_gradient(&self, l: usize, u: ArrayView2<f64>, h: ArrayView2<f64>) -> Array2<f64> {
        match self.kind(l) {
            Kind::Dense => u.dot(&h.t()),
            Kind::Residual(tau) => {
                let mut g = u.dot(&h.t());
                g *= tau;
                g
            }
            Kind::Patch { map, in_width } => {
                let out_width = self.arch.width;
                conv::patch_gradient(map, in_width, out_width, u, h)
            }
        }
    }

    /// Frobenius inner product of the summed gradients of two batches, without forming them.
    pub(crate) fn gradient_inner(
        &self,
        l: usize,
        u1: ArrayView2<f64>,
        h1: ArrayView2<f64>,
        u2: ArrayView2<f64>,
        h2: ArrayView2<f64>,
    ) -> f64 {
        let dense = || (&u1.t().dot(&u2) * &h1.t().dot(&h2)).sum();
        match self.kind(l) {
            Kind::Dense => dense(),
            Kind::Residual(tau) => tau * tau * dense(),
            Kind::Patch { map, in_width } => {
                conv::patch_gradient_inner(map, in_width, self.arch.width, (u1, h1), (u2, h2))
            }
        }
    }

    pub(crate) fn gradient_sq_norm(&self, l: usize, u: ArrayView2<f64>, h: ArrayView2<f64>) -> f64 {
        self.gradient_inner(l, u, h, u, h)
    }
}
