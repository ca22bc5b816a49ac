//! Patch-structured (convolutional) layers.
//!
//! A layer with `P` positions and `m` channels per position stores its weights
//! as one `(P·m) × (q·k)` matrix: row block `j` is the position-`j` filter,
//! and its columns read the `q` input positions of `Q_j` (each `k` wide) in
//! patch order. Filters are not shared across positions.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchTopology {
    /// `Q_j = {j, j+1, ..., j+q-1} mod P`.
    Circulant,
    RandomRegular,
}

/// The sets `Q_1..Q_P` (0-based positions), validated q-regular.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMap {
    sets: Vec<Vec<usize>>,
    q: usize,
}

impl PatchMap {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        let positions = sets.len();
        if positions == 0 {
            return Err(Error::InvalidArch("patch map needs at least one position".into()));
        }
        let q = sets[0].len();
        let mut counts = vec![0usize; positions];
        for (j, set) in sets.iter().enumerate() {
            if set.len() != q {
                return Err(Error::InvalidArch(format!(
                    "Q_{j} has {} entries, expected {q}",
                    set.len()
                )));
            }
            let mut seen = set.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != q {
                return Err(Error::InvalidArch(format!("Q_{j} repeats a position")));
            }
            for &k in set {
                if k >= positions {
                    return Err(Error::InvalidArch(format!("Q_{j} references position {k} >= {positions}")));
                }
                counts[k] += 1;
            }
        }
        if let Some((k, c)) = counts.iter().enumerate().find(|(_, c)| **c != q) {
            return Err(Error::InvalidArch(format!(
                "position {k} appears in {c} patches, expected {q} (not q-regular)"
            )));
        }
        Ok(Self { sets, q })
    }

    pub fn positions(&self) -> usize {
        self.sets.len()
    }

    pub fn patch_size(&self) -> usize {
        self.q
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// How often each position is read; all equal to `q` for a valid map.
    pub fn multiplicities(&self) -> Vec<usize> {
        let mut counts = vec![0; self.positions()];
        self.sets.iter().flatten().for_each(|&k| counts[k] += 1);
        counts
    }
}

const REGULAR_RETRIES: usize = 1000;

pub fn build_patch_map(positions: usize, q: usize, topology: PatchTopology, seed: u64) -> Result<PatchMap> {
    if q == 0 || q > positions {
        return Err(Error::InvalidArch(format!("patch size {q} must be in 1..={positions}")));
    }
    match topology {
        PatchTopology::Circulant => PatchMap::new(
            (0..positions)
                .map(|j| (0..q).map(|c| (j + c) % positions).collect())
                .collect(),
        ),
        PatchTopology::RandomRegular => {
            // Union of q permutations that never repeat a position inside one set.
            let mut r = rng::stream(seed, Role::Data, 0xC0);
            for _ in 0..REGULAR_RETRIES {
                let mut sets: Vec<Vec<usize>> = vec![Vec::with_capacity(q); positions];
                let mut ok = true;
                'layer: for _ in 0..q {
                    for _ in 0..REGULAR_RETRIES {
                        let mut perm: Vec<usize> = (0..positions).collect();
                        perm.shuffle(&mut r);
                        if sets.iter().zip(&perm).all(|(set, p)| !set.contains(p)) {
                            sets.iter_mut().zip(perm).for_each(|(set, p)| set.push(p));
                            continue 'layer;
                        }
                    }
                    ok = false;
                    break;
                }
                if ok {
                    return PatchMap::new(sets);
                }
            }
            Err(Error::Infeasible(format!(
                "no random {q}-regular patch map over {positions} positions after {REGULAR_RETRIES} retries"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub patches: PatchMap,
    /// Bias scale for convolutional layers.
    pub tau: f64,
}

impl ConvSpec {
    pub fn new(patches: PatchMap, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArch(format!("conv bias scale must be finite and >= 0, got {tau}")));
        }
        Ok(Self { patches, tau })
    }

    /// `tau = delta^2 / (10 · positions · depth)`.
    pub fn default_tau(delta: f64, positions: usize, depth: usize) -> f64 {
        delta * delta / (10.0 * positions as f64 * depth as f64)
    }

    pub fn positions(&self) -> usize {
        self.patches.positions()
    }

    pub fn patch_size(&self) -> usize {
        self.patches.patch_size()
    }

    /// Concentration of the hidden norms needs `tau^2 <= eps·q/(10·P·L)`.
    pub fn tau_warning(&self, depth: usize, eps: f64) -> Option<String> {
        let limit = eps * self.patch_size() as f64 / (10.0 * self.positions() as f64 * depth as f64);
        (self.tau * self.tau > limit).then(|| {
            format!(
                "conv bias scale tau={} exceeds the norm-concentration limit sqrt({limit:.3e}) at eps={eps}",
                self.tau
            )
        })
    }
}

fn gather(input: ArrayView2<f64>, set: &[usize], width: usize) -> Array2<f64> {
    let n = input.ncols();
    let mut out = Array2::zeros((set.len() * width, n));
    for (c, &k) in set.iter().enumerate() {
        out.slice_mut(s![c * width..(c + 1) * width, ..])
            .assign(&input.slice(s![k * width..(k + 1) * width, ..]));
    }
    out
}

/// `g = W ⋆ h` for a batch stored column-wise; `in_width` is channels per input position.
pub(crate) fn patch_action(
    patches: &PatchMap,
    in_width: usize,
    weights: ArrayView2<f64>,
    input: ArrayView2<f64>,
) -> Array2<f64> {
    let out_width = weights.nrows() / patches.positions();
    let mut out = Array2::zeros((weights.nrows(), input.ncols()));
    for (j, set) in patches.sets().iter().enumerate() {
        let block = weights.slice(s![j * out_width..(j + 1) * out_width, ..]);
        let patch = gather(input, set, in_width);
        ndarray::linalg::general_mat_mul(
            1.0,
            &block,
            &patch,
            0.0,
            &mut out.slice_mut(s![j * out_width..(j + 1) * out_width, ..]),
        );
    }
    out
}

/// Adjoint of [`patch_action`] in its input argument.
pub(crate) fn patch_action_t(
    patches: &PatchMap,
    in_width: usize,
    weights: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
) -> Array2<f64> {
    let out_width = weights.nrows() / patches.positions();
    let n = upstream.ncols();
    let mut out = Array2::zeros((patches.positions() * in_width, n));
    for (j, set) in patches.sets().iter().enumerate() {
        let block = weights.slice(s![j * out_width..(j + 1) * out_width, ..]);
        let back = block.t().dot(&upstream.slice(s![j * out_width..(j + 1) * out_width, ..]));
        scatter_add(out.view_mut(), back.view(), set, in_width);
    }
    out
}

fn scatter_add(mut out: ArrayViewMut2<f64>, back: ArrayView2<f64>, set: &[usize], width: usize) {
    for (c, &k) in set.iter().enumerate() {
        let mut dst = out.slice_mut(s![k * width..(k + 1) * width, ..]);
        dst += &back.slice(s![c * width..(c + 1) * width, ..]);
    }
}

/// Gradient of `Σ_i ⟨u_i, W ⋆ h_i⟩` with respect to the stored weight matrix.
pub(crate) fn patch_gradient(
    patches: &PatchMap,
    in_width: usize,
    out_width: usize,
    upstream: ArrayView2<f64>,
    input: ArrayView2<f64>,
) -> Array2<f64> {
    let q = patches.patch_size();
    let mut grad = Array2::zeros((patches.positions() * out_width, q * in_width));
    for (j, set) in patches.sets().iter().enumerate() {
        let patch = gather(input, set, in_width);
        ndarray::linalg::general_mat_mul(
            1.0,
            &upstream.slice(s![j * out_width..(j + 1) * out_width, ..]),
            &patch.t(),
            0.0,
            &mut grad.slice_mut(s![j * out_width..(j + 1) * out_width, ..]),
        );
    }
    grad
}

/// Frobenius inner product of two summed patch gradients, from per-block Gram matrices.
pub(crate) fn patch_gradient_inner(
    patches: &PatchMap,
    in_width: usize,
    out_width: usize,
    (u1, h1): (ArrayView2<f64>, ArrayView2<f64>),
    (u2, h2): (ArrayView2<f64>, ArrayView2<f64>),
) -> f64 {
    patches
        .sets()
        .iter()
        .enumerate()
        .map(|(j, set)| {
            let rows = s![j * out_width..(j + 1) * out_width, ..];
            let gu = u1.slice(rows).t().dot(&u2.slice(rows));
            let gh = gather(h1, set, in_width).t().dot(&gather(h2, set, in_width));
            (&gu * &gh).sum()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn circulant_five_two() {
        let map = build_patch_map(5, 2, PatchTopology::Circulant, 0).unwrap();
        assert_eq!(
            map.sets(),
            &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4], vec![4, 0]]
        );
        assert!(map.multiplicities().iter().all(|&c| c == 2));
    }

    #[test]
    fn full_patch_covers_everything() {
        let map = build_patch_map(4, 4, PatchTopology::Circulant, 0).unwrap();
        for set in map.sets() {
            let mut s = set.clone();
            s.sort_unstable();
            assert_eq!(s, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn random_regular_is_regular() {
        for seed in 0..5 {
            let map = build_patch_map(9, 3, PatchTopology::RandomRegular, seed).unwrap();
            assert!(map.multiplicities().iter().all(|&c| c == 3));
            assert!(map.sets().iter().all(|s| s.len() == 3));
        }
    }

    #[test]
    fn irregular_map_rejected() {
        let err = PatchMap::new(vec![vec![0, 1], vec![0, 2], vec![0, 1]]).unwrap_err();
        assert!(err.to_string().contains("q-regular"), "{err}");
        assert!(PatchMap::new(vec![vec![0, 0], vec![1, 1]]).is_err());
        assert!(build_patch_map(3, 4, PatchTopology::Circulant, 0).is_err());
    }

    #[test]
    fn patch_action_adjoint_identity() {
        // <u, W*h> = <W^T*u, h> for random blocks.
        let map = build_patch_map(4, 2, PatchTopology::Circulant, 0).unwrap();
        let (k, m) = (3, 2);
        let w = rng::gaussian_matrix(1, Role::Probe, 0, 4 * m, 2 * k, 1.0);
        let h = rng::gaussian_matrix(1, Role::Probe, 1, 4 * k, 1, 1.0);
        let u = rng::gaussian_matrix(1, Role::Probe, 2, 4 * m, 1, 1.0);
        let lhs = (&u * &patch_action(&map, k, w.view(), h.view())).sum();
        let rhs = (&h * &patch_action_t(&map, k, w.view(), u.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn gradient_norm_matches_materialized() {
        let map = build_patch_map(3, 2, PatchTopology::Circulant, 0).unwrap();
        let (k, m) = (2, 3);
        let u = rng::gaussian_matrix(5, Role::Probe, 0, 3 * m, 4, 1.0);
        let h = rng::gaussian_matrix(5, Role::Probe, 1, 3 * k, 4, 1.0);
        let g = patch_gradient(&map, k, m, u.view(), h.view());
        let direct = g.iter().map(|v| v * v).sum::<f64>();
        let gram = patch_gradient_inner(&map, k, m, (u.view(), h.view()), (u.view(), h.view()));
        assert!((direct - gram).abs() < 1e-10 * direct);
    }

    #[test]
    fn single_position_is_dense() {
        let map = PatchMap::new(vec![vec![0]]).unwrap();
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let h = array![[1.0], [-1.0]];
        assert_eq!(patch_action(&map, 2, w.view(), h.view()), w.dot(&h));
    }
}
