//! Deep ReLU networks: architecture, initialization, exact forward and backward passes.
//!
//! Layers are indexed `0..=L`: layer 0 is the input matrix `A`, layers `1..=L`
//! are the hidden matrices `W_1..W_L`. The output matrix `B` is kept apart.

mod backward;
mod forward;
mod gradcheck;
mod layers;
mod objective;

pub use backward::{back_matrix, backward, backward_batch, Backprop, GradientSet};
pub use forward::{forward, forward_batch, BatchTrace, ForwardTrace};
pub use gradcheck::{gradient_check, Block, DirectionalCheck, GradientCheck};
pub use objective::{evaluate, objective, Evaluation};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::archext::{ConvSpec, ResidualSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Role};

/// `max(v, 0)` elementwise.
pub fn relu(v: ArrayView1<f64>) -> Array1<f64> {
    v.mapv(|x| x.max(0.0))
}

/// Activity indicator with the `x >= 0` convention (zero counts as active).
#[inline]
pub fn active(x: f64) -> bool {
    x >= 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArchKind {
    FullyConnected,
    Conv(ConvSpec),
    Residual(ResidualSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    /// Neurons per hidden layer (channels per position for conv).
    pub width: usize,
    pub output_dim: usize,
    /// Number of hidden weight matrices.
    pub depth: usize,
    pub kind: ArchKind,
}

impl ArchSpec {
    pub fn fully_connected(input_dim: usize, width: usize, output_dim: usize, depth: usize) -> Self {
        Self {
            input_dim,
            width,
            output_dim,
            depth,
            kind: ArchKind::FullyConnected,
        }
    }

    pub fn residual(input_dim: usize, width: usize, output_dim: usize, depth: usize, spec: ResidualSpec) -> Self {
        Self {
            input_dim,
            width,
            output_dim,
            depth,
            kind: ArchKind::Residual(spec),
        }
    }

    /// Conv net whose input has one scalar per position.
    pub fn conv(channels: usize, output_dim: usize, depth: usize, spec: ConvSpec) -> Self {
        Self {
            input_dim: spec.positions(),
            width: channels,
            output_dim,
            depth,
            kind: ArchKind::Conv(spec),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArch(format!(
                "width, depth and output_dim must be positive (got m={}, L={}, d={})",
                self.width, self.depth, self.output_dim
            )));
        }
        if self.input_dim < 2 {
            return Err(Error::InvalidArch(format!(
                "input_dim must be at least 2 (one coordinate is the constant), got {}",
                self.input_dim
            )));
        }
        if let ArchKind::Conv(spec) = &self.kind {
            if spec.positions() != self.input_dim {
                return Err(Error::InvalidArch(format!(
                    "conv input_dim {} must equal the number of positions {}",
                    self.input_dim,
                    spec.positions()
                )));
            }
        }
        Ok(())
    }

    /// Length of every hidden vector `h_l`.
    pub fn hidden_dim(&self) -> usize {
        match &self.kind {
            ArchKind::Conv(spec) => spec.positions() * self.width,
            _ => self.width,
        }
    }

    /// Stored shape of the weight matrix of layer `l` (0 = input layer).
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        let hd = self.hidden_dim();
        match &self.kind {
            ArchKind::Conv(spec) if l == 0 => (hd, spec.patch_size()),
            ArchKind::Conv(spec) if l < self.depth => (hd, spec.patch_size() * self.width),
            _ if l == 0 => (hd, self.input_dim),
            _ => (hd, hd),
        }
    }

    /// Total number of stored f64 entries.
    pub fn parameter_count(&self) -> usize {
        let weights: usize = (0..=self.depth)
            .map(|l| {
                let (r, c) = self.weight_shape(l);
                r * c
            })
            .sum();
        weights + self.output_dim * self.hidden_dim() + self.bias_layers() * self.hidden_dim()
    }

    pub(crate) fn bias_layers(&self) -> usize {
        match &self.kind {
            ArchKind::Conv(_) => self.depth - 1,
            _ => 0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            ArchKind::FullyConnected => "fully_connected",
            ArchKind::Conv(_) => "conv",
            ArchKind::Residual(_) => "residual",
        }
    }
}

/// Default cap on stored entries (3.2 GB of f64).
pub const DEFAULT_BUDGET: usize = 400_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    pub budget: usize,
    /// Multiplies the output matrix; 1 is the standard initialization.
    pub output_scale: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            output_scale: 1.0,
        }
    }
}

/// All weights of one network. Layer 0 is the input matrix.
#[derive(Debug, Serialize, Deserialize)]
pub struct NetworkParams {
    arch: ArchSpec,
    seed: u64,
    weights: Vec<Array2<f64>>,
    output: Array2<f64>,
    /// Conv biases of layers `1..L-1` (empty otherwise).
    bias: Vec<Array1<f64>>,
    #[serde(skip)]
    fingerprint: OnceLock<u64>,
}

impl Clone for NetworkParams {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            seed: self.seed,
            weights: self.weights.clone(),
            output: self.output.clone(),
            bias: self.bias.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.seed == other.seed
            && self.weights == other.weights
            && self.output == other.output
            && self.bias == other.bias
    }
}

/// `N(0, 2/m)` hidden and input weights, `N(0, 1/d)` output weights.
pub fn init_network(arch: &ArchSpec, seed: u64) -> Result<NetworkParams> {
    init_network_with(arch, seed, InitOptions::default())
}

pub fn init_network_with(arch: &ArchSpec, seed: u64, opts: InitOptions) -> Result<NetworkParams> {
    arch.validate()?;
    let requested = arch.parameter_count();
    if requested > opts.budget {
        return Err(Error::Budget {
            requested,
            budget: opts.budget,
        });
    }
    let m = arch.width as f64;
    let hd = arch.hidden_dim();
    let std_for = |l: usize| -> f64 {
        match &arch.kind {
            ArchKind::Conv(spec) if l < arch.depth => (2.0 / (spec.patch_size() as f64 * m)).sqrt(),
            // The fully connected last conv layer keeps norms with fan-in variance.
            ArchKind::Conv(_) => (2.0 / hd as f64).sqrt(),
            _ => (2.0 / m).sqrt(),
        }
    };
    let weights = (0..=arch.depth)
        .map(|l| {
            let (r, c) = arch.weight_shape(l);
            let role = if l == 0 { Role::Input } else { Role::Hidden };
            rng::gaussian_matrix(seed, role, l as u64, r, c, std_for(l))
        })
        .collect();
    let d = arch.output_dim;
    let output = rng::gaussian_matrix(seed, Role::Output, 0, d, hd, opts.output_scale / (d as f64).sqrt());
    let bias = match &arch.kind {
        ArchKind::Conv(_) => (1..arch.depth)
            .map(|l| rng::gaussian_vector(seed, Role::Bias, l as u64, hd, std_for(l)))
            .collect(),
        _ => Vec::new(),
    };
    Ok(NetworkParams {
        arch: arch.clone(),
        seed,
        weights,
        output,
        bias,
        fingerprint: OnceLock::new(),
    })
}

impl NetworkParams {
    /// Assemble from explicit matrices; shapes are checked against `arch`.
    pub fn from_parts(
        arch: ArchSpec,
        seed: u64,
        weights: Vec<Array2<f64>>,
        output: Array2<f64>,
        bias: Vec<Array1<f64>>,
    ) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.depth + 1 {
            return Err(Error::Dimension(format!(
                "expected {} weight matrices (input + {} hidden), got {}",
                arch.depth + 1,
                arch.depth,
                weights.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.dim() != arch.weight_shape(l) {
                return Err(Error::Dimension(format!(
                    "layer {l} has shape {:?}, expected {:?}",
                    w.dim(),
                    arch.weight_shape(l)
                )));
            }
        }
        if output.dim() != (arch.output_dim, arch.hidden_dim()) {
            return Err(Error::Dimension(format!(
                "output matrix has shape {:?}, expected {:?}",
                output.dim(),
                (arch.output_dim, arch.hidden_dim())
            )));
        }
        if bias.len() != arch.bias_layers() || bias.iter().any(|b| b.len() != arch.hidden_dim()) {
            return Err(Error::Dimension(format!(
                "expected {} bias vectors of length {}",
                arch.bias_layers(),
                arch.hidden_dim()
            )));
        }
        Ok(Self {
            arch,
            seed,
            weights,
            output,
            bias,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.arch.depth
    }

    /// Matrix of layer `l` (0 = input matrix `A`).
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.weights[l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Array2<f64> {
        self.fingerprint = OnceLock::new();
        &mut self.weights[l]
    }

    pub fn input_matrix(&self) -> &Array2<f64> {
        &self.weights[0]
    }

    /// `W_l` for `l` in `1..=L`.
    pub fn hidden(&self, l: usize) -> &Array2<f64> {
        assert!(l >= 1 && l <= self.arch.depth, "hidden layer {l} out of 1..={}", self.arch.depth);
        &self.weights[l]
    }

    pub fn output_matrix(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn output_matrix_mut(&mut self) -> &mut Array2<f64> {
        self.fingerprint = OnceLock::new();
        &mut self.output
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.bias
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    /// Content hash over architecture, seed and every stored entry.
    pub fn fingerprint(&self) -> u64 {
        *self.fingerprint.get_or_init(|| {
            let mut acc = rng::block_key(self.seed, Role::Probe, self.arch.parameter_count() as u64);
            let mut mix = |v: f64| {
                acc = (acc ^ v.to_bits()).wrapping_mul(0x100_0000_01B3).rotate_left(29);
            };
            for w in &self.weights {
                w.iter().for_each(|v| mix(*v));
            }
            self.output.iter().for_each(|v| mix(*v));
            self.bias.iter().flatten().for_each(|v| mix(*v));
            rng::block_key(acc, Role::Probe, 0)
        })
    }

    /// Hidden matrices `W_1..W_L` plus biases are replaced, the rest is kept.
    pub fn with_hidden(&self, hidden: Vec<Array2<f64>>) -> Result<Self> {
        let mut weights = Vec::with_capacity(self.arch.depth + 1);
        weights.push(self.weights[0].clone());
        weights.extend(hidden);
        Self::from_parts(self.arch.clone(), self.seed, weights, self.output.clone(), self.bias.clone())
    }
}
