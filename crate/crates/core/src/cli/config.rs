use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archext::{build_patch_map, ConvSpec, PatchTopology, ResidualSpec};
use crate::datagen::LabelMode;
use crate::error::{Error, Result};
use crate::landscape::{GridSpec, OjaConfig, SemiSmoothConfig};
use crate::netcore::ArchSpec;
use crate::ntk::EquivalenceWindows;
use crate::theoryprobes::{PerturbationMode, SweepWindows};
use crate::training::geometric_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Suite {
    InitCheck,
    Stability,
    Ntk,
    TrainGd,
    TrainSgd,
    Landscape,
    ArchCnn,
    ArchResnet,
    All,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::InitCheck,
        Suite::Stability,
        Suite::Ntk,
        Suite::TrainGd,
        Suite::TrainSgd,
        Suite::Landscape,
        Suite::ArchCnn,
        Suite::ArchResnet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::InitCheck => "init-check",
            Suite::Stability => "stability",
            Suite::Ntk => "ntk",
            Suite::TrainGd => "train-gd",
            Suite::TrainSgd => "train-sgd",
            Suite::Landscape => "landscape",
            Suite::ArchCnn => "arch-cnn",
            Suite::ArchResnet => "arch-resnet",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .iter()
            .chain(std::iter::once(&Suite::All))
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown suite '{s}'")))
    }
}

impl Serialize for Suite {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Suite {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchChoice {
    FullyConnected,
    Conv,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvBlock {
    /// Patch size `q`; positions equal the dataset's input dimension.
    pub patch: usize,
    pub topology: PatchTopology,
    /// `None` picks `δ² / (10 P L)`.
    pub tau: Option<f64>,
}

impl Default for ConvBlock {
    fn default() -> Self {
        Self {
            patch: 3,
            topology: PatchTopology::Circulant,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualBlock {
    /// `None` picks `1 / (c L ln m)`.
    pub tau: Option<f64>,
    pub c: f64,
}

impl Default for ResidualBlock {
    fn default() -> Self {
        Self { tau: None, c: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchBlock {
    pub kind: ArchChoice,
    pub width: usize,
    pub depth: usize,
    pub conv: ConvBlock,
    pub residual: ResidualBlock,
}

impl Default for ArchBlock {
    fn default() -> Self {
        Self {
            kind: ArchChoice::FullyConnected,
            width: 256,
            depth: 3,
            conv: ConvBlock::default(),
            residual: ResidualBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    pub n: usize,
    pub dim: usize,
    pub delta: f64,
    pub label_mode: LabelMode,
    /// Defaults to the global seed.
    pub seed: Option<u64>,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            n: 10,
            dim: 10,
            delta: 0.1,
            label_mode: LabelMode::Regression { output_dim: 1 },
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtaGrid {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

impl Default for EtaGrid {
    fn default() -> Self {
        Self {
            lo: 1e-5,
            hi: 1e-1,
            per_decade: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBlock {
    /// Fixed step size; `None` runs the pilot sweep over `eta_grid`.
    pub eta: Option<f64>,
    pub eta_grid: EtaGrid,
    pub max_iters: usize,
    pub target_eps: f64,
    /// Mini-batch size for the SGD suite.
    pub batch: usize,
    /// SGD step size as a fraction of the GD step size.
    pub sgd_eta_scale: f64,
    pub joint: bool,
    pub travel_spec_every: usize,
    pub min_r2_gd: f64,
    pub min_r2_sgd: f64,
    pub max_travel: f64,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        Self {
            eta: None,
            eta_grid: EtaGrid::default(),
            max_iters: 2000,
            target_eps: 1e-3,
            batch: 2,
            sgd_eta_scale: 0.2,
            joint: false,
            travel_spec_every: 25,
            min_r2_gd: 0.95,
            min_r2_sgd: 0.9,
            max_travel: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitBlock {
    /// Half-width of the forward-norm window around 1.
    pub eps: f64,
    pub backward_draws: usize,
    /// Cap on the backward-norm ratio as a multiple of `√L`.
    pub backward_cap_per_sqrt_depth: f64,
    pub chi_square_redraws: usize,
}

impl Default for InitBlock {
    fn default() -> Self {
        Self {
            eps: 0.15,
            backward_draws: 4,
            backward_cap_per_sqrt_depth: 3.0,
            chi_square_redraws: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityBlock {
    pub omegas: Vec<f64>,
    pub mode: PerturbationMode,
    pub windows: SweepWindows,
}

impl Default for StabilityBlock {
    fn default() -> Self {
        Self {
            omegas: (0..7).map(|k| 1e-4 * 10f64.powf(k as f64 / 2.0)).collect(),
            mode: PerturbationMode::SignFlip { sample: 0, output: 0 },
            windows: SweepWindows::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NtkBlock {
    pub sample: usize,
    pub partner: usize,
    pub omegas: Vec<f64>,
    pub mode: PerturbationMode,
    pub windows: EquivalenceWindows,
    /// Widths for the deviation-ratio trend; empty skips it.
    pub widths: Vec<usize>,
    /// Reference perturbation size at the first width, scaled by `√(m₀/m)`.
    pub width_omega: f64,
}

impl Default for NtkBlock {
    fn default() -> Self {
        Self {
            sample: 0,
            partner: 1,
            omegas: (0..5).map(|k| 1e-3 * 10f64.powf(k as f64 / 4.0)).collect(),
            mode: PerturbationMode::SignFlip { sample: 0, output: 0 },
            windows: EquivalenceWindows::default(),
            widths: Vec::new(),
            width_omega: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeBlock {
    /// Widths for the gradient-bound sweep; empty uses the configured width only.
    pub bound_widths: Vec<usize>,
    pub bound_steps: usize,
    /// Fraction of the piloted step size used along the bound trajectories.
    pub bound_eta_scale: f64,
    pub bound_spread: f64,
    pub semi_smooth: SemiSmoothConfig,
    pub min_envelope_r2: f64,
    pub max_held_out_ratio: f64,
    pub min_descent_fraction: f64,
    pub oja: OjaConfig,
    pub grid: GridSpec,
}

impl Default for LandscapeBlock {
    fn default() -> Self {
        Self {
            bound_widths: Vec::new(),
            bound_steps: 12,
            bound_eta_scale: 0.5,
            bound_spread: 5.0,
            semi_smooth: SemiSmoothConfig::default(),
            min_envelope_r2: 0.9,
            max_held_out_ratio: 2.0,
            min_descent_fraction: 0.95,
            oja: OjaConfig {
                steps: 100,
                ..Default::default()
            },
            grid: GridSpec {
                extent1: 0.5,
                extent2: 0.5,
                steps1: 11,
                steps2: 11,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchExtBlock {
    pub conv_width: usize,
    pub conv_depth: usize,
    pub conv_patch: usize,
    pub residual_width: usize,
    pub residual_depth: usize,
    pub residual_cap: f64,
    /// Depths for the residual spectral-product sweep.
    pub residual_depths: Vec<usize>,
}

impl Default for ArchExtBlock {
    fn default() -> Self {
        Self {
            conv_width: 64,
            conv_depth: 3,
            conv_patch: 3,
            residual_width: 256,
            residual_depth: 10,
            residual_cap: 4.0,
            residual_depths: vec![5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeBlock {
    pub init: InitBlock,
    pub stability: StabilityBlock,
    pub ntk: NtkBlock,
    pub landscape: LandscapeBlock,
    pub archext: ArchExtBlock,
}

/// One self-describing JSON document per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub suite: Option<Suite>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub arch: ArchBlock,
    pub dataset: DatasetBlock,
    pub training: TrainingBlock,
    pub probes: ProbeBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: None,
            seed: 0,
            out: None,
            arch: ArchBlock::default(),
            dataset: DatasetBlock::default(),
            training: TrainingBlock::default(),
            probes: ProbeBlock::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn omegas_ok(name: &str, ws: &[f64]) -> Result<()> {
    if ws.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("{name} must be finite and nonnegative")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dataset_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    /// Architecture for the configured kind at the given width and depth.
    pub fn arch_spec(&self, kind: ArchChoice, width: usize, depth: usize) -> Result<ArchSpec> {
        let d = self.dataset.label_mode.output_dim();
        let spec = match kind {
            ArchChoice::FullyConnected => ArchSpec::fully_connected(self.dataset.dim, width, d, depth),
            ArchChoice::Residual => {
                let spec = match self.arch.residual.tau {
                    Some(t) => ResidualSpec::new(t)?,
                    None => ResidualSpec::scaled(depth, width, self.arch.residual.c)?,
                };
                ArchSpec::residual(self.dataset.dim, width, d, depth, spec)
            }
            ArchChoice::Conv => {
                let p = self.dataset.dim;
                let patches = build_patch_map(p, self.arch.conv.patch, self.arch.conv.topology, self.seed)?;
                let tau = self
                    .arch
                    .conv
                    .tau
                    .unwrap_or_else(|| ConvSpec::default_tau(self.dataset.delta, p, depth));
                ArchSpec::conv(width, d, depth, ConvSpec::new(patches, tau)?)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every block; returns warnings that do not stop a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let a = &self.arch;
        if a.width == 0 || a.depth == 0 {
            return Err(Error::Config("width and depth must be at least 1".into()));
        }
        let ds = &self.dataset;
        if ds.n == 0 || ds.dim < 2 {
            return Err(Error::Config("dataset needs n >= 1 and dim >= 2".into()));
        }
        if !(ds.delta > 0.0 && ds.delta <= 1.0) {
            return Err(Error::Config(format!("dataset delta must be in (0, 1], got {}", ds.delta)));
        }
        if ds.label_mode.output_dim() == 0 {
            return Err(Error::Config("label mode needs at least one output".into()));
        }
        if ds.delta * a.depth as f64 > 1.0 {
            warnings.push(format!("delta·L = {:.3} exceeds 1; separation bounds assume delta <= 1/L", ds.delta * a.depth as f64));
        }
        self.arch_spec(a.kind, a.width, a.depth)
            .map_err(|e| Error::Config(format!("arch: {e}")))?;

        let t = &self.training;
        if let Some(eta) = t.eta {
            positive("training.eta", eta)?;
        }
        positive("training.eta_grid.lo", t.eta_grid.lo)?;
        positive("training.eta_grid.hi", t.eta_grid.hi)?;
        if t.eta_grid.lo > t.eta_grid.hi || t.eta_grid.per_decade == 0 {
            return Err(Error::Config("training.eta_grid needs lo <= hi and per_decade >= 1".into()));
        }
        positive("training.target_eps", t.target_eps)?;
        positive("training.sgd_eta_scale", t.sgd_eta_scale)?;
        if t.batch == 0 || t.batch > ds.n {
            return Err(Error::Config(format!("training.batch must be in 1..={}", ds.n)));
        }

        let p = &self.probes;
        positive("probes.init.eps", p.init.eps)?;
        omegas_ok("probes.stability.omegas", &p.stability.omegas)?;
        omegas_ok("probes.ntk.omegas", &p.ntk.omegas)?;
        positive("probes.ntk.width_omega", p.ntk.width_omega)?;
        if p.ntk.sample >= ds.n || p.ntk.partner >= ds.n {
            return Err(Error::Config("probes.ntk sample indices out of range".into()));
        }
        if let PerturbationMode::SignFlip { sample, output } = p.stability.mode {
            if sample >= ds.n || output >= ds.label_mode.output_dim() {
                return Err(Error::Config("probes.stability.mode sign flip indices out of range".into()));
            }
        }
        if p.ntk.widths.iter().chain(&p.landscape.bound_widths).any(|w| *w == 0) {
            return Err(Error::Config("sweep widths must be positive".into()));
        }
        p.landscape.grid.validate().map_err(|e| Error::Config(format!("probes.landscape.grid: {e}")))?;
        omegas_ok("probes.landscape.semi_smooth.omega2s", &p.landscape.semi_smooth.omega2s)?;
        positive("probes.landscape.bound_eta_scale", p.landscape.bound_eta_scale)?;
        if let Some(r) = p.landscape.oja.smoothing_radius {
            positive("probes.landscape.oja.smoothing_radius", r)?;
        }
        let x = &p.archext;
        if x.residual_depth < 2 || x.residual_depths.iter().any(|d| *d < 2) {
            return Err(Error::Config("residual depths must be at least 2".into()));
        }
        if x.conv_patch == 0 || x.conv_patch > ds.dim {
            return Err(Error::Config(format!("probes.archext.conv_patch must be in 1..={}", ds.dim)));
        }
        Ok(warnings)
    }

    /// Pilot grid for the step-size sweep.
    pub fn eta_grid(&self) -> Vec<f64> {
        let g = &self.training.eta_grid;
        geometric_grid(g.lo, g.hi, g.per_decade)
    }
}
