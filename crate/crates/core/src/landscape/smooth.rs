use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{dot, objective_gradient, scale, shifted, Weights};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::netcore::{objective, NetworkParams};
use crate::linalg::{spectral_norm, PowerIterationConfig};
use crate::rng::{gaussian_matrix, Role};
use crate::training::loss::LossFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSmoothConfig {
    /// Spectral size of the move from the start point to the base point.
    pub omega1: f64,
    /// Spectral sizes of the probe steps taken from the base point.
    pub omega2s: Vec<f64>,
    pub probes_per_omega: usize,
    pub seed: u64,
    /// Frobenius step sizes along the negative gradient.
    pub descent_omegas: Vec<f64>,
}

impl Default for SemiSmoothConfig {
    fn default() -> Self {
        Self {
            omega1: 1e-3,
            omega2s: (0..9).map(|k| 1e-3 * 10f64.powf(k as f64 / 4.0)).collect(),
            probes_per_omega: 8,
            seed: 0,
            descent_omegas: vec![1e-4, 1e-3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothProbe {
    pub omega2: f64,
    pub index: usize,
    /// `F(W̆ + W') − F(W̆) − ⟨∇F(W̆), W'⟩`
    pub residual: f64,
    pub held_out: bool,
}

/// `|R| ≈ a · ω₂√F + c · ω₂²`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub a: f64,
    pub c: f64,
    /// Goodness of fit of the log per-`ω₂` maxima against the log envelope.
    pub r2: f64,
}

impl Envelope {
    pub fn at(&self, omega2: f64, objective: f64) -> f64 {
        self.a * omega2 * objective.sqrt() + self.c * omega2 * omega2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSmoothReport {
    pub width: usize,
    pub omega1: f64,
    /// Objective at the base point.
    pub objective: f64,
    pub probes: Vec<SmoothProbe>,
    pub envelope: Option<Envelope>,
    /// Largest `|R| / envelope` over held-out probes.
    pub held_out_ratio: f64,
    pub descent_fraction: f64,
    pub descent_probes: usize,
    pub notes: Vec<String>,
}

impl SemiSmoothReport {
    pub fn pass(&self, min_r2: f64, max_ratio: f64, min_descent: f64) -> bool {
        self.envelope.is_some_and(|e| e.r2 >= min_r2)
            && self.held_out_ratio <= max_ratio
            && self.descent_fraction >= min_descent
    }
}

/// Largest `|R|` per distinct `ω₂ > 0`, in ascending `ω₂`.
fn per_omega_max(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &(w, r) in points {
        if !(w > 0.0 && r.is_finite()) {
            continue;
        }
        match out.iter_mut().find(|p| p.0 == w) {
            Some(p) => p.1 = p.1.max(r.abs()),
            None => out.push((w, r.abs())),
        }
    }
    out.retain(|p| p.1 > 0.0);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Tightest envelope `a·ω₂√F + c·ω₂²` (with `a, c ≥ 0`) lying above the per-`ω₂`
/// maxima of `|R|`: minimizes the summed envelope-to-maximum ratio. The two-variable
/// linear program is solved by enumerating its vertices.
pub fn fit_envelope(points: &[(f64, f64)], objective: f64) -> Option<Envelope> {
    let maxima = per_omega_max(points);
    if maxima.len() < 2 {
        return None;
    }
    let sf = objective.sqrt();
    // Constraint k in relative form: a·x_k + c·y_k >= 1.
    let rows: Vec<(f64, f64)> = maxima.iter().map(|&(w, r)| (w * sf / r, w * w / r)).collect();
    let feasible = |a: f64, c: f64| rows.iter().all(|(x, y)| a * x + c * y >= 1.0 - 1e-12);
    let cost = |a: f64, c: f64| rows.iter().map(|(x, y)| a * x + c * y).sum::<f64>();
    let mut candidates = Vec::new();
    let a_only = rows.iter().map(|(x, _)| 1.0 / x).fold(0.0, f64::max);
    if a_only.is_finite() {
        candidates.push((a_only, 0.0));
    }
    candidates.push((0.0, rows.iter().map(|(_, y)| 1.0 / y).fold(0.0, f64::max)));
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let m = Matrix2::new(rows[i].0, rows[i].1, rows[j].0, rows[j].1);
            if let Some(s) = m.try_inverse().map(|inv| inv * Vector2::new(1.0, 1.0)) {
                if s[0] >= 0.0 && s[1] >= 0.0 {
                    candidates.push((s[0], s[1]));
                }
            }
        }
    }
    let (a, c) = candidates
        .into_iter()
        .filter(|&(a, c)| a.is_finite() && c.is_finite() && feasible(a, c))
        .min_by(|p, q| cost(p.0, p.1).total_cmp(&cost(q.0, q.1)))?;
    let env = Envelope { a, c, r2: f64::NAN };
    let logs: Vec<(f64, f64)> = maxima.iter().map(|&(w, r)| (r.ln(), env.at(w, objective).ln())).collect();
    let mean = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let sst: f64 = logs.iter().map(|p| (p.0 - mean).powi(2)).sum();
    let sse: f64 = logs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN };
    Some(Envelope { r2, ..env })
}

/// Probe directions are normalized with a short power iteration; the estimate
/// sits within about a percent of the true spectral norm.
const PROBE_NORMALIZE: PowerIterationConfig = PowerIterationConfig {
    max_iters: 100,
    rel_tol: 1e-6,
};

fn random_move(params: &NetworkParams, seed: u64) -> Weights {
    (1..=params.depth())
        .map(|l| {
            let (r, c) = params.arch().weight_shape(l);
            let g = gaussian_matrix(seed, Role::Perturbation, l as u64, r, c, 1.0);
            let s = spectral_norm(&g, seed, PROBE_NORMALIZE).value();
            g / s
        })
        .collect()
}

/// Residual of the first-order model at a moved base point, over a sweep of probe sizes.
pub fn semi_smoothness_probe(
    params0: &NetworkParams,
    dataset: &Dataset,
    loss: &LossFunction,
    config: &SemiSmoothConfig,
) -> Result<SemiSmoothReport> {
    if !(config.omega1 >= 0.0 && config.omega1.is_finite()) || config.omega2s.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Precondition("perturbation sizes must be finite and nonnegative".into()));
    }
    let mut notes = Vec::new();
    let depth = params0.depth() as f64;
    if config.omega1 * depth.powf(1.5) > 1.0 {
        notes.push(format!("omega1 {} exceeds the small-travel regime for depth {}", config.omega1, depth));
    }
    let base_move = random_move(params0, config.seed);
    let base = shifted(params0, &base_move, config.omega1)?;
    let (f0, grad) = objective_gradient(&base, dataset, loss)?;

    let mut probes = Vec::new();
    let mut k = 0u64;
    for &w2 in &config.omega2s {
        for i in 0..config.probes_per_omega {
            k += 1;
            let dir = random_move(params0, config.seed.wrapping_add(k.wrapping_mul(0x9E37)));
            let moved = shifted(&base, &dir, w2)?;
            let (f1, _) = objective(&moved, dataset, loss)?;
            probes.push(SmoothProbe {
                omega2: w2,
                index: i,
                residual: f1 - f0 - w2 * dot(&grad, &dir),
                held_out: i % 2 == 1,
            });
        }
    }
    let train: Vec<(f64, f64)> = probes.iter().filter(|p| !p.held_out).map(|p| (p.omega2, p.residual)).collect();
    let envelope = fit_envelope(&train, f0);
    let held_out_ratio = match envelope {
        Some(e) => probes
            .iter()
            .filter(|p| p.held_out && p.omega2 > 0.0)
            .map(|p| p.residual.abs() / e.at(p.omega2, f0))
            .fold(0.0, f64::max),
        None => f64::INFINITY,
    };

    // Negative-gradient steps from independently moved base points.
    let mut decreased = 0;
    let mut total = 0;
    for i in 0..config.probes_per_omega.max(1) {
        let mv = random_move(params0, config.seed.wrapping_add(0xD1CE + i as u64));
        let b = shifted(params0, &mv, config.omega1)?;
        let (fb, mut g) = objective_gradient(&b, dataset, loss)?;
        let gn = super::norm(&g);
        if gn == 0.0 {
            continue;
        }
        scale(&mut g, 1.0 / gn);
        for &w2 in &config.descent_omegas {
            let (f1, _) = objective(&shifted(&b, &g, -w2)?, dataset, loss)?;
            total += 1;
            if f1 < fb {
                decreased += 1;
            }
        }
    }
    Ok(SemiSmoothReport {
        width: params0.arch().width,
        omega1: config.omega1,
        objective: f0,
        probes,
        envelope,
        held_out_ratio,
        descent_fraction: if total > 0 { decreased as f64 / total as f64 } else { 0.0 },
        descent_probes: total,
        notes,
    })
}
