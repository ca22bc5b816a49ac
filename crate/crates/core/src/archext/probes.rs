use ndarray::ArrayView1;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, PowerIterationConfig};
use crate::netcore::{forward, init_network, ArchKind, ArchSpec, ForwardTrace, NetworkParams};
use crate::theoryprobes::{Check, InterlacedProduct, ProbeReport, SeriesPoint};

use super::ResidualSpec;

/// Forward pass that insists on a convolutional network.
pub fn forward_cnn(params: &NetworkParams, x: ArrayView1<f64>) -> Result<ForwardTrace> {
    match params.arch().kind {
        ArchKind::Conv(_) => forward(params, x),
        _ => Err(Error::InvalidArch(format!("expected a conv network, got {}", params.arch().kind_name()))),
    }
}

/// Forward pass that insists on a residual network.
pub fn forward_resnet(params: &NetworkParams, x: ArrayView1<f64>) -> Result<ForwardTrace> {
    match params.arch().kind {
        ArchKind::Residual(_) => forward(params, x),
        _ => Err(Error::InvalidArch(format!("expected a residual network, got {}", params.arch().kind_name()))),
    }
}

/// Spectral norm of `(I + τW_b) D_{b-1} ⋯ D_a (I + τW_a)` over the residual layers `a..=b`.
pub fn residual_product_norm(params: &NetworkParams, x: ArrayView1<f64>, a: usize, b: usize) -> Result<f64> {
    if !matches!(params.arch().kind, ArchKind::Residual(_)) {
        return Err(Error::InvalidArch("residual product needs a residual network".into()));
    }
    let last = params.depth().saturating_sub(1);
    if a < 1 || b > last || a > b {
        return Err(Error::LayerRange {
            index: if a < 1 { a } else { b },
            lo: 1,
            hi: last,
        });
    }
    let op = InterlacedProduct::new(params, x, a, b)?;
    let cfg = PowerIterationConfig {
        max_iters: 500,
        ..Default::default()
    };
    Ok(spectral_norm(&op, params.seed(), cfg).value())
}

/// Residual products from layer `a` to `b` for every sample; each must stay below `cap`.
pub fn spectral_product_probe_resnet(
    params: &NetworkParams,
    dataset: &Dataset,
    a: usize,
    b: usize,
    cap: f64,
) -> Result<ProbeReport> {
    let series = (0..dataset.len())
        .map(|i| {
            Ok(SeriesPoint {
                omega: None,
                layer: b as i64,
                value: residual_product_norm(params, dataset.input(i), a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = series.iter().map(|p| p.value).fold(0.0, f64::max);
    Ok(ProbeReport::new("residual_spectral_product", series, Check::AtMost { threshold: cap }).metric("max", max))
}

/// Full residual product for fresh networks at each depth with the default scale; the
/// series holds one value per depth (`layer` column = depth).
pub fn residual_depth_sweep(dataset: &Dataset, width: usize, depths: &[usize], seed: u64, cap: f64) -> Result<ProbeReport> {
    let mut series = Vec::new();
    for &depth in depths {
        if depth < 2 {
            return Err(Error::Config("residual depth sweep needs L >= 2".into()));
        }
        let spec = ResidualSpec::default_for(depth, width);
        let arch = ArchSpec::residual(dataset.input_dim(), width, dataset.output_dim(), depth, spec);
        let p = init_network(&arch, seed)?;
        series.push(SeriesPoint {
            omega: None,
            layer: depth as i64,
            value: residual_product_norm(&p, dataset.input(0), 1, depth - 1)?,
        });
    }
    let max = series.iter().map(|p| p.value).fold(0.0, f64::max);
    Ok(ProbeReport::new("residual_depth_sweep", series, Check::AtMost { threshold: cap }).metric("max", max))
}
