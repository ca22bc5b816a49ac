//! Gradient bounds, semi-smoothness, negative curvature and a two-direction slice.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::landscape::{
    gradient_bounds, gradient_direction, landscape_slice, oja_negative_curvature, semi_smoothness_probe, GridSpec,
    OjaConfig, SemiSmoothConfig,
};
use opl::netcore::{init_network, ArchSpec};
use opl::training::default_loss;

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(8, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 2)?;
    let loss = default_loss(&ds);
    let p = init_network(&ArchSpec::fully_connected(10, 256, 1, 3), 3)?;

    if let Some(b) = gradient_bounds(&p, &ds, &loss)? {
        println!("F {:.3}: r_low {:.3}, max r_up {:.3}", b.objective, b.r_low, b.r_up_max());
    }
    let ss = semi_smoothness_probe(&p, &ds, &loss, &SemiSmoothConfig { omega1: 0.05, ..Default::default() })?;
    if let Some(e) = ss.envelope {
        println!("envelope a {:.3e}, c {:.3e}, r2 {:.3}; held-out ratio {:.2}", e.a, e.c, e.r2, ss.held_out_ratio);
    }
    let oja = oja_negative_curvature(&p, &ds, &loss, &OjaConfig { steps: 100, ..Default::default() })?;
    println!("oja rayleigh {:.3e} (gradient direction {:?})", oja.rayleigh, oja.gradient_rayleigh);

    let (g, _) = gradient_direction(&p, &ds, &loss)?;
    let spec = GridSpec { extent1: 0.5, extent2: 0.5, steps1: 11, steps2: 11, ..Default::default() };
    let grid = landscape_slice(&p, &ds, &loss, &g, &oja.direction, &spec)?;
    let dir = std::env::temp_dir().join("opl-example-landscape");
    grid.write(&dir, &p)?;
    println!("center F {:.6}, grid written to {}", grid.center_cell(), dir.display());
    Ok(())
}
