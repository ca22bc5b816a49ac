//! Residual network: the interlaced spectral product stays bounded as depth grows.

use opl::archext::{residual_depth_sweep, spectral_product_probe_resnet, ResidualSpec};
use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::training::{default_loss, eta_sweep, geometric_grid, train, TrainConfig};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(10, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 1)?;
    let (width, depth) = (256, 20);
    let arch = ArchSpec::residual(10, width, 1, depth, ResidualSpec::default_for(depth, width));
    let mut p = init_network(&arch, 2)?;
    let prod = spectral_product_probe_resnet(&p, &ds.subset(&[0, 1, 2])?, 1, depth - 1, 4.0)?;
    println!("product norm {:?}, pass={}", prod.metrics, prod.pass);
    let sweep = residual_depth_sweep(&ds, width, &[5, 10, 20], 2, 4.0)?;
    for s in &sweep.series {
        println!("depth {:>3}: {:.4}", s.layer, s.value);
    }
    let loss = default_loss(&ds);
    let eta = eta_sweep(&p, &ds, &loss, &geometric_grid(1e-5, 1e-1, 4))?.chosen;
    let t = train(&mut p, &ds, &loss, &TrainConfig { eta, ..Default::default() })?;
    println!("gd: F {:.3e} after {} steps ({:?})", t.final_objective(), t.iterations(), t.status);
    Ok(())
}
