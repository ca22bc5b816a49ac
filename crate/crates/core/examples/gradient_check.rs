//! Analytic gradients against central differences for each architecture.

use opl::archext::{build_patch_map, ConvSpec, PatchTopology, ResidualSpec};
use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{gradient_check, init_network, ArchSpec};
use opl::training::default_loss;

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(4, 8, 0.2, LabelMode::Regression { output_dim: 2 }, 1)?;
    let loss = default_loss(&ds);
    let patches = build_patch_map(8, 3, PatchTopology::Circulant, 1)?;
    let archs = [
        ("fully connected", ArchSpec::fully_connected(8, 16, 2, 3)),
        ("conv", ArchSpec::conv(4, 2, 3, ConvSpec::new(patches, 0.05)?)),
        ("residual", ArchSpec::residual(8, 16, 2, 3, ResidualSpec::new(0.1)?)),
    ];
    for (name, arch) in archs {
        let p = init_network(&arch, 2)?;
        let g = gradient_check(&p, &ds, &loss, 1e-6, 3)?;
        println!("{name:>16}: max relative error {:.2e} ({} directions)", g.max_rel_error, g.checks.len());
    }
    Ok(())
}
