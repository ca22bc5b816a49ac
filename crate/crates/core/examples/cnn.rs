//! Convolutional network: forward norms and GD on patch inputs.

use opl::archext::{build_patch_map, forward_cnn, ConvSpec, PatchTopology};
use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::theoryprobes::probe_forward_norms;
use opl::training::{default_loss, eta_sweep, geometric_grid, train, TrainConfig};

fn main() -> opl::Result<()> {
    let positions = 8;
    let ds = generate_separated_dataset(10, positions, 0.1, LabelMode::Regression { output_dim: 1 }, 5)?;
    let depth = 3;
    let patches = build_patch_map(positions, 3, PatchTopology::Circulant, 0)?;
    let tau = ConvSpec::default_tau(0.1, positions, depth);
    let mut p = init_network(&ArchSpec::conv(256, 1, depth, ConvSpec::new(patches, tau)?), 6)?;

    let h = forward_cnn(&p, ds.input(0))?;
    println!("hidden dim {}, {} layers traced", p.arch().hidden_dim(), h.depth());
    let norms = probe_forward_norms(&p, &ds, 0.15)?;
    println!("forward norms pass={} {:?}", norms.pass, norms.metrics);

    let loss = default_loss(&ds);
    let eta = eta_sweep(&p, &ds, &loss, &geometric_grid(1e-5, 1e-1, 4))?.chosen;
    let t = train(&mut p, &ds, &loss, &TrainConfig { eta, ..Default::default() })?;
    println!("gd: F {:.3e} after {} steps ({:?})", t.final_objective(), t.iterations(), t.status);
    Ok(())
}
