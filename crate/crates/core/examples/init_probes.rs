//! Forward norms, separation and the chi-square law of a fresh wide network.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::theoryprobes::{chi_square_oracle, probe_backward_norm, probe_forward_norms, probe_separateness};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(5, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 3)?;
    let depth = 4;
    let p = init_network(&ArchSpec::fully_connected(10, 1024, 1, depth), 11)?;

    let norms = probe_forward_norms(&p, &ds, 0.15)?;
    println!("forward norms pass={} {:?}", norms.pass, norms.metrics);
    let sep = probe_separateness(&p, &ds)?;
    println!("separateness pass={} {:?}", sep.pass, sep.metrics);
    let back = probe_backward_norm(&p, &ds, 1, 4, 3.0 * (depth as f64).sqrt(), 5)?;
    println!("backward norm pass={} {:?}", back.pass, back.metrics);
    for l in 1..=depth {
        let c = chi_square_oracle(&p, ds.input(0), l, 400)?;
        println!("layer {l}: mean {:.2} (expected {:.2}), active {:.3}", c.mean, c.expected_mean, c.active_fraction);
    }
    Ok(())
}
