//! Mini-batch SGD, plus classification with cross-entropy until every label is right.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::training::{accuracy, default_loss, eta_sweep, geometric_grid, train, TrainConfig};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(10, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 1)?;
    let loss = default_loss(&ds);
    let p0 = init_network(&ArchSpec::fully_connected(10, 512, 1, 3), 1)?;
    let eta = eta_sweep(&p0, &ds, &loss, &geometric_grid(1e-5, 1e-1, 4))?.chosen;
    let mut p = p0.clone();
    let cfg = TrainConfig { eta: eta / 5.0, batch: Some(2), seed: 4, ..Default::default() };
    let trace = train(&mut p, &ds, &loss, &cfg)?;
    println!("sgd b=2: F {:.3e} after {} steps ({:?})", trace.final_objective(), trace.iterations(), trace.status);

    let cls = generate_separated_dataset(12, 10, 0.1, LabelMode::Classification { classes: 3 }, 2)?;
    let ce = default_loss(&cls);
    let mut q = init_network(&ArchSpec::fully_connected(10, 512, 3, 3), 2)?;
    let eta = eta_sweep(&q, &cls, &ce, &geometric_grid(1e-5, 1e-1, 4))?.chosen;
    let t = train(&mut q, &cls, &ce, &TrainConfig { eta, ..Default::default() })?;
    println!("cross-entropy: accuracy {:.3} after {} steps ({:?})", accuracy(&q, &cls)?, t.iterations(), t.status);
    Ok(())
}
