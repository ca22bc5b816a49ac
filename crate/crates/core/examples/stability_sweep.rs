//! Sign-change and drift scaling under spectral-norm perturbations.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::theoryprobes::{perturbation_sweep, PerturbationMode, SweepWindows};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(1, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 4)?;
    let p = init_network(&ArchSpec::fully_connected(10, 1024, 1, 4), 5)?;
    let omegas: Vec<f64> = (0..9).map(|k| 1e-5 * 10f64.powf(k as f64 / 2.0)).collect();
    let mode = PerturbationMode::SignFlip { sample: 0, output: 0 };
    let sweep = perturbation_sweep(&p, &ds, &omegas, mode, 1, SweepWindows::default())?;
    for r in sweep.reports() {
        let fit = r.fit.expect("slope fit");
        println!("{:>15}: slope {:.3} (r2 {:.3}), pass={}", r.name, fit.slope, fit.r2, r.pass);
    }
    Ok(())
}
