//! Full-batch GD with a piloted step size; writes the trace and the trained checkpoint.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::io::{save_checkpoint, write_csv};
use opl::netcore::{init_network, ArchSpec};
use opl::training::{default_loss, eta_sweep, geometric_grid, train, ConvergenceTrace, TrainConfig};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(10, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 1)?;
    let loss = default_loss(&ds);
    let mut p = init_network(&ArchSpec::fully_connected(10, 512, 1, 3), 1)?;
    let eta = eta_sweep(&p, &ds, &loss, &geometric_grid(1e-5, 1e-1, 4))?.chosen;
    let trace = train(&mut p, &ds, &loss, &TrainConfig { eta, ..Default::default() })?;
    println!(
        "eta {eta:.3e}: F {:.3e} -> {:.3e} in {} steps ({:?}), travel {:.2e}",
        trace.initial_objective(),
        trace.final_objective(),
        trace.iterations(),
        trace.status,
        trace.max_travel_rel().unwrap_or(0.0)
    );
    if let Some(fit) = trace.linearity {
        println!("log F slope {:.4} per step, r2 {:.4}", fit.slope, fit.r2);
    }
    let dir = std::env::temp_dir().join("opl-example-gd");
    std::fs::create_dir_all(&dir).map_err(|e| opl::Error::io(&dir, e))?;
    write_csv(&dir.join("trace.csv"), &ConvergenceTrace::CSV_HEADER, &trace.csv_rows())?;
    save_checkpoint(&dir.join("trained.opl"), &p)?;
    println!("outputs in {}", dir.display());
    Ok(())
}
