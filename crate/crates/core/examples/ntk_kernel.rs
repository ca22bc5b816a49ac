//! Tangent-kernel Gram matrix and the linearization residual around initialization.

use opl::datagen::{generate_separated_dataset, LabelMode};
use opl::netcore::{init_network, ArchSpec};
use opl::ntk::{min_eigenvalue, ntk_equivalence, ntk_gram, EquivalenceWindows};
use opl::theoryprobes::PerturbationMode;

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(6, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 2)?;
    let p = init_network(&ArchSpec::fully_connected(10, 512, 1, 3), 9)?;
    let k = ntk_gram(&p, &ds, 0)?;
    println!("gram {}x{}, smallest eigenvalue {:.4}", k.nrows(), k.ncols(), min_eigenvalue(&k));

    let omegas = [1e-3, 3e-3, 1e-2, 3e-2];
    let mode = PerturbationMode::SignFlip { sample: 0, output: 0 };
    let eq = ntk_equivalence(&p, &ds, 0, 1, &omegas, mode, 3, EquivalenceWindows::default())?;
    for row in &eq.rows {
        println!(
            "omega {:.0e}: grad ratio {:.3e}, residual {:.3e}, kernel dev {:.3e}",
            row.omega, row.grad_ratio, row.first_order_residual, row.kernel_dev
        );
    }
    Ok(())
}
