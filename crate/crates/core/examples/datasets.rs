//! Generate a separated dataset, certify it and round-trip it through the binary format.

use opl::datagen::{check_delta, generate_separated_dataset, LabelMode};
use opl::io::{load_dataset, save_dataset};

fn main() -> opl::Result<()> {
    let ds = generate_separated_dataset(10, 10, 0.1, LabelMode::Regression { output_dim: 1 }, 7)?;
    println!("n = {}, dim = {}, certified delta = {:.4}", ds.len(), ds.input_dim(), check_delta(&ds)?);

    let classes = generate_separated_dataset(12, 8, 0.1, LabelMode::Classification { classes: 3 }, 7)?;
    println!("classification set: {} samples, {} classes", classes.len(), classes.output_dim());

    let dir = std::env::temp_dir().join("opl-example-datasets");
    std::fs::create_dir_all(&dir).map_err(|e| opl::Error::io(&dir, e))?;
    let path = dir.join("train.ds");
    save_dataset(&path, &ds)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, ds);
    println!("wrote and re-read {}", path.display());
    Ok(())
}
