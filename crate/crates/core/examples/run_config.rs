//! Build a config in code, run a suite and emit its artifacts, as `opl train-gd` would.

use opl::cli::{run_suite, write_run, ExperimentConfig, Suite};

fn main() -> opl::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 42;
    cfg.arch.width = 256;
    for w in cfg.validate()? {
        println!("warning: {w}");
    }
    let report = run_suite(&cfg, Suite::TrainGd)?;
    for s in &report.suites {
        for c in &s.checks {
            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    let dir = std::env::temp_dir().join("opl-example-run");
    let files = write_run(&cfg, &report, &dir)?;
    println!("{} artifacts in {}, report hash {}", files.len(), dir.display(), report.hash);
    Ok(())
}
