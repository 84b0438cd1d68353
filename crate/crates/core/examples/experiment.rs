//! A small replicated simulation grid, scored against the generating truth.
//!
//! ```text
//! cargo run --release --example experiment [output-dir]
//! ```

use lcap::simulation::{run_experiment, ExperimentConfig};

fn main() -> lcap::Result<()> {
    let cfg = ExperimentConfig {
        n: vec![30],
        v: vec![3],
        t: vec![40, 200],
        p: vec![10],
        replications: 8,
        seed: 42,
        bootstrap_replicates: 100,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg)?;
    for s in &report.summaries {
        print!("n={} V={} T={} p={} {}:", s.n, s.v, s.t, s.p, s.method);
        for name in ["bias", "mse", "similarity", "coverage"] {
            if let Some(m) = s.get(name) {
                print!("  {name} {:.4} ({:.4})", m.value, m.stderr);
            }
        }
        println!("  failures {}", s.failures);
    }
    if let Some(dir) = std::env::args().nth(1) {
        report.write(std::path::Path::new(&dir))?;
        println!("reports written to {dir}");
    }
    Ok(())
}
