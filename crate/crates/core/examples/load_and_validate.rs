//! Writes a synthetic study to CSV, reads it back and validates it.
//!
//! ```text
//! cargo run --example load_and_validate
//! ```

use lcap::data::{center_dataset, load_dataset, save_dataset, validate_dataset};
use lcap::panel::Panel;
use lcap::simulation::{generate_dataset, SimConfig};

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 8,
        n: 12,
        v: 3,
        t: 25,
        ..SimConfig::default()
    };
    let (ds, _) = generate_dataset(&cfg, 1)?;

    let dir = std::env::temp_dir().join("lcap-load-example");
    std::fs::create_dir_all(&dir).map_err(|e| lcap::LcapError::io(&dir, e))?;
    let (data, covariates) = (dir.join("data.csv"), dir.join("covariates.csv"));
    save_dataset(&ds, &data, &covariates)?;
    println!("wrote {} and {}", data.display(), covariates.display());

    let loaded = load_dataset(&data, &covariates)?;
    println!(
        "{} subjects, {} visit blocks, {} rows, p = {}, q = {}",
        loaded.n(),
        loaded.n_blocks(),
        loaded.total_rows(),
        loaded.p,
        loaded.q
    );

    let report = validate_dataset(&loaded);
    for (at, msg) in &report.errors {
        println!("error at {at:?}: {msg}");
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }

    // covariances are taken around each visit's own mean
    let panel = Panel::from_dataset(&center_dataset(loaded))?;
    let s = panel.sample.matrix(0);
    println!(
        "first block: T = {}, trace(S) = {:.3}",
        panel.design.blocks[0].t,
        s.trace()
    );
    Ok(())
}
