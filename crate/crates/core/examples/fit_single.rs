//! Fits one projection on simulated data and compares it with the truth.
//!
//! ```text
//! cargo run --release --example fit_single
//! ```

use lcap::estimation::{fit_single_component, FitConfig, Orthogonality};
use lcap::simulation::{generate_panel, similarity, SimConfig};

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 20,
        n: 50,
        v: 5,
        t: 100,
        ..SimConfig::default()
    };
    let (panel, truth) = generate_panel(&cfg, 2024)?;
    let fit = fit_single_component(&panel, &FitConfig::default(), &Orthogonality::none())?;

    println!(
        "converged {} after {} iterations (best of starts: #{}), objective {:.4}",
        fit.converged, fit.iterations, fit.start_index, fit.objective
    );
    if let Some(s) = &fit.shrinkage {
        println!("shrinkage weight rho = {:.4}", s.rho);
    }

    // the leading component usually lands on one of the two dimensions with effects
    let (dim, sim) = (1..=cfg.p)
        .map(|d| (d, similarity(&fit.params.gamma, &truth.direction(d))))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    println!("closest true dimension: {dim} (|cos| = {sim:.4})");
    // beta0 depends on the scale of gamma, so only the effects are comparable
    for (k, b) in fit.params.beta1.iter().enumerate() {
        println!("beta1[{k}] = {b:.4} (true {:.4})", truth.effects(dim)[k]);
    }
    println!(
        "sigma2 = {:.5} (true {:.5})",
        fit.params.sigma2, truth.sigma2
    );
    Ok(())
}
