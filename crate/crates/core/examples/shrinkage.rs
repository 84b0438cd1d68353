//! Pooled linear shrinkage when the dimension exceeds the visit length.
//!
//! ```text
//! cargo run --example shrinkage
//! ```

use lcap::covariance::{shrink_covariances, shrinkage_stats};
use lcap::likelihood::ModelParams;
use lcap::simulation::{generate_panel, SimConfig};
use nalgebra::DVector;

fn eigen_range(m: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 40,
        n: 10,
        v: 2,
        t: 15,
        ..SimConfig::default()
    };
    let (panel, truth) = generate_panel(&cfg, 4)?;

    // statistics at the true model for the target dimension
    let j = truth.target_dim;
    let params = ModelParams {
        gamma: truth.direction(j),
        beta0: truth.beta0[j - 1],
        beta1: truth.effects(j),
        beta0i: DVector::from_fn(panel.design.n(), |i, _| {
            truth.beta0[j - 1] + truth.u[(i, j - 1)]
        }),
        sigma2: truth.sigma2,
    };
    let stats = shrinkage_stats(&panel, &panel.sample, &params)?;
    println!(
        "mu = {:.4}  delta2 = {:.4}  phi2 = {:.4}  psi2 = {:.4}  rho = {:.4}",
        stats.mu, stats.delta2, stats.phi2, stats.psi2, stats.rho
    );

    let shrunk = shrink_covariances(&panel.sample, &stats);
    let (lo, hi) = eigen_range(&panel.sample.matrix(0));
    let (slo, shi) = eigen_range(&shrunk.matrix(0));
    println!("block 0 sample eigenvalues  [{lo:.4}, {hi:.4}]");
    println!(
        "block 0 shrunk eigenvalues  [{slo:.4}, {shi:.4}]  (floor rho*mu = {:.4})",
        stats.rho * stats.mu
    );
    Ok(())
}
