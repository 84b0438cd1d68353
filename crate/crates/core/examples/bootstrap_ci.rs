//! Subject-level bootstrap intervals for the coefficients of a fitted projection.
//!
//! ```text
//! cargo run --release --example bootstrap_ci
//! ```

use lcap::estimation::{fit_coefficients, fit_single_component, FitConfig, Orthogonality};
use lcap::inference::{bootstrap_coefficients, confidence_interval, IntervalMethod};
use lcap::simulation::{generate_panel, SimConfig};

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 10,
        n: 50,
        v: 5,
        t: 50,
        ..SimConfig::default()
    };
    let (panel, _) = generate_panel(&cfg, 11)?;
    let config = FitConfig::default();
    let fit = fit_single_component(&panel, &config, &Orthogonality::none())?;

    // gamma stays fixed; only the coefficients are refit on each resample
    let gamma = fit.params.gamma;
    let estimate = fit_coefficients(&panel, &gamma, &config)?
        .params
        .coefficients();
    let dist = bootstrap_coefficients(&panel, &gamma, 300, &config, 5)?;
    println!(
        "{} replicates, {} failed",
        dist.replicates.len(),
        dist.failures
    );

    for k in 0..estimate.len() {
        let name = if k == 0 {
            "beta0".to_string()
        } else {
            format!("beta1[{}]", k - 1)
        };
        let pct = confidence_interval(&dist, k, 0.95, IntervalMethod::Percentile, estimate[k])?;
        let bc = confidence_interval(&dist, k, 0.95, IntervalMethod::BiasCorrected, estimate[k])?;
        println!(
            "{name:<9} {:>8.4}  percentile [{:.4}, {:.4}]  bc [{:.4}, {:.4}]",
            estimate[k], pct.lower, pct.upper, bc.lower, bc.upper
        );
    }
    Ok(())
}
