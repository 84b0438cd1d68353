//! LCAP against the two-stage CAP-mix baseline on the same longitudinal data.
//!
//! CAP-mix fits the projection on first visits only, then regresses the
//! per-visit log-variances with a random-intercept model.
//!
//! ```text
//! cargo run --release --example cap_mix
//! ```

use lcap::estimation::{fit_components, FitConfig};
use lcap::simulation::{cap_mix_baseline, generate_panel, match_component, similarity, SimConfig};

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 30,
        n: 50,
        v: 10,
        t: 50,
        ..SimConfig::default()
    };
    let (panel, truth) = generate_panel(&cfg, 3)?;
    let j = truth.target_dim;
    let true_beta = truth.effects(j)[0];
    let config = FitConfig {
        max_components: 3,
        ..FitConfig::default()
    };

    let lcap = fit_components(&panel, &config)?;
    let gammas: Vec<_> = lcap
        .selected()
        .iter()
        .map(|c| c.params.gamma.clone())
        .collect();
    match match_component(&gammas, &truth, j) {
        Some(k) => {
            let c = &lcap.selected()[k];
            println!(
                "LCAP     component {}: similarity {:.3}, beta = {:.4} (true {true_beta:.4})",
                k + 1,
                similarity(&c.params.gamma, &truth.direction(j)),
                c.params.beta1[0]
            );
        }
        None => println!("LCAP     no selected component matches dimension {j}"),
    }

    let mix = cap_mix_baseline(&panel, &config)?;
    let gammas: Vec<_> = mix.components.iter().map(|c| c.gamma.clone()).collect();
    match match_component(&gammas, &truth, j) {
        Some(k) => {
            let c = &mix.components[k];
            let ci = c.lmm.wald_interval(1, 0.95)?;
            println!(
                "CAP-mix  component {}: similarity {:.3}, beta = {:.4} [{:.4}, {:.4}]",
                k + 1,
                similarity(&c.gamma, &truth.direction(j)),
                c.lmm.beta[1],
                ci.lower,
                ci.upper
            );
        }
        None => println!("CAP-mix  no selected component matches dimension {j}"),
    }
    Ok(())
}
