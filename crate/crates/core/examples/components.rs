//! Extracts several components and picks how many to keep by DfD.
//!
//! ```text
//! cargo run --release --example components
//! ```

use lcap::estimation::{fit_components, FitConfig};
use lcap::simulation::{generate_panel, similarity, SimConfig};

fn main() -> lcap::Result<()> {
    let cfg = SimConfig {
        p: 20,
        n: 100,
        v: 2,
        t: 300,
        ..SimConfig::default()
    };
    let (panel, truth) = generate_panel(&cfg, 7)?;
    let config = FitConfig {
        max_components: 4,
        ..FitConfig::default()
    };
    let set = fit_components(&panel, &config)?;

    println!("k  DfD       beta1                 best match");
    for (k, c) in set.components.iter().enumerate() {
        let (dim, sim) = (1..=cfg.p)
            .map(|d| (d, similarity(&c.params.gamma, &truth.direction(d))))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        println!(
            "{}  {:<8.4}  {:>8.4?}  dim {dim} ({sim:.3})",
            k + 1,
            set.dfd_values[k],
            c.params.beta1.as_slice()
        );
    }
    println!(
        "selected {} component(s) at threshold {}",
        set.k_selected, config.dfd_threshold
    );

    // off-diagonal entries vanish: later components are H-orthogonal to earlier ones
    let g = set.gamma_matrix(set.components.len());
    let gram = g.transpose() * &set.h * &g;
    println!("G' H G =\n{gram:.6}");
    Ok(())
}
