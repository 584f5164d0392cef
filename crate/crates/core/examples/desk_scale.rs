//! Four-way comparison on the small 4 x 10 fleet, printed as tables.

use edgesense_core::{compare, run_simulation, trace, PolicyKind, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SimConfig {
        n_zones: 4,
        nodes_per_zone: 10,
        ..SimConfig::default()
    };
    let traces = trace::build_synthetic(&base)?;
    let mut runs = Vec::new();
    for seed in 1..=5 {
        let cfg = SimConfig {
            seed,
            ..base.clone()
        };
        for kind in PolicyKind::ALL {
            runs.push(run_simulation(&cfg, &traces, kind)?);
        }
    }
    let cmp = compare(&runs)?;
    print!("{}", cmp.render_text());
    println!("events: {}", traces.events.len());
    Ok(())
}
