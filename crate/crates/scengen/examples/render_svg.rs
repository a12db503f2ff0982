//! Render a synthetic scenario to an SVG file: roads by kind, agent boxes
//! by class, trajectories fading with time.
//!
//! ```bash
//! cargo run --example render_svg
//! ```

use scengen::config::RunConfig;
use scengen::corpus::generate_scenario;
use scengen::render::render_svg;

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::desk(0);
    for seed in [2u64, 14] {
        let scenario = generate_scenario(&cfg.corpus, seed)?;
        let path = format!("scenario_{seed}.svg");
        std::fs::write(&path, render_svg(&scenario))?;
        println!("wrote {path} ({} agents)", scenario.agents.len());
    }
    Ok(())
}
