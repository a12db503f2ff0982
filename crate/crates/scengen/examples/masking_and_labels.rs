//! Turn a ground-truth scenario into training examples: split agents into
//! input and hidden sets, then render the binary occupancy labels that the
//! hidden agents produce.
//!
//! ```bash
//! cargo run --example masking_and_labels
//! ```

use scengen::config::RunConfig;
use scengen::corpus::{generate_scenario, mask_scenario, render_gt_occupancy, sample_p_keep, MaskSpec};
use scengen::grid::GridSpec;
use scengen::util::{derive_rng, streams};

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::desk(7);
    let scenario = generate_scenario(&cfg.corpus, 3)?;
    println!("scenario {} with {} agents", scenario.id, scenario.agents.len());

    let grid = GridSpec::square(cfg.model.occupancy_side, cfg.model.fov_extent);
    let mut rng = derive_rng(cfg.seed, streams::MASKING, 0);
    for trial in 0..3u64 {
        let spec = MaskSpec { p_keep: sample_p_keep(&mut rng), rng_seed: trial };
        let example = mask_scenario(&scenario, &spec);
        let labels = render_gt_occupancy(&example, &grid);
        println!(
            "p_keep {:.3}: {} input, {} hidden, {} occupied label cells",
            spec.p_keep,
            example.input_agents.len(),
            example.hidden_agents.len(),
            labels.sum() as usize
        );
        for agent in &example.hidden_agents {
            let (r, c) = grid.grid_index(agent.initial.x, agent.initial.y).unwrap();
            println!(
                "  hidden {:?} at ({:.1}, {:.1}) -> cell ({r}, {c})",
                agent.initial.class, agent.initial.x, agent.initial.y
            );
        }
    }
    Ok(())
}
