//! Autoregressive injection: train briefly, then add agents to a blank
//! road layout one at a time, printing the trace of every injection.
//!
//! ```bash
//! cargo run --example inject_agents
//! ```

use scengen::config::RunConfig;
use scengen::corpus::generate_corpus;
use scengen::generate::{generate_scenario_autoregressive, GenerationRequest};
use scengen::metrics::static_collision_rate;
use scengen::train::TrainSession;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::desk(21);
    cfg.corpus.n_scenarios = 8;
    cfg.train.steps = 200;

    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    let mut session = TrainSession::new(&cfg);
    println!("warming the model up for {} steps...", cfg.train.steps);
    session.run(&corpus, cfg.train.steps as u64, None)?;

    // Strip a held-out layout and refill it.
    let layout = &corpus[0];
    let request = GenerationRequest {
        context: layout.context.clone(),
        seed_agents: Vec::new(),
        n_agents: layout.agents.len(),
        rng_seed: 1234,
        per_class_counts: None,
    };
    let (scenario, trace) = generate_scenario_autoregressive(&session.model, &request, &cfg.generate);

    println!("injected {} agents (requested {})", scenario.agents.len(), request.n_agents);
    for e in &trace.entries {
        println!(
            "  #{:<2} {:?} at cell {:?}  occ p={:.4}  mode {} (p={:.3})  traj {} (p={:.3})",
            e.iteration, e.class, e.cell, e.occupancy_probability, e.mode_index,
            e.mode_probability, e.trajectory_index, e.trajectory_probability
        );
    }
    if let Some(msg) = &trace.under_fill {
        println!("under-fill: {msg}");
    }
    println!("static collision rate of the result: {:.2}%", static_collision_rate(&scenario));
    Ok(())
}
