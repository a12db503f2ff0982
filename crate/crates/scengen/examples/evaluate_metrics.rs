//! The evaluation protocol without any training: compare the replay
//! oracle (reproduces ground truth, all MMDs zero) against the naive
//! uniform-random placement baseline.
//!
//! ```bash
//! cargo run --example evaluate_metrics
//! ```

use scengen::config::RunConfig;
use scengen::corpus::generate_corpus;
use scengen::generate::{RandomBaseline, ReplayOracle};
use scengen::metrics::evaluate_corpus;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::desk(31);
    cfg.corpus.n_scenarios = 20;
    let eval_set = generate_corpus(&cfg.corpus, cfg.seed)?;

    let oracle = evaluate_corpus(&ReplayOracle, &eval_set, &cfg.metrics, cfg.corpus.dt, 1);
    print!("{}", oracle.to_text());

    let baseline = RandomBaseline { corpus: cfg.corpus.clone() };
    let random = evaluate_corpus(&baseline, &eval_set, &cfg.metrics, cfg.corpus.dt, 1);
    print!("{}", random.to_text());

    println!("every MMD column should be strictly larger for the random baseline:");
    for ((name, o), (_, r)) in oracle.initial_columns().iter().zip(random.initial_columns().iter()) {
        println!("  {name:<20} oracle {:.4}  random {:.4}", o.mean, r.mean);
    }
    for ((name, o), (_, r)) in oracle.motion_columns().iter().zip(random.motion_columns().iter()) {
        println!("  {name:<20} oracle {:.4}  random {:.4}", o.mean, r.mean);
    }
    Ok(())
}
