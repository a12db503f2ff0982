//! Overfit the model on a single scenario with a fixed masking draw — the
//! quickest way to watch all three decoder heads learn.
//!
//! ```bash
//! cargo run --example train_overfit
//! ```

use scengen::config::RunConfig;
use scengen::corpus::generate_corpus;
use scengen::train::TrainSession;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::desk(7);
    cfg.corpus.n_scenarios = 1;
    cfg.train.fixed_mask_seed = Some(3);
    cfg.train.steps = 300;

    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    println!("overfitting on {} ({} agents)", corpus[0].id, corpus[0].agents.len());

    let mut session = TrainSession::new(&cfg);
    for milestone in [50u64, 100, 200, 300] {
        session.run(&corpus, milestone, None)?;
        let rec = session.history.last().unwrap();
        println!(
            "step {milestone:>4}: total {:>10.4}  occupancy {:.4}  attributes {:>8.4}  trajectory {:>9.4}",
            rec.total, rec.occupancy, rec.attributes, rec.trajectory
        );
    }
    let first = session.history[0].total;
    let last = session.history.last().unwrap().total;
    println!("loss dropped by {:.1}x over 300 steps", first / last);
    Ok(())
}
