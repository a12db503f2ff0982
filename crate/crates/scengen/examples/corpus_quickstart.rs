//! Generate a small synthetic corpus, validate every scenario, and write
//! it in the line-delimited interchange format.
//!
//! ```bash
//! cargo run --example corpus_quickstart
//! ```

use scengen::config::RunConfig;
use scengen::corpus::generate_corpus;
use scengen::io::{write_scenarios_file, CorpusHeader};
use scengen::scenario::AgentClass;
use std::path::Path;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::desk(42);
    cfg.corpus.n_scenarios = 12;

    let scenarios = generate_corpus(&cfg.corpus, cfg.seed)?;
    for s in &scenarios {
        s.validate(cfg.corpus.t_steps)?;
    }

    let mut counts = [0usize; 3];
    let mut polylines = 0usize;
    for s in &scenarios {
        polylines += s.context.polylines.len();
        for a in &s.agents {
            counts[a.initial.class.index()] += 1;
        }
    }
    println!("{} scenarios, {} road polylines", scenarios.len(), polylines);
    for class in AgentClass::ALL {
        println!("  {:?}: {} agents", class, counts[class.index()]);
    }

    let out = Path::new("corpus_quickstart.jsonl");
    let header = CorpusHeader::new(cfg.corpus.dt, cfg.corpus.t_steps, cfg.corpus.fov_extent)
        .with_config(cfg.to_json());
    write_scenarios_file(out, &header, &scenarios)?;
    println!("wrote {}", out.display());
    Ok(())
}
