//! Command-line interface: corpus generation, training, autoregressive
//! generation, evaluation, and SVG rendering.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical abort.
//! `SCENGEN_THREADS` caps worker threads for the parallel stages.

use clap::{Args, Parser, Subcommand};
use scengen::config::{Preset, RunConfig};
use scengen::corpus::generate_corpus;
use scengen::generate::{
    generate_scenario_autoregressive, GenerationRequest, ModelGenerator, RandomBaseline,
    ReplayOracle,
};
use scengen::io::{read_scenarios_file, write_scenarios_file, CorpusHeader};
use scengen::metrics::evaluate_corpus;
use scengen::model::ScenarioModel;
use scengen::render::render_svg;
use scengen::train::{TrainError, TrainOutput, TrainSession};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "scengen", about = "Unified traffic scenario generation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Full run configuration file (TOML). Overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration preset.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Master seed for all derived randomness.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| CliError::Validation(e.to_string()))?,
            None => RunConfig::preset(self.preset, 0),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        print_self_check(&cfg)?;
        Ok(cfg)
    }
}

fn print_self_check(cfg: &RunConfig) -> Result<(), CliError> {
    println!("configuration self-check ({:?} preset):", cfg.preset);
    for (name, value) in cfg.self_check_table() {
        println!("  {name:<18} {value}");
    }
    if cfg.preset == Preset::Paper {
        cfg.assert_paper_preset().map_err(|e| CliError::Validation(e.to_string()))?;
        println!("  paper structural constants verified");
    }
    Ok(())
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth corpus.
    Corpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
        /// Override the number of scenarios.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the model on a corpus file.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus file in the interchange format.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the training step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Inject agents into a road layout with a trained model.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint (carries its own configuration).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario file providing the road layout.
        #[arg(long)]
        layout_from: PathBuf,
        /// Index of the layout scenario within the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Number of agents to inject (default: the layout's own count).
        #[arg(long)]
        agents: Option<usize>,
        /// Number of distinct sampled scenarios.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Keep the layout's original agents as seeds instead of stripping.
        #[arg(long)]
        keep_agents: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a generator against a reference corpus.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trained checkpoint; required for --method model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Method: model, random, or replay.
        #[arg(long, default_value = "model")]
        method: String,
        /// Reference corpus file.
        #[arg(long)]
        eval_corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render a scenario file to SVG.
    Render {
        /// Scenario file in the interchange format.
        #[arg(long)]
        input: PathBuf,
        /// Scenario index within the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Validation(format!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

fn load_model_from_checkpoint(path: &Path) -> Result<(RunConfig, ScenarioModel), CliError> {
    let ckpt = scengen::tensor::load_checkpoint::<f64>(path).map_err(io_err)?;
    let meta: serde_json::Value = serde_json::from_str(&ckpt.meta).map_err(io_err)?;
    let cfg: RunConfig = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| CliError::Validation("checkpoint meta lacks config".into()))?,
    )
    .map_err(io_err)?;
    let mut model = ScenarioModel::new(&cfg.model, cfg.seed);
    let params: Vec<_> = ckpt
        .entries
        .iter()
        .filter(|(n, _)| !n.starts_with("adam."))
        .cloned()
        .collect();
    model.load_params(&params).map_err(CliError::Validation)?;
    Ok((cfg, model))
}

fn cmd_corpus(cfg: ConfigArgs, out: PathBuf, force: bool, count: Option<usize>) -> Result<(), CliError> {
    let mut run = cfg.resolve()?;
    if let Some(n) = count {
        run.corpus.n_scenarios = n;
    }
    std::fs::create_dir_all(&out).map_err(io_err)?;
    let corpus_path = out.join("corpus.jsonl");
    refuse_overwrite(&corpus_path, force)?;

    let scenarios = generate_corpus(&run.corpus, run.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    for s in &scenarios {
        s.validate(run.corpus.t_steps)
            .map_err(|e| CliError::Validation(format!("generated scenario {} invalid: {e}", s.id)))?;
    }
    let header = CorpusHeader::new(run.corpus.dt, run.corpus.t_steps, run.corpus.fov_extent)
        .with_config(run.to_json());
    write_scenarios_file(&corpus_path, &header, &scenarios).map_err(io_err)?;
    run.save(&out.join("config.toml")).map_err(io_err)?;
    println!("wrote {} scenarios to {}", scenarios.len(), corpus_path.display());
    Ok(())
}

fn cmd_train(
    cfg: ConfigArgs,
    corpus: PathBuf,
    out: PathBuf,
    force: bool,
    resume: Option<PathBuf>,
    steps: Option<usize>,
) -> Result<(), CliError> {
    let mut run = cfg.resolve()?;
    if let Some(s) = steps {
        run.train.steps = s;
    }
    let (header, scenarios) = read_scenarios_file(&corpus).map_err(io_err)?;
    if header.t_steps != run.model.t_steps {
        return Err(CliError::Validation(format!(
            "corpus has T = {} but the config expects {}",
            header.t_steps, run.model.t_steps
        )));
    }
    let output = TrainOutput::new(&out).map_err(io_err)?;
    if resume.is_none() {
        refuse_overwrite(&output.checkpoint_path(), force)?;
    }
    run.save(&out.join("config.toml")).map_err(io_err)?;

    let mut session = match &resume {
        Some(path) => TrainSession::from_checkpoint(&run, path)
            .map_err(|e| CliError::Validation(e.to_string()))?,
        None => TrainSession::new(&run),
    };
    let until = run.train.steps as u64;
    println!("training to step {until} on {} scenarios", scenarios.len());
    match session.run(&scenarios, until, Some(&output)) {
        Ok(()) => {}
        Err(e @ TrainError::NanLoss { .. }) => return Err(CliError::Numerical(e.to_string())),
        Err(e) => return Err(CliError::Validation(e.to_string())),
    }
    let last = session.history.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "done: step {} loss {last:.4}, checkpoint {}",
        session.step,
        output.checkpoint_path().display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    cfg: ConfigArgs,
    checkpoint: PathBuf,
    layout_from: PathBuf,
    index: usize,
    agents: Option<usize>,
    samples: usize,
    keep_agents: bool,
    out: PathBuf,
    force: bool,
) -> Result<(), CliError> {
    let (run, model) = load_model_from_checkpoint(&checkpoint)?;
    print_self_check(&run)?;
    let seed = cfg.seed.unwrap_or(run.seed);
    let (_, scenarios) = read_scenarios_file(&layout_from).map_err(io_err)?;
    let layout = scenarios
        .get(index)
        .ok_or_else(|| CliError::Validation(format!("scenario index {index} out of range")))?;
    let n_agents = agents.unwrap_or(layout.agents.len());

    std::fs::create_dir_all(&out).map_err(io_err)?;
    let scenario_path = out.join("generated.jsonl");
    let trace_path = out.join("trace.jsonl");
    refuse_overwrite(&scenario_path, force)?;

    let mut outputs = Vec::new();
    let mut traces = Vec::new();
    for k in 0..samples.max(1) {
        let request = GenerationRequest {
            context: layout.context.clone(),
            seed_agents: if keep_agents { layout.agents.clone() } else { Vec::new() },
            n_agents,
            rng_seed: seed.wrapping_add(k as u64),
            per_class_counts: None,
        };
        let (scenario, trace) = generate_scenario_autoregressive(&model, &request, &run.generate);
        if let Some(msg) = &trace.under_fill {
            eprintln!("sample {k}: {msg}");
        }
        outputs.push(scenario);
        traces.push(trace);
    }
    let header = CorpusHeader::new(run.model.dt, run.model.t_steps, run.model.fov_extent)
        .with_config(run.to_json());
    write_scenarios_file(&scenario_path, &header, &outputs).map_err(io_err)?;
    let trace_lines: Vec<String> =
        traces.iter().map(|t| serde_json::to_string(t).unwrap()).collect();
    std::fs::write(&trace_path, trace_lines.join("\n") + "\n").map_err(io_err)?;
    println!("wrote {} scenarios to {}", outputs.len(), scenario_path.display());
    Ok(())
}

fn cmd_evaluate(
    cfg: ConfigArgs,
    checkpoint: Option<PathBuf>,
    method: String,
    eval_corpus: PathBuf,
    out: PathBuf,
    force: bool,
) -> Result<(), CliError> {
    let (_, eval_set) = read_scenarios_file(&eval_corpus).map_err(io_err)?;
    std::fs::create_dir_all(&out).map_err(io_err)?;
    let text_path = out.join("report.txt");
    let json_path = out.join("report.jsonl");
    refuse_overwrite(&text_path, force)?;

    let report = match (method.as_str(), &checkpoint) {
        ("model", Some(path)) => {
            let (run, model) = load_model_from_checkpoint(path)?;
            let generator = ModelGenerator { model: &model, cfg: run.generate.clone() };
            evaluate_corpus(
                &generator,
                &eval_set,
                &run.metrics,
                run.model.dt,
                cfg.seed.unwrap_or(run.seed),
            )
        }
        ("model", None) => {
            return Err(CliError::Validation("--method model needs --checkpoint".into()))
        }
        ("random", _) => {
            let run = cfg.resolve()?;
            let generator = RandomBaseline { corpus: run.corpus.clone() };
            evaluate_corpus(&generator, &eval_set, &run.metrics, run.corpus.dt, run.seed)
        }
        ("replay", _) => {
            let run = cfg.resolve()?;
            evaluate_corpus(&ReplayOracle, &eval_set, &run.metrics, run.corpus.dt, run.seed)
        }
        (other, _) => {
            return Err(CliError::Validation(format!(
                "unknown method {other:?} (expected model, random, or replay)"
            )))
        }
    };

    std::fs::write(&text_path, report.to_text()).map_err(io_err)?;
    let mut lines: Vec<String> = report
        .per_scenario
        .iter()
        .map(|row| serde_json::to_string(row).unwrap())
        .collect();
    let mut summary = report.clone();
    summary.per_scenario.clear();
    lines.push(serde_json::to_string(&summary).unwrap());
    std::fs::write(&json_path, lines.join("\n") + "\n").map_err(io_err)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_render(input: PathBuf, index: usize, out: PathBuf, force: bool) -> Result<(), CliError> {
    let (_, scenarios) = read_scenarios_file(&input).map_err(io_err)?;
    let scenario = scenarios
        .get(index)
        .ok_or_else(|| CliError::Validation(format!("scenario index {index} out of range")))?;
    refuse_overwrite(&out, force)?;
    std::fs::write(&out, render_svg(scenario)).map_err(io_err)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus { cfg, out, force, count } => cmd_corpus(cfg, out, force, count),
        Command::Train { cfg, corpus, out, force, resume, steps } => {
            cmd_train(cfg, corpus, out, force, resume, steps)
        }
        Command::Generate {
            cfg,
            checkpoint,
            layout_from,
            index,
            agents,
            samples,
            keep_agents,
            out,
            force,
        } => cmd_generate(cfg, checkpoint, layout_from, index, agents, samples, keep_agents, out, force),
        Command::Evaluate { cfg, checkpoint, method, eval_corpus, out, force } => {
            cmd_evaluate(cfg, checkpoint, method, eval_corpus, out, force)
        }
        Command::Render { input, index, out, force } => cmd_render(input, index, out, force),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
