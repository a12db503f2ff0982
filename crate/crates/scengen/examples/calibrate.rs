// Scratch calibration: overfit quality and model-vs-baseline ordering.
use scengen::config::RunConfig;
use scengen::corpus::{generate_corpus, mask_scenario, sample_p_keep, MaskSpec};
use scengen::generate::{ModelGenerator, RandomBaseline};
use scengen::metrics::evaluate_corpus;
use scengen::model::build_input_points;
use scengen::tensor::Tape;
use scengen::train::TrainSession;
use scengen::util::{derive_rng, streams};
use std::time::Instant;

fn overfit() {
    let mut cfg = RunConfig::desk(7);
    cfg.corpus.n_scenarios = 1;
    cfg.train.fixed_mask_seed = Some(3);
    cfg.train.steps = 2000;
    cfg.train.lr = 3e-3;
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    println!("overfit scenario agents: {}", corpus[0].agents.len());
    let mut frng = derive_rng(3, streams::MASKING, 1);
    let p_keep = sample_p_keep(&mut frng);
    let example = mask_scenario(&corpus[0], &MaskSpec { p_keep, rng_seed: 3 });
    println!("p_keep {p_keep:.3} hidden {} input {}", example.hidden_agents.len(), example.input_agents.len());

    let mut session = TrainSession::new(&cfg);
    let t0 = Instant::now();
    for milestone in [100u64, 300, 600, 1000, 1500, 2000] {
        session.run(&corpus, milestone, None).unwrap();
        let rec = session.history.last().unwrap();
        let early: f64 = session.history[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        println!(
            "step {milestone}: total {:.4} occ {:.4} attr {:.4} traj {:.4} (early avg {:.1}, ratio {:.4}) elapsed {:?}",
            rec.total, rec.occupancy, rec.attributes, rec.trajectory, early, rec.total / early, t0.elapsed()
        );
        // occupancy argmax check
        let tape = Tape::new();
        let (emb, occv) = session.model.predict_occupancy(&tape, &example.context, &example.input_agents);
        let occ = session.model.occupancy.to_grid(&occv);
        let grid = session.model.occupancy_grid_spec();
        let labels = scengen::corpus::render_gt_occupancy(&example, &grid);
        let mut per_class_ok = true;
        for c in 0..3 {
            let hidden_c: Vec<_> = example.hidden_agents.iter().filter(|a| a.initial.class.index() == c).collect();
            if hidden_c.is_empty() { continue; }
            let (r, col) = occ.argmax_cell(c);
            let ok = labels.get(c, r, col) == 1.0;
            per_class_ok &= ok;
            print!("  class {c}: argmax ({r},{col}) label {} |", labels.get(c, r, col));
        }
        println!(" argmax_ok={per_class_ok}");
        // attribute + ADE checks
        let road_points = scengen::model::resample_road_points(&example.context, cfg.model.point_interval);
        let mut worst_attr: f64 = 0.0;
        let mut worst_ade: f64 = 0.0;
        for agent in &example.hidden_agents {
            let origin = agent.initial.position();
            let fused = session.model.fuse_at(&tape, &emb, &road_points, origin);
            let mix = session.model.attributes.forward(&tape, &fused).mixture();
            let best = mix.argmax_mode();
            let gt = scengen::model::gt_attributes(&agent.initial);
            for j in 0..5 {
                let err = (mix.values[best][j] - gt[j]).abs() / cfg.model.attr_scales[j];
                worst_attr = worst_attr.max(err);
            }
            let set = session.model.trajectory.forward(&tape, &fused, origin, agent.initial.heading).set();
            let k = set.argmax_candidate();
            let ade: f64 = set.waypoints[k].iter().zip(&agent.future.poses).map(|(w, p)| {
                let dx = w.0 + origin.x - p.x;
                let dy = w.1 + origin.y - p.y;
                (dx * dx + dy * dy).sqrt()
            }).sum::<f64>() / cfg.model.t_steps as f64;
            worst_ade = worst_ade.max(ade);
        }
        println!("  worst attr err {:.4} (need < 0.05), worst ADE {:.3} m (need < 0.5)", worst_attr, worst_ade);
        // encoder point count growth sanity (uses current agents)
        let _ = build_input_points(&example.context, &example.input_agents, true, &cfg.model);
    }
}

fn ordering() {
    let mut cfg = RunConfig::desk(11);
    cfg.corpus.n_scenarios = 200;
    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
    let mut eval_cfg = cfg.corpus.clone();
    eval_cfg.n_scenarios = 40;
    let eval_set = generate_corpus(&eval_cfg, cfg.seed + 1000).unwrap();
    println!("corpora ready {:?}", t0.elapsed());

    let mut session = TrainSession::new(&cfg);
    for milestone in [1000u64, 2000, 3000] {
        let t1 = Instant::now();
        session.run(&corpus, milestone, None).unwrap();
        println!("trained to {milestone} in {:?} (last loss {:.3})", t1.elapsed(), session.history.last().unwrap().total);
        let generator = ModelGenerator { model: &session.model, cfg: cfg.generate.clone() };
        let model_report = evaluate_corpus(&generator, &eval_set, &cfg.metrics, cfg.corpus.dt, 99);
        let baseline = RandomBaseline { corpus: cfg.corpus.clone() };
        let base_report = evaluate_corpus(&baseline, &eval_set, &cfg.metrics, cfg.corpus.dt, 99);
        println!("  model   SCR {:.3} DCR {:.3} fails {}", model_report.scr, model_report.dcr, model_report.scenarios_failed);
        println!("  base    SCR {:.3} DCR {:.3}", base_report.scr, base_report.dcr);
        for ((name, m), (_, b)) in model_report.initial_columns().iter().zip(base_report.initial_columns().iter()) {
            println!("  {name:<20} model {:.4} base {:.4} ok={}", m.mean, b.mean, m.mean < b.mean);
        }
        for ((name, m), (_, b)) in model_report.motion_columns().iter().zip(base_report.motion_columns().iter()) {
            println!("  {name:<20} model {:.4} base {:.4} ok={}", m.mean, b.mean, m.mean < b.mean);
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "overfit".into());
    match which.as_str() {
        "overfit" => overfit(),
        "ordering" => ordering(),
        _ => panic!("unknown mode"),
    }
}
