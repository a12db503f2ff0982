use scengen::config::RunConfig;
use scengen::corpus::{generate_scenario, mask_scenario, MaskSpec};
use scengen::model::{build_input_points, ScenarioModel};
use scengen::tensor::Tape;
use std::time::Instant;

fn main() {
    let cfg = RunConfig::desk(7);
    let scenario = generate_scenario(&cfg.corpus, 1).unwrap();
    let ex = mask_scenario(&scenario, &MaskSpec { p_keep: 0.4, rng_seed: 3 });
    println!("agents total {} input {} hidden {}", scenario.agents.len(), ex.input_agents.len(), ex.hidden_agents.len());
    let model = ScenarioModel::new(&cfg.model, 1);

    for _ in 0..3 {
        let tape = Tape::new();
        let t0 = Instant::now();
        let pts = build_input_points(&ex.context, &ex.input_agents, true, &cfg.model);
        let n_pts = pts.len();
        let t1 = Instant::now();
        let pil = model.pillar.forward(&tape, &pts);
        let t2 = Instant::now();
        let emb = model.backbone.forward(&tape, &pil);
        let t3 = Instant::now();
        let occ = model.occupancy.forward(&tape, &emb);
        let t4 = Instant::now();
        let labels = scengen::corpus::render_gt_occupancy(&ex, &model.occupancy_grid_spec());
        let occ_loss = model.occupancy.loss(&occ, &labels);
        let t5 = Instant::now();
        let road_points = scengen::model::resample_road_points(&ex.context, cfg.model.point_interval);
        let mut total = occ_loss;
        for agent in &ex.hidden_agents {
            let origin = agent.initial.position();
            let rv = model.roads.forward(&tape, &road_points, origin);
            let fused = model.fusion.forward(&tape, &emb, origin, &rv);
            let a = model.attributes.forward(&tape, &fused);
            let al = scengen::model::attribute_loss(&a, &agent.initial, &cfg.model.attr_scales);
            let tr = model.trajectory.forward(&tape, &fused, origin, agent.initial.heading);
            let gt: Vec<(f64,f64)> = agent.future.poses.iter().map(|p| (p.x-origin.x, p.y-origin.y)).collect();
            let tl = scengen::model::trajectory_loss(&tr, &gt);
            total = total.add(&al).add(&tl);
        }
        let t6 = Instant::now();
        let _g = tape.backward(&total);
        let t7 = Instant::now();
        println!(
            "pts {n_pts} build {:?} pillar {:?} backbone {:?} occ {:?} occloss {:?} agents {:?} backward {:?} TOTAL {:?} nodes {}",
            t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4, t6 - t5, t7 - t6, t7 - t0, tape.len()
        );
    }
}
