//! Autoregressive scenario generation: inject fully-instantiated agents
//! one at a time, each conditioned on the scene context and on every
//! previously placed agent including its future trajectory.
//!
//! Each iteration runs the full chain: encode inputs, decode the occupancy
//! distribution, sample a cell, encode roads around it, fuse, sample
//! attributes (categorical over modes, then the mode means), decode
//! trajectories, and take the most likely one.

use crate::config::GenerateConfig;
use crate::geom::{wrap_angle, Pose, Vec2};
use crate::grid::{GridSpec, OccupancyGrid};
use crate::model::{resample_road_points, ScenarioModel};
use crate::scenario::{Agent, AgentClass, InitialState, SceneContext, Scenario, Trajectory};
use crate::tensor::Tape;
use crate::util::{derive_rng, streams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("no occupancy mass left after suppression (injected {injected} of {requested})")]
    NoMassLeft { injected: usize, requested: usize },
}

/// Request for one generated scenario.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub context: SceneContext,
    pub seed_agents: Vec<Agent>,
    pub n_agents: usize,
    pub rng_seed: u64,
    /// Optional per-class injection targets; when set, a class channel is
    /// suppressed once its target count is reached.
    pub per_class_counts: Option<[usize; 3]>,
}

/// One injection step, recorded for reproducibility audits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub class: AgentClass,
    pub cell: (usize, usize),
    pub occupancy_probability: f64,
    pub mode_index: usize,
    pub mode_probability: f64,
    pub trajectory_index: usize,
    pub trajectory_probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GenerationTrace {
    pub entries: Vec<TraceEntry>,
    /// Set when generation stopped before reaching the requested count.
    pub under_fill: Option<String>,
}

/// Sample `(class, row, col)` from the predicted occupancy after zeroing
/// cells near existing agents and applying the temperature.
pub fn sample_position(
    occupancy: &OccupancyGrid,
    existing: &[Agent],
    cfg: &GenerateConfig,
    grid: &GridSpec,
    class_budget: Option<&[usize; 3]>,
    rng: &mut ChaCha8Rng,
) -> Result<(AgentClass, usize, usize), GenerateError> {
    let inv_temp = 1.0 / cfg.occupancy_temperature.max(1e-6);
    let centers: Vec<Vec2> = existing.iter().map(|a| a.initial.position()).collect();
    let r2 = cfg.suppression_radius * cfg.suppression_radius;

    let mut weights = Vec::with_capacity(occupancy.classes * occupancy.rows * occupancy.cols);
    let mut total = 0.0;
    for class in 0..occupancy.classes {
        let exhausted = class_budget.map(|b| b[class] == 0).unwrap_or(false);
        for row in 0..occupancy.rows {
            for col in 0..occupancy.cols {
                let mut w = 0.0;
                if !exhausted {
                    let center = grid.cell_center(row, col);
                    let suppressed = centers.iter().any(|c| {
                        let d = *c - center;
                        d.dot(d) <= r2
                    });
                    if !suppressed {
                        let p = occupancy.get(class, row, col);
                        if p > 0.0 {
                            w = p.powf(inv_temp);
                        }
                    }
                }
                weights.push(w);
                total += w;
            }
        }
    }
    if total <= 0.0 {
        return Err(GenerateError::NoMassLeft { injected: 0, requested: 0 });
    }
    let draw = rng.gen_range(0.0..1.0f64) * total;
    let mut acc = 0.0;
    let mut chosen = weights.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            chosen = i;
            break;
        }
    }
    let cells = occupancy.rows * occupancy.cols;
    let class = chosen / cells;
    let row = (chosen % cells) / occupancy.cols;
    let col = chosen % occupancy.cols;
    Ok((AgentClass::ALL[class], row, col))
}

/// Derive per-waypoint headings from motion direction, carrying the
/// previous heading through near-zero displacements.
fn headings_from_motion(start: Vec2, heading0: f64, points: &[(f64, f64)]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(points.len());
    let mut prev = start;
    let mut heading = heading0;
    for &(x, y) in points {
        let p = Vec2::new(x, y);
        let d = p - prev;
        if d.norm() > 1e-3 {
            heading = wrap_angle(d.y.atan2(d.x));
        }
        poses.push(Pose::new(x, y, heading));
        prev = p;
    }
    poses
}

/// Run one full injection. Returns the new agent and its trace entry.
pub fn inject_next_agent(
    model: &ScenarioModel,
    context: &SceneContext,
    agents: &[Agent],
    cfg: &GenerateConfig,
    class_budget: Option<&[usize; 3]>,
    rng: &mut ChaCha8Rng,
) -> Result<(Agent, TraceEntry), GenerateError> {
    let tape = Tape::new();
    let (embedding, occ_var) = model.predict_occupancy(&tape, context, agents);
    let occupancy = model.occupancy.to_grid(&occ_var);
    let grid = model.occupancy_grid_spec();

    let (class, row, col) = sample_position(&occupancy, agents, cfg, &grid, class_budget, rng)?;
    let mut position = grid.cell_center(row, col);
    if cfg.subcell_jitter {
        let half = grid.cell_size() / 2.0;
        position.x += rng.gen_range(-half..half);
        position.y += rng.gen_range(-half..half);
    }

    let road_points = resample_road_points(context, model.cfg.point_interval);
    let fused = model.fuse_at(&tape, &embedding, &road_points, position);

    let mixture = model.attributes.forward(&tape, &fused).mixture();
    let mode_draw = rng.gen_range(0.0..1.0f64);
    let mut acc = 0.0;
    let mut mode = mixture.probs.len() - 1;
    for (i, &p) in mixture.probs.iter().enumerate() {
        acc += p;
        if mode_draw < acc {
            mode = i;
            break;
        }
    }
    let [width, length, cos_h, sin_h, speed] = mixture.values[mode];
    let heading = wrap_angle(sin_h.atan2(cos_h));

    let set = model.trajectory.forward(&tape, &fused, position, heading).set();
    let best = set.argmax_candidate();
    let scene_points: Vec<(f64, f64)> = set.waypoints[best]
        .iter()
        .map(|&(x, y, _, _, _)| (x + position.x, y + position.y))
        .collect();
    let poses = headings_from_motion(position, heading, &scene_points);

    let agent = Agent {
        initial: InitialState {
            x: position.x,
            y: position.y,
            width,
            length,
            heading,
            speed,
            class,
        },
        future: Trajectory { poses },
    };
    let trace = TraceEntry {
        iteration: agents.len(),
        class,
        cell: (row, col),
        occupancy_probability: occupancy.get(class.index(), row, col),
        mode_index: mode,
        mode_probability: mixture.probs[mode],
        trajectory_index: best,
        trajectory_probability: set.probs[best],
    };
    Ok((agent, trace))
}

/// Inject `request.n_agents` agents autoregressively. Under-fill (no
/// occupancy mass left) is reported in the trace, never hidden.
pub fn generate_scenario_autoregressive(
    model: &ScenarioModel,
    request: &GenerationRequest,
    cfg: &GenerateConfig,
) -> (Scenario, GenerationTrace) {
    let mut rng = derive_rng(request.rng_seed, streams::GENERATION, 0);
    let mut agents = request.seed_agents.clone();
    let mut trace = GenerationTrace::default();
    let mut budget = request.per_class_counts;

    for i in 0..request.n_agents {
        match inject_next_agent(model, &request.context, &agents, cfg, budget.as_ref(), &mut rng) {
            Ok((agent, entry)) => {
                if let Some(b) = budget.as_mut() {
                    b[agent.initial.class.index()] = b[agent.initial.class.index()].saturating_sub(1);
                }
                agents.push(agent);
                trace.entries.push(entry);
            }
            Err(GenerateError::NoMassLeft { .. }) => {
                trace.under_fill = Some(format!(
                    "stopped after {i} of {} agents: no occupancy mass left after suppression",
                    request.n_agents
                ));
                break;
            }
        }
    }

    let scenario = Scenario {
        id: format!("gen-{:016x}", request.rng_seed),
        context: request.context.clone(),
        agents,
    };
    (scenario, trace)
}

/// Anything that can regenerate agents for a stripped scenario; used by
/// the evaluation protocol.
pub trait ScenarioGenerator: Sync {
    fn name(&self) -> &str;
    fn generate(&self, reference: &Scenario, n_agents: usize, seed: u64) -> (Scenario, GenerationTrace);
}

/// The trained model behind the evaluation interface.
pub struct ModelGenerator<'a> {
    pub model: &'a ScenarioModel,
    pub cfg: GenerateConfig,
}

impl ScenarioGenerator for ModelGenerator<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn generate(&self, reference: &Scenario, n_agents: usize, seed: u64) -> (Scenario, GenerationTrace) {
        let request = GenerationRequest {
            context: reference.context.clone(),
            seed_agents: Vec::new(),
            n_agents,
            rng_seed: seed,
            per_class_counts: None,
        };
        generate_scenario_autoregressive(self.model, &request, &self.cfg)
    }
}

/// Naive baseline: uniform positions and headings in the FOV, uniform
/// class, sizes and speeds uniform over the corpus ranges, straight
/// constant-velocity trajectories.
pub struct RandomBaseline {
    pub corpus: crate::config::CorpusConfig,
}

impl ScenarioGenerator for RandomBaseline {
    fn name(&self) -> &str {
        "random-baseline"
    }

    fn generate(&self, reference: &Scenario, n_agents: usize, seed: u64) -> (Scenario, GenerationTrace) {
        let mut rng = derive_rng(seed, streams::BASELINE, 0);
        let cfg = &self.corpus;
        let half = reference.context.fov_extent / 2.0 - 1.0;
        let agents = (0..n_agents)
            .map(|_| {
                let class = AgentClass::ALL[rng.gen_range(0..3)];
                let (speed_range, size) = match class {
                    AgentClass::Vehicle => (cfg.vehicle_speed, cfg.vehicle_size),
                    AgentClass::Pedestrian => (cfg.pedestrian_speed, cfg.pedestrian_size),
                    AgentClass::Cyclist => (cfg.cyclist_speed, cfg.cyclist_size),
                };
                let position = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
                let heading = wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
                let speed = rng.gen_range(speed_range.0..speed_range.1);
                let width = rng.gen_range(size.0..size.1);
                let length = rng.gen_range(size.2..size.3);
                let v = Vec2::new(heading.cos(), heading.sin()).scaled(speed);
                let poses = (1..=cfg.t_steps)
                    .map(|t| {
                        let p = position + v.scaled(cfg.dt * t as f64);
                        Pose::new(p.x, p.y, heading)
                    })
                    .collect();
                Agent {
                    initial: InitialState {
                        x: position.x,
                        y: position.y,
                        width,
                        length,
                        heading,
                        speed,
                        class,
                    },
                    future: Trajectory { poses },
                }
            })
            .collect();
        let scenario = Scenario {
            id: format!("baseline-{seed:016x}"),
            context: reference.context.clone(),
            agents,
        };
        (scenario, GenerationTrace::default())
    }
}

/// Protocol oracle that replays the reference scenario unchanged.
pub struct ReplayOracle;

impl ScenarioGenerator for ReplayOracle {
    fn name(&self) -> &str {
        "replay-oracle"
    }

    fn generate(&self, reference: &Scenario, _n_agents: usize, _seed: u64) -> (Scenario, GenerationTrace) {
        (reference.clone(), GenerationTrace::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::generate_scenario;
    use rand::SeedableRng;

    fn desk_model() -> (RunConfig, ScenarioModel) {
        let cfg = RunConfig::desk(0);
        (cfg.clone(), ScenarioModel::new(&cfg.model, 5))
    }

    #[test]
    fn single_nonzero_cell_always_wins() {
        let cfg = RunConfig::desk(0);
        let grid = GridSpec::square(8, 120.0);
        let mut occ = OccupancyGrid::zeros(3, 8, 8);
        occ.set(1, 3, 5, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let got = sample_position(&occ, &[], &cfg.generate, &grid, None, &mut rng).unwrap();
            assert_eq!(got, (AgentClass::Pedestrian, 3, 5));
        }
    }

    #[test]
    fn uniform_grid_sampling_is_unbiased() {
        let cfg = RunConfig::desk(0);
        let side = 4;
        let grid = GridSpec::square(side, 120.0);
        let occ = OccupancyGrid::from_values(1, side, side, vec![0.5; side * side]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let mut counts = vec![0usize; side * side];
        for _ in 0..draws {
            let (_, r, c) = sample_position(&occ, &[], &cfg.generate, &grid, None, &mut rng).unwrap();
            counts[r * side + c] += 1;
        }
        // Five-sigma band around the uniform expectation.
        let p = 1.0 / (side * side) as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - mean).abs() < 5.0 * sigma,
                "cell count {c} outside 5 sigma of {mean}"
            );
        }
    }

    #[test]
    fn suppression_can_exhaust_all_mass() {
        let cfg = RunConfig::desk(0);
        let grid = GridSpec::square(8, 120.0);
        let mut occ = OccupancyGrid::zeros(3, 8, 8);
        occ.set(0, 2, 2, 1.0);
        let center = grid.cell_center(2, 2);
        let blocker = Agent {
            initial: InitialState {
                x: center.x,
                y: center.y,
                width: 1.0,
                length: 1.0,
                heading: 0.0,
                speed: 0.0,
                class: AgentClass::Vehicle,
            },
            future: Trajectory::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sample_position(&occ, &[blocker], &cfg.generate, &grid, None, &mut rng),
            Err(GenerateError::NoMassLeft { .. })
        ));
    }

    #[test]
    fn blank_scene_injection_contract() {
        let (cfg, model) = desk_model();
        let scenario = generate_scenario(&cfg.corpus, 8).unwrap();
        let request = GenerationRequest {
            context: scenario.context.clone(),
            seed_agents: Vec::new(),
            n_agents: 3,
            rng_seed: 11,
            per_class_counts: None,
        };
        let (out, trace) = generate_scenario_autoregressive(&model, &request, &cfg.generate);
        assert_eq!(out.agents.len(), 3);
        assert_eq!(trace.entries.len(), 3);
        assert!(trace.under_fill.is_none());
        let half = cfg.model.fov_extent / 2.0;
        for a in &out.agents {
            assert!(a.initial.x.abs() <= half && a.initial.y.abs() <= half);
            assert_eq!(a.future.len(), cfg.model.t_steps);
        }
        // n_agents = 0 returns the seeds unchanged.
        let empty = GenerationRequest { n_agents: 0, ..request.clone() };
        let (same, t) = generate_scenario_autoregressive(&model, &empty, &cfg.generate);
        assert!(same.agents.is_empty());
        assert!(t.entries.is_empty());
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let (cfg, model) = desk_model();
        let scenario = generate_scenario(&cfg.corpus, 9).unwrap();
        let request = GenerationRequest {
            context: scenario.context.clone(),
            seed_agents: Vec::new(),
            n_agents: 4,
            rng_seed: 21,
            per_class_counts: None,
        };
        let (a, _) = generate_scenario_autoregressive(&model, &request, &cfg.generate);
        let (b, _) = generate_scenario_autoregressive(&model, &request, &cfg.generate);
        assert_eq!(a, b);
        let other = GenerationRequest { rng_seed: 22, ..request };
        let (c, _) = generate_scenario_autoregressive(&model, &other, &cfg.generate);
        assert_ne!(a, c);
    }

    #[test]
    fn encoder_inputs_grow_monotonically_across_iterations() {
        let (cfg, model) = desk_model();
        let scenario = generate_scenario(&cfg.corpus, 10).unwrap();
        let request = GenerationRequest {
            context: scenario.context.clone(),
            seed_agents: Vec::new(),
            n_agents: 4,
            rng_seed: 31,
            per_class_counts: None,
        };
        let (out, trace) = generate_scenario_autoregressive(&model, &request, &cfg.generate);
        assert!(trace.under_fill.is_none());
        let mut last = 0usize;
        for k in 0..=out.agents.len() {
            let pts =
                crate::model::build_input_points(&out.context, &out.agents[..k], true, &cfg.model);
            if k > 0 {
                assert!(pts.len() > last, "iteration {k} did not add points");
            }
            last = pts.len();
        }
    }

    #[test]
    fn per_class_budget_respected() {
        let (cfg, model) = desk_model();
        let scenario = generate_scenario(&cfg.corpus, 12).unwrap();
        let request = GenerationRequest {
            context: scenario.context.clone(),
            seed_agents: Vec::new(),
            n_agents: 4,
            rng_seed: 41,
            per_class_counts: Some([4, 0, 0]),
        };
        let (out, _) = generate_scenario_autoregressive(&model, &request, &cfg.generate);
        assert!(out.agents.iter().all(|a| a.initial.class == AgentClass::Vehicle));
    }
}
