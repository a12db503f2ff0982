//! Sparse input representation: typed feature points for the shared
//! scenario encoder.
//!
//! Road polylines are resampled at a fixed interval, traffic lights become
//! single typed points, and each visible agent contributes a grid of box
//! interior points at its initial pose — and, when trajectory inputs are
//! enabled, at every future pose with the matching timestep one-hot set.

use crate::config::ModelConfig;
use crate::geom::{sample_box_points, PolylinePath, Vec2};
use crate::scenario::{Agent, RoadKind, SceneContext};

/// Typed points plus their fixed-width feature rows.
#[derive(Debug, Clone)]
pub struct InputPointSet {
    pub positions: Vec<Vec2>,
    /// Row-major [n, width] feature matrix.
    pub features: Vec<f64>,
    pub width: usize,
}

impl InputPointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Feature row layout for a given trajectory length.
#[derive(Debug, Clone, Copy)]
pub struct FeatureLayout {
    pub t_steps: usize,
}

impl FeatureLayout {
    // slots 0..6    road kind one-hot
    // slot  6       traffic light
    // slot  7       agent box
    // slots 8..11   agent class one-hot
    // slots 11, 12  heading sin, cos
    // slot  13      speed (normalized)
    // slots 14..14+T+1  timestep one-hot (0 = initial state)
    // last 4        traffic light state one-hot
    pub fn width(&self) -> usize {
        14 + (self.t_steps + 1) + 4
    }

    pub fn timestep_slot(&self, t: usize) -> usize {
        debug_assert!(t <= self.t_steps);
        14 + t
    }

    pub fn light_state_slot(&self, state_index: usize) -> usize {
        14 + self.t_steps + 1 + state_index
    }
}

fn in_fov(p: Vec2, fov_extent: f64) -> bool {
    let half = fov_extent / 2.0;
    p.x >= -half && p.x < half && p.y >= -half && p.y < half
}

/// Road polylines resampled to typed points at a fixed interval; shared by
/// the scenario encoder and the agent-centric road encoder.
pub fn resample_road_points(context: &SceneContext, interval: f64) -> Vec<(Vec2, RoadKind)> {
    let mut out = Vec::new();
    for pl in &context.polylines {
        for p in PolylinePath::new(pl.points.clone()).resample(interval) {
            out.push((p, pl.kind));
        }
    }
    out
}

/// Build the encoder input point set from the scene context and the
/// currently visible agents.
pub fn build_input_points(
    context: &SceneContext,
    agents: &[Agent],
    include_trajectories: bool,
    cfg: &ModelConfig,
) -> InputPointSet {
    let layout = FeatureLayout { t_steps: cfg.t_steps };
    let width = layout.width();
    let road_points = resample_road_points(context, cfg.point_interval);

    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut push = |p: Vec2, row: Vec<f64>| {
        debug_assert_eq!(row.len(), width);
        if in_fov(p, cfg.fov_extent) {
            positions.push(p);
            features.extend(row);
        }
    };

    for (p, kind) in road_points {
        let mut row = vec![0.0; width];
        row[kind.index()] = 1.0;
        push(p, row);
    }

    for light in &context.traffic_lights {
        let mut row = vec![0.0; width];
        row[6] = 1.0;
        row[layout.light_state_slot(light.state.index())] = 1.0;
        push(light.position, row);
    }

    for agent in agents {
        let s = &agent.initial;
        let class_slot = 8 + s.class.index();
        let box_row = |heading: f64, speed: f64, t: usize| -> Vec<f64> {
            let mut row = vec![0.0; width];
            row[7] = 1.0;
            row[class_slot] = 1.0;
            row[11] = heading.sin();
            row[12] = heading.cos();
            row[13] = speed / cfg.speed_feat_norm;
            row[layout.timestep_slot(t)] = 1.0;
            row
        };

        for p in sample_box_points(s.pose(), s.width, s.length, cfg.box_point_spacing) {
            push(p, box_row(s.heading, s.speed, 0));
        }
        if include_trajectories {
            let mut prev = s.position();
            for (i, pose) in agent.future.poses.iter().enumerate() {
                let step_speed = pose.position().distance(prev) / cfg.dt;
                prev = pose.position();
                for p in sample_box_points(*pose, s.width, s.length, cfg.box_point_spacing) {
                    push(p, box_row(pose.heading, step_speed, i + 1));
                }
            }
        }
    }

    InputPointSet { positions, features, width }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::{generate_scenario, mask_scenario, MaskSpec};
    use crate::geom::Pose;
    use crate::scenario::*;

    fn desk() -> RunConfig {
        RunConfig::desk(0)
    }

    #[test]
    fn roads_only_scene_counts_match_resampling() {
        let cfg = desk();
        let ctx = SceneContext {
            polylines: vec![
                RoadPolyline {
                    kind: RoadKind::LaneCenter,
                    points: vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)],
                },
                RoadPolyline {
                    kind: RoadKind::RoadBoundary,
                    points: vec![Vec2::new(0.0, 3.0), Vec2::new(7.5, 3.0)],
                },
            ],
            traffic_lights: vec![],
            fov_extent: 120.0,
        };
        let pts = build_input_points(&ctx, &[], true, &cfg.model);
        // ceil(10) + ceil(7.5) = 18, +-1 per polyline from endpoint handling.
        let expect = 18i64;
        assert!((pts.len() as i64 - expect).abs() <= 2, "got {}", pts.len());
        // All rows are road-typed.
        for row in pts.features.chunks(pts.width) {
            assert_eq!(row[..6].iter().sum::<f64>(), 1.0);
            assert_eq!(row[6], 0.0);
            assert_eq!(row[7], 0.0);
        }
    }

    #[test]
    fn trajectory_inputs_multiply_agent_points() {
        let cfg = desk();
        let scenario = generate_scenario(&cfg.corpus, 21).unwrap();
        let ex = mask_scenario(&scenario, &MaskSpec { p_keep: 1.0, rng_seed: 0 });
        assert!(!ex.input_agents.is_empty());
        let roads_only = build_input_points(&ex.context, &[], true, &cfg.model).len();
        let one_agent = &ex.input_agents[..1];
        let without = build_input_points(&ex.context, one_agent, false, &cfg.model).len();
        let with = build_input_points(&ex.context, one_agent, true, &cfg.model).len();
        let agent_pts = (without - roads_only) as f64;
        let ratio = (with - roads_only) as f64 / agent_pts;
        let t = cfg.model.t_steps as f64;
        assert!(
            (ratio - (t + 1.0)).abs() < 2.0,
            "point growth ratio {ratio} should be near T+1 = {}",
            t + 1.0
        );
    }

    #[test]
    fn out_of_fov_points_dropped() {
        let cfg = desk();
        let ctx = SceneContext { polylines: vec![], traffic_lights: vec![], fov_extent: 120.0 };
        let agent = Agent {
            initial: InitialState {
                x: 200.0,
                y: 0.0,
                width: 1.0,
                length: 1.0,
                heading: 0.0,
                speed: 0.0,
                class: AgentClass::Vehicle,
            },
            future: Trajectory { poses: vec![Pose::new(200.0, 0.0, 0.0); cfg.model.t_steps] },
        };
        let pts = build_input_points(&ctx, &[agent], true, &cfg.model);
        assert!(pts.is_empty());
    }

    #[test]
    fn traffic_light_state_encoded() {
        let cfg = desk();
        let ctx = SceneContext {
            polylines: vec![],
            traffic_lights: vec![TrafficLight {
                position: Vec2::new(1.0, 1.0),
                state: TrafficLightState::Green,
            }],
            fov_extent: 120.0,
        };
        let pts = build_input_points(&ctx, &[], false, &cfg.model);
        assert_eq!(pts.len(), 1);
        let layout = FeatureLayout { t_steps: cfg.model.t_steps };
        let row = &pts.features[..pts.width];
        assert_eq!(row[6], 1.0);
        assert_eq!(row[layout.light_state_slot(TrafficLightState::Green.index())], 1.0);
    }
}
