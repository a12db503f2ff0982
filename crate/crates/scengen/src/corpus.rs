//! Procedural ground-truth scenarios and training-example masking.
//!
//! The generator builds three road families (straight, arc, four-way
//! intersection with traffic lights), then places agents with rejection
//! sampling so no two agents' boxes overlap at any timestep: vehicles
//! follow lane centers at constant speed, cyclists ride lane edges,
//! pedestrians walk straight lines near crosswalks. Everything is a pure
//! function of `(config, seed)`.

use crate::config::CorpusConfig;
use crate::geom::{wrap_angle, Pose, PolylinePath, Vec2};
use crate::grid::{GridSpec, OccupancyGrid};
use crate::scenario::{
    Agent, AgentClass, InitialState, RoadKind, RoadPolyline, SceneContext, Scenario, TrafficLight,
    TrafficLightState, Trajectory,
};
use crate::util::{derive_rng, streams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("could not place a {class:?} without overlap after {attempts} attempts (seed {seed})")]
    PlacementInfeasible { class: AgentClass, attempts: usize, seed: u64 },
}

/// One drivable lane center with optional stop-line information
/// (arc length of the stop line along the path, and whether its light
/// is red).
struct LaneInfo {
    path: PolylinePath,
    stop: Option<(f64, bool)>,
}

struct RoadLayout {
    polylines: Vec<RoadPolyline>,
    lanes: Vec<LaneInfo>,
    crosswalks: Vec<PolylinePath>,
    lights: Vec<TrafficLight>,
}

fn line_points(origin: Vec2, dir: Vec2, from: f64, to: f64, step: f64) -> Vec<Vec2> {
    let mut pts = Vec::new();
    let mut s = from;
    let forward = to >= from;
    loop {
        pts.push(origin + dir.scaled(s));
        if forward {
            s += step;
            if s >= to {
                break;
            }
        } else {
            s -= step;
            if s <= to {
                break;
            }
        }
    }
    pts.push(origin + dir.scaled(to));
    pts
}

fn arc_points(center: Vec2, radius: f64, from: f64, to: f64, step_m: f64) -> Vec<Vec2> {
    let step = (step_m / radius).max(1e-3);
    let mut pts = Vec::new();
    let mut a = from;
    let forward = to >= from;
    loop {
        pts.push(center + Vec2::new(a.cos(), a.sin()).scaled(radius));
        if forward {
            a += step;
            if a >= to {
                break;
            }
        } else {
            a -= step;
            if a <= to {
                break;
            }
        }
    }
    pts.push(center + Vec2::new(to.cos(), to.sin()).scaled(radius));
    pts
}

fn build_straight(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> RoadLayout {
    let phi = rng.gen_range(0.0..std::f64::consts::PI);
    let origin = Vec2::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
    let n = rng.gen_range(cfg.lanes_per_direction.0..=cfg.lanes_per_direction.1);
    let w = cfg.lane_width;
    let u = Vec2::new(phi.cos(), phi.sin());
    let nrm = Vec2::new(-phi.sin(), phi.cos());
    let half_len = 90.0;

    let mut polylines = Vec::new();
    let mut lanes = Vec::new();
    for i in 0..n {
        let off = -(i as f64 + 0.5) * w;
        let pts = line_points(origin + nrm.scaled(off), u, -half_len, half_len, 6.0);
        polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts.clone() });
        lanes.push(LaneInfo { path: PolylinePath::new(pts), stop: None });
    }
    for i in 0..n {
        let off = (i as f64 + 0.5) * w;
        let pts = line_points(origin + nrm.scaled(off), u, half_len, -half_len, 6.0);
        polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts.clone() });
        lanes.push(LaneInfo { path: PolylinePath::new(pts), stop: None });
    }
    // Center line plus boundaries between same-direction lanes.
    let mut boundary_offsets = vec![0.0];
    for i in 1..n {
        boundary_offsets.push(i as f64 * w);
        boundary_offsets.push(-(i as f64) * w);
    }
    for off in boundary_offsets {
        polylines.push(RoadPolyline {
            kind: RoadKind::LaneBoundary,
            points: line_points(origin + nrm.scaled(off), u, -half_len, half_len, 9.0),
        });
    }
    for sign in [-1.0, 1.0] {
        polylines.push(RoadPolyline {
            kind: RoadKind::RoadBoundary,
            points: line_points(origin + nrm.scaled(sign * n as f64 * w), u, -half_len, half_len, 9.0),
        });
    }
    if rng.gen_bool(0.25) {
        let s = rng.gen_range(-40.0..40.0);
        let p = origin + u.scaled(s);
        polylines.push(RoadPolyline {
            kind: RoadKind::SpeedBump,
            points: vec![p + nrm.scaled(-(n as f64) * w), p + nrm.scaled(n as f64 * w)],
        });
    }
    if rng.gen_bool(0.2) {
        let s = rng.gen_range(-40.0..40.0);
        let p = origin + u.scaled(s) + nrm.scaled(n as f64 * w + 1.0);
        polylines.push(RoadPolyline {
            kind: RoadKind::StopSign,
            points: vec![p, p + u.scaled(0.5)],
        });
    }
    RoadLayout { polylines, lanes, crosswalks: Vec::new(), lights: Vec::new() }
}

fn build_arc(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> RoadLayout {
    let r = rng.gen_range(cfg.arc_radius.0..cfg.arc_radius.1);
    let anchor = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let psi = rng.gen_range(0.0..std::f64::consts::TAU);
    let center = anchor + Vec2::new(psi.cos(), psi.sin()).scaled(r);
    let n = rng.gen_range(cfg.lanes_per_direction.0..=cfg.lanes_per_direction.1);
    let w = cfg.lane_width;
    let span = (190.0 / r).min(1.6 * std::f64::consts::PI);
    let mid = psi + std::f64::consts::PI;
    let (a0, a1) = (mid - span / 2.0, mid + span / 2.0);

    let mut polylines = Vec::new();
    let mut lanes = Vec::new();
    // Counterclockwise travel on the outer lanes, clockwise on the inner.
    for i in 0..n {
        let rr = r + (i as f64 + 0.5) * w;
        let pts = arc_points(center, rr, a0, a1, 4.0);
        polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts.clone() });
        lanes.push(LaneInfo { path: PolylinePath::new(pts), stop: None });
    }
    for i in 0..n {
        let rr = r - (i as f64 + 0.5) * w;
        let pts = arc_points(center, rr, a1, a0, 4.0);
        polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts.clone() });
        lanes.push(LaneInfo { path: PolylinePath::new(pts), stop: None });
    }
    let mut boundary_radii = vec![r];
    for i in 1..n {
        boundary_radii.push(r + i as f64 * w);
        boundary_radii.push(r - i as f64 * w);
    }
    for rr in boundary_radii {
        polylines.push(RoadPolyline {
            kind: RoadKind::LaneBoundary,
            points: arc_points(center, rr, a0, a1, 6.0),
        });
    }
    for rr in [r + n as f64 * w, r - n as f64 * w] {
        polylines.push(RoadPolyline {
            kind: RoadKind::RoadBoundary,
            points: arc_points(center, rr, a0, a1, 6.0),
        });
    }
    RoadLayout { polylines, lanes, crosswalks: Vec::new(), lights: Vec::new() }
}

fn build_intersection(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> RoadLayout {
    let phi = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
    let center = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let n1 = rng.gen_range(cfg.lanes_per_direction.0..=cfg.lanes_per_direction.1);
    let n2 = rng.gen_range(cfg.lanes_per_direction.0..=cfg.lanes_per_direction.1);
    let w = cfg.lane_width;
    let half_len = 90.0;
    // Phase: road 1 green and road 2 red, or the reverse; occasionally a
    // yellow or unknown pair.
    let (state1, state2) = match rng.gen_range(0..10) {
        0..=3 => (TrafficLightState::Green, TrafficLightState::Red),
        4..=7 => (TrafficLightState::Red, TrafficLightState::Green),
        8 => (TrafficLightState::Yellow, TrafficLightState::Red),
        _ => (TrafficLightState::Unknown, TrafficLightState::Unknown),
    };

    let mut polylines = Vec::new();
    let mut lanes = Vec::new();
    let mut lights = Vec::new();
    let mut crosswalks = Vec::new();

    let roads = [
        (phi, n1, n2, state1),
        (phi + std::f64::consts::FRAC_PI_2, n2, n1, state2),
    ];
    for &(angle, n, n_cross, state) in &roads {
        let u = Vec2::new(angle.cos(), angle.sin());
        let nrm = Vec2::new(-angle.sin(), angle.cos());
        let cross_half = n_cross as f64 * w;
        let stop_dist = cross_half + 2.0;
        let stopped = state == TrafficLightState::Red || state == TrafficLightState::Yellow;
        for i in 0..n {
            let off = -(i as f64 + 0.5) * w;
            let pts = line_points(center + nrm.scaled(off), u, -half_len, half_len, 6.0);
            let path = PolylinePath::new(pts.clone());
            polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts });
            // Stop line sits `stop_dist` before the crossing along travel.
            let stop_s = half_len - stop_dist;
            let light_pos = path.sample(stop_s).0;
            lights.push(TrafficLight { position: light_pos, state });
            lanes.push(LaneInfo { path, stop: Some((stop_s, stopped)) });
        }
        for i in 0..n {
            let off = (i as f64 + 0.5) * w;
            let pts = line_points(center + nrm.scaled(off), u, half_len, -half_len, 6.0);
            let path = PolylinePath::new(pts.clone());
            polylines.push(RoadPolyline { kind: RoadKind::LaneCenter, points: pts });
            let stop_s = half_len - stop_dist;
            let light_pos = path.sample(stop_s).0;
            lights.push(TrafficLight { position: light_pos, state });
            lanes.push(LaneInfo { path, stop: Some((stop_s, stopped)) });
        }
        let mut boundary_offsets = vec![0.0];
        for i in 1..n {
            boundary_offsets.push(i as f64 * w);
            boundary_offsets.push(-(i as f64) * w);
        }
        for off in boundary_offsets {
            polylines.push(RoadPolyline {
                kind: RoadKind::LaneBoundary,
                points: line_points(center + nrm.scaled(off), u, -half_len, half_len, 9.0),
            });
        }
        for sign in [-1.0, 1.0] {
            polylines.push(RoadPolyline {
                kind: RoadKind::RoadBoundary,
                points: line_points(
                    center + nrm.scaled(sign * n as f64 * w),
                    u,
                    -half_len,
                    half_len,
                    9.0,
                ),
            });
        }
        // Crosswalks across this road, just outside the crossing box.
        let road_half = n as f64 * w;
        for sign in [-1.0, 1.0] {
            let at = center + u.scaled(sign * (cross_half + 1.2));
            let pts = vec![at + nrm.scaled(-road_half), at, at + nrm.scaled(road_half)];
            polylines.push(RoadPolyline { kind: RoadKind::Crosswalk, points: pts.clone() });
            crosswalks.push(PolylinePath::new(pts));
        }
    }

    RoadLayout { polylines, lanes, crosswalks, lights }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

/// All poses (initial and future) must stay inside the FOV with a margin.
fn poses_inside_fov(initial: Pose, future: &[Pose], fov_extent: f64, margin: f64) -> bool {
    let lim = fov_extent / 2.0 - margin;
    std::iter::once(&initial)
        .chain(future.iter())
        .all(|p| p.x.abs() < lim && p.y.abs() < lim)
}

/// True when the candidate overlaps any existing agent at any timestep.
fn conflicts(candidate: &Agent, placed: &[Agent], t_steps: usize) -> bool {
    for other in placed {
        for t in 0..=t_steps {
            if crate::geom::obb_overlap(&candidate.obb_at(t), &other.obb_at(t)) {
                return true;
            }
        }
    }
    false
}

fn lane_follow_trajectory(path: &PolylinePath, s0: f64, speed: f64, t_steps: usize, dt: f64) -> Vec<Pose> {
    (1..=t_steps)
        .map(|t| {
            let (p, tan) = path.sample(s0 + speed * dt * t as f64);
            Pose::new(p.x, p.y, tan.y.atan2(tan.x))
        })
        .collect()
}

fn straight_trajectory(start: Vec2, heading: f64, speed: f64, t_steps: usize, dt: f64) -> Vec<Pose> {
    let v = Vec2::new(heading.cos(), heading.sin()).scaled(speed);
    (1..=t_steps)
        .map(|t| {
            let p = start + v.scaled(dt * t as f64);
            Pose::new(p.x, p.y, heading)
        })
        .collect()
}

/// Generate one ground-truth scenario. Deterministic given `(config, seed)`.
pub fn generate_scenario(cfg: &CorpusConfig, seed: u64) -> Result<Scenario, CorpusError> {
    let mut rng = derive_rng(seed, streams::CORPUS_SCENARIO, 0);
    let (p_straight, p_arc, _) = cfg.road_mix;
    let total = cfg.road_mix.0 + cfg.road_mix.1 + cfg.road_mix.2;
    let pick: f64 = rng.gen_range(0.0..total.max(1e-9));
    let layout = if pick < p_straight {
        build_straight(cfg, &mut rng)
    } else if pick < p_straight + p_arc {
        build_arc(cfg, &mut rng)
    } else {
        build_intersection(cfg, &mut rng)
    };

    let half = cfg.fov_extent / 2.0;
    let lights: Vec<TrafficLight> = layout
        .lights
        .into_iter()
        .filter(|l| l.position.x.abs() < half && l.position.y.abs() < half)
        .collect();
    let context = SceneContext {
        polylines: layout.polylines,
        traffic_lights: lights,
        fov_extent: cfg.fov_extent,
    };

    let n_vehicles = rng.gen_range(cfg.vehicles.0..=cfg.vehicles.1);
    let n_cyclists = rng.gen_range(cfg.cyclists.0..=cfg.cyclists.1);
    let n_pedestrians = rng.gen_range(cfg.pedestrians.0..=cfg.pedestrians.1);

    let mut agents: Vec<Agent> = Vec::new();
    let margin = 1.0;

    let place = |class: AgentClass,
                     count: usize,
                     rng: &mut ChaCha8Rng,
                     agents: &mut Vec<Agent>|
     -> Result<(), CorpusError> {
        'each: for _ in 0..count {
            for _attempt in 0..cfg.max_placement_attempts {
                let candidate = match class {
                    AgentClass::Vehicle | AgentClass::Cyclist => {
                        if layout.lanes.is_empty() {
                            continue;
                        }
                        let lane = &layout.lanes[rng.gen_range(0..layout.lanes.len())];
                        let (speed_range, size) = if class == AgentClass::Vehicle {
                            (cfg.vehicle_speed, cfg.vehicle_size)
                        } else {
                            (cfg.cyclist_speed, cfg.cyclist_size)
                        };
                        // Cyclists ride the right lane edge.
                        let path;
                        let path_ref = if class == AgentClass::Cyclist {
                            path = lane.path.offset(-(cfg.lane_width / 2.0 - 0.6));
                            &path
                        } else {
                            &lane.path
                        };
                        let len = path_ref.length();
                        let mut speed = sample_range(rng, speed_range);
                        let mut s_hi = len - margin - speed * cfg.dt * cfg.t_steps as f64;
                        let mut s_lo = margin;
                        // Red light: queue before the stop line at rest, or
                        // cruise beyond the crossing.
                        if let Some((stop_s, true)) = lane.stop {
                            if rng.gen_bool(0.6) {
                                speed = 0.0;
                                s_hi = stop_s - 2.0;
                            } else {
                                s_lo = stop_s + 12.0;
                                s_hi = len - margin - speed * cfg.dt * cfg.t_steps as f64;
                            }
                        }
                        if s_hi <= s_lo {
                            continue;
                        }
                        let s0 = rng.gen_range(s_lo..s_hi);
                        let (p, tan) = path_ref.sample(s0);
                        let heading = tan.y.atan2(tan.x);
                        let width = sample_range(rng, (size.0, size.1));
                        let length = sample_range(rng, (size.2, size.3));
                        let future = if speed == 0.0 {
                            vec![Pose::new(p.x, p.y, heading); cfg.t_steps]
                        } else {
                            lane_follow_trajectory(path_ref, s0, speed, cfg.t_steps, cfg.dt)
                        };
                        Agent {
                            initial: InitialState {
                                x: p.x,
                                y: p.y,
                                width,
                                length,
                                heading: wrap_angle(heading),
                                speed,
                                class,
                            },
                            future: Trajectory { poses: future },
                        }
                    }
                    AgentClass::Pedestrian => {
                        let speed = sample_range(rng, cfg.pedestrian_speed);
                        let size = cfg.pedestrian_size;
                        let (start, mut heading) = if !layout.crosswalks.is_empty() {
                            let cw = &layout.crosswalks[rng.gen_range(0..layout.crosswalks.len())];
                            let s = rng.gen_range(0.0..cw.length());
                            let (p, tan) = cw.sample(s);
                            let jitter = Vec2::new(-tan.y, tan.x).scaled(rng.gen_range(-0.8..0.8));
                            (p + jitter, tan.y.atan2(tan.x))
                        } else {
                            // Walk along a road boundary, offset outward.
                            let boundaries: Vec<&RoadPolyline> = context
                                .polylines
                                .iter()
                                .filter(|p| p.kind == RoadKind::RoadBoundary)
                                .collect();
                            let b = boundaries[rng.gen_range(0..boundaries.len())];
                            let path = PolylinePath::new(b.points.clone());
                            let s = rng.gen_range(0.2 * path.length()..0.8 * path.length());
                            let (p, tan) = path.sample(s);
                            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                            (p + Vec2::new(-tan.y, tan.x).scaled(1.2 * side), tan.y.atan2(tan.x))
                        };
                        if rng.gen_bool(0.5) {
                            heading += std::f64::consts::PI;
                        }
                        let heading = wrap_angle(heading);
                        let width = sample_range(rng, (size.0, size.1));
                        let length = sample_range(rng, (size.2, size.3));
                        Agent {
                            initial: InitialState {
                                x: start.x,
                                y: start.y,
                                width,
                                length,
                                heading,
                                speed,
                                class,
                            },
                            future: Trajectory {
                                poses: straight_trajectory(start, heading, speed, cfg.t_steps, cfg.dt),
                            },
                        }
                    }
                };
                if !poses_inside_fov(
                    candidate.initial.pose(),
                    &candidate.future.poses,
                    cfg.fov_extent,
                    0.5,
                ) {
                    continue;
                }
                if conflicts(&candidate, agents, cfg.t_steps) {
                    continue;
                }
                agents.push(candidate);
                continue 'each;
            }
            return Err(CorpusError::PlacementInfeasible {
                class,
                attempts: cfg.max_placement_attempts,
                seed,
            });
        }
        Ok(())
    };

    place(AgentClass::Vehicle, n_vehicles, &mut rng, &mut agents)?;
    place(AgentClass::Cyclist, n_cyclists, &mut rng, &mut agents)?;
    place(AgentClass::Pedestrian, n_pedestrians, &mut rng, &mut agents)?;

    Ok(Scenario { id: format!("synth-{seed:016x}"), context, agents })
}

/// Generate `cfg.n_scenarios` scenarios with per-index derived seeds,
/// in parallel workers.
pub fn generate_corpus(cfg: &CorpusConfig, base_seed: u64) -> Result<Vec<Scenario>, CorpusError> {
    let pool = crate::util::make_pool();
    pool.install(|| {
        (0..cfg.n_scenarios)
            .into_par_iter()
            .map(|i| {
                use rand::RngCore;
                let seed = derive_rng(base_seed, streams::CORPUS_SCENARIO, i as u64 + 1).next_u64();
                generate_scenario(cfg, seed)
            })
            .collect()
    })
}

/// Masking parameters: the per-scenario keep probability and the seed for
/// the per-agent Bernoulli draws. `p_keep` is sampled uniformly from
/// [-0.3, 0.9] with negative values clipped to zero, so blank scenes are
/// seen often during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub p_keep: f64,
    pub rng_seed: u64,
}

impl MaskSpec {
    pub fn sample(rng: &mut ChaCha8Rng, rng_seed: u64) -> Self {
        Self { p_keep: sample_p_keep(rng), rng_seed }
    }
}

/// Clipped-uniform keep probability: P(0) = 0.25, mean 0.3375.
pub fn sample_p_keep(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-0.3..0.9f64).max(0.0)
}

/// A masked scenario: input agents are visible to the model, hidden agents
/// supply the labels for all three decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: SceneContext,
    pub input_agents: Vec<Agent>,
    pub hidden_agents: Vec<Agent>,
}

/// Split agents into input/hidden sets by independent Bernoulli(p_keep)
/// draws. Deterministic given the spec.
pub fn mask_scenario(scenario: &Scenario, spec: &MaskSpec) -> TrainingExample {
    let mut rng = derive_rng(spec.rng_seed, streams::MASKING, 0);
    let mut input_agents = Vec::new();
    let mut hidden_agents = Vec::new();
    for agent in &scenario.agents {
        if rng.gen_range(0.0..1.0f64) < spec.p_keep {
            input_agents.push(agent.clone());
        } else {
            hidden_agents.push(agent.clone());
        }
    }
    TrainingExample { context: scenario.context.clone(), input_agents, hidden_agents }
}

/// Binary per-class occupancy labels: a cell is 1 iff some hidden agent of
/// that class has its center in the cell. Input agents contribute nothing.
pub fn render_gt_occupancy(example: &TrainingExample, grid: &GridSpec) -> OccupancyGrid {
    let mut occ = OccupancyGrid::zeros(AgentClass::ALL.len(), grid.rows, grid.cols);
    for agent in &example.hidden_agents {
        let (row, col) = grid
            .grid_index(agent.initial.x, agent.initial.y)
            .expect("hidden agent center outside the FOV");
        occ.set(agent.initial.class.index(), row, col, 1.0);
    }
    occ
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use rand::SeedableRng;

    fn desk_corpus_cfg() -> CorpusConfig {
        RunConfig::desk(0).corpus
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = desk_corpus_cfg();
        let a = generate_scenario(&cfg, 41).unwrap();
        let b = generate_scenario(&cfg, 41).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_scenario(&cfg, 42).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn zero_density_yields_roads_only() {
        let mut cfg = desk_corpus_cfg();
        cfg.vehicles = (0, 0);
        cfg.pedestrians = (0, 0);
        cfg.cyclists = (0, 0);
        let s = generate_scenario(&cfg, 7).unwrap();
        assert!(s.agents.is_empty());
        assert!(!s.context.polylines.is_empty());
        s.validate(cfg.t_steps).unwrap();
    }

    #[test]
    fn scenarios_validate_and_are_collision_free_at_every_step() {
        let cfg = desk_corpus_cfg();
        for seed in 0..30 {
            let s = generate_scenario(&cfg, seed).unwrap();
            s.validate(cfg.t_steps).unwrap();
            for i in 0..s.agents.len() {
                for j in 0..i {
                    for t in 0..=cfg.t_steps {
                        assert!(
                            !crate::geom::obb_overlap(&s.agents[i].obb_at(t), &s.agents[j].obb_at(t)),
                            "seed {seed}: agents {i} and {j} overlap at t={t}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn vehicles_align_with_some_lane_tangent() {
        let cfg = desk_corpus_cfg();
        let s = generate_scenario(&cfg, 3).unwrap();
        let lanes: Vec<PolylinePath> = s
            .context
            .polylines
            .iter()
            .filter(|p| p.kind == RoadKind::LaneCenter)
            .map(|p| PolylinePath::new(p.points.clone()))
            .collect();
        for agent in s.agents.iter().filter(|a| a.initial.class == AgentClass::Vehicle) {
            let pos = agent.initial.position();
            // Closest lane-center sample should be tangent-aligned.
            let mut best = (f64::INFINITY, 0.0);
            for lane in &lanes {
                let mut step = 0.0;
                while step <= lane.length() {
                    let (p, tan) = lane.sample(step);
                    let d = p.distance(pos);
                    if d < best.0 {
                        best = (d, tan.y.atan2(tan.x));
                    }
                    step += 0.5;
                }
            }
            let diff = wrap_angle(agent.initial.heading - best.1).abs();
            assert!(diff < 0.2, "vehicle heading {} vs lane {}", agent.initial.heading, best.1);
        }
    }

    #[test]
    fn masking_partitions_agents() {
        let cfg = desk_corpus_cfg();
        let s = generate_scenario(&cfg, 11).unwrap();
        for seed in 0..50 {
            let spec = MaskSpec { p_keep: 0.5, rng_seed: seed };
            let ex = mask_scenario(&s, &spec);
            assert_eq!(ex.input_agents.len() + ex.hidden_agents.len(), s.agents.len());
            // Same split again: deterministic.
            let ex2 = mask_scenario(&s, &spec);
            assert_eq!(ex, ex2);
            // Every original agent lands in exactly one side, order kept.
            let mut merged: Vec<&Agent> = Vec::new();
            let (mut i, mut h) = (ex.input_agents.iter(), ex.hidden_agents.iter());
            let (mut ni, mut nh) = (i.next(), h.next());
            for orig in &s.agents {
                if ni == Some(orig) {
                    merged.push(orig);
                    ni = i.next();
                } else if nh == Some(orig) {
                    merged.push(orig);
                    nh = h.next();
                } else {
                    panic!("agent missing from both partitions");
                }
            }
            assert_eq!(merged.len(), s.agents.len());
        }
    }

    #[test]
    fn mask_extremes() {
        let cfg = desk_corpus_cfg();
        let s = generate_scenario(&cfg, 13).unwrap();
        let all_hidden = mask_scenario(&s, &MaskSpec { p_keep: 0.0, rng_seed: 1 });
        assert!(all_hidden.input_agents.is_empty());
        assert_eq!(all_hidden.hidden_agents.len(), s.agents.len());
        let all_kept = mask_scenario(&s, &MaskSpec { p_keep: 1.0, rng_seed: 1 });
        assert!(all_kept.hidden_agents.is_empty());
    }

    #[test]
    fn binomial_hidden_count_expectation() {
        // 10 agents, p_keep 0.5, 10k trials: mean hidden count 5.0 +/- 0.15.
        let cfg = desk_corpus_cfg();
        let mut s = generate_scenario(&cfg, 17).unwrap();
        let template = s.agents[0].clone();
        s.agents = vec![template; 10];
        let mut total_hidden = 0usize;
        for seed in 0..10_000u64 {
            let ex = mask_scenario(&s, &MaskSpec { p_keep: 0.5, rng_seed: seed });
            total_hidden += ex.hidden_agents.len();
        }
        let mean = total_hidden as f64 / 10_000.0;
        assert!((mean - 5.0).abs() < 0.15, "mean hidden {mean}");
    }

    #[test]
    fn p_keep_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let draws: Vec<f64> = (0..100_000).map(|_| sample_p_keep(&mut rng)).collect();
        let zeros = draws.iter().filter(|&&p| p == 0.0).count() as f64 / draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((zeros - 0.25).abs() < 0.01, "P(p_keep = 0) = {zeros}");
        assert!((mean - 0.3375).abs() < 0.01, "mean = {mean}");
        assert!(draws.iter().all(|&p| (0.0..=0.9).contains(&p)));
    }

    #[test]
    fn occupancy_labels() {
        let cfg = desk_corpus_cfg();
        let grid = GridSpec::square(96, cfg.fov_extent);
        let s = generate_scenario(&cfg, 19).unwrap();

        let blank = mask_scenario(&s, &MaskSpec { p_keep: 1.0, rng_seed: 0 });
        assert_eq!(render_gt_occupancy(&blank, &grid).sum(), 0.0);

        // One hidden vehicle at a known position.
        let mut one = blank.clone();
        let mut agent = s.agents[0].clone();
        agent.initial.x = 0.0;
        agent.initial.y = 0.0;
        agent.initial.class = AgentClass::Vehicle;
        one.hidden_agents = vec![agent.clone()];
        let occ = render_gt_occupancy(&one, &grid);
        assert_eq!(occ.sum(), 1.0);
        let (r, c) = grid.grid_index(0.0, 0.0).unwrap();
        assert_eq!(occ.get(0, r, c), 1.0);

        // Two hidden pedestrians in the same cell stay binary.
        let mut two = blank.clone();
        let mut ped = agent.clone();
        ped.initial.class = AgentClass::Pedestrian;
        let mut ped2 = ped.clone();
        ped2.initial.x = 0.1;
        two.hidden_agents = vec![ped, ped2];
        let occ = render_gt_occupancy(&two, &grid);
        assert_eq!(occ.sum(), 1.0);
        assert!(occ.is_binary());
    }

    #[test]
    fn corpus_generation_is_parallel_deterministic() {
        let mut cfg = desk_corpus_cfg();
        cfg.n_scenarios = 8;
        let a = generate_corpus(&cfg, 5).unwrap();
        let b = generate_corpus(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        // Distinct seeds yield distinct scenarios.
        assert_ne!(a[0], a[1]);
    }
}
