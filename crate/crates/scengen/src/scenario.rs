//! Domain types for traffic scenarios: scene context, agents, trajectories.
//!
//! All distances are meters, angles radians in (-pi, pi], speeds m/s, and
//! timesteps a fixed `dt` seconds per corpus.

use crate::geom::{self, Obb, Pose, Vec2};
use crate::grid::GridSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six road element categories carried by polylines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    LaneCenter,
    LaneBoundary,
    RoadBoundary,
    Crosswalk,
    SpeedBump,
    StopSign,
}

impl RoadKind {
    pub const ALL: [RoadKind; 6] = [
        RoadKind::LaneCenter,
        RoadKind::LaneBoundary,
        RoadKind::RoadBoundary,
        RoadKind::Crosswalk,
        RoadKind::SpeedBump,
        RoadKind::StopSign,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadPolyline {
    pub kind: RoadKind,
    pub points: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficLightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

impl TrafficLightState {
    pub const ALL: [TrafficLightState; 4] = [
        TrafficLightState::Red,
        TrafficLightState::Yellow,
        TrafficLightState::Green,
        TrafficLightState::Unknown,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub position: Vec2,
    pub state: TrafficLightState,
}

/// Scene context: road layout polylines, traffic lights, and the square
/// AV-centered field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub polylines: Vec<RoadPolyline>,
    pub traffic_lights: Vec<TrafficLight>,
    pub fov_extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Vehicle, AgentClass::Pedestrian, AgentClass::Cyclist];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }
}

/// Initial agent state: pose, box extents, and scalar speed. The velocity
/// vector is `speed * (cos heading, sin heading)` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub length: f64,
    pub heading: f64,
    pub speed: f64,
    pub class: AgentClass,
}

impl InitialState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin()).scaled(self.speed)
    }

    pub fn obb(&self) -> Obb {
        Obb::new(self.position(), self.width, self.length, self.heading)
    }
}

/// A future trajectory: exactly `T` poses at fixed `dt` spacing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub initial: InitialState,
    pub future: Trajectory,
}

impl Agent {
    /// Pose sequence over timesteps 0..=T (initial pose plus the future).
    pub fn pose_sequence(&self) -> Vec<Pose> {
        let mut seq = Vec::with_capacity(1 + self.future.len());
        seq.push(self.initial.pose());
        seq.extend(self.future.poses.iter().copied());
        seq
    }

    /// Oriented bounding box at timestep `t` (0 = initial state).
    pub fn obb_at(&self, t: usize) -> Obb {
        let pose = if t == 0 { self.initial.pose() } else { self.future.poses[t - 1] };
        Obb::new(pose.position(), self.initial.width, self.initial.length, pose.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub context: SceneContext,
    pub agents: Vec<Agent>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("polyline {index} has {len} points (need at least 2)")]
    ShortPolyline { index: usize, len: usize },
    #[error("polyline {index} has consecutive duplicate points at {at}")]
    DuplicatePoint { index: usize, at: usize },
    #[error("traffic light {index} lies outside the FOV")]
    LightOutsideFov { index: usize },
    #[error("agent {index} has non-positive extents {width} x {length}")]
    BadExtents { index: usize, width: f64, length: f64 },
    #[error("agent {index} heading {heading} outside (-pi, pi]")]
    BadHeading { index: usize, heading: f64 },
    #[error("agent {index} has negative speed {speed}")]
    NegativeSpeed { index: usize, speed: f64 },
    #[error("agent {index} initial position ({x}, {y}) outside the FOV")]
    AgentOutsideFov { index: usize, x: f64, y: f64 },
    #[error("agent {index} trajectory has {len} poses, expected {expected}")]
    WrongTrajectoryLength { index: usize, len: usize, expected: usize },
    #[error("no road_boundary polyline in context")]
    NoRoadBoundary,
}

/// Unsigned minimum distance from a point to any road-boundary segment.
pub fn distance_to_road_edge(point: Vec2, context: &SceneContext) -> Result<f64, ScenarioError> {
    let mut best = f64::INFINITY;
    let mut found = false;
    for pl in &context.polylines {
        if pl.kind != RoadKind::RoadBoundary {
            continue;
        }
        found = true;
        for w in pl.points.windows(2) {
            best = best.min(geom::point_segment_distance(point, w[0], w[1]));
        }
    }
    if !found {
        return Err(ScenarioError::NoRoadBoundary);
    }
    Ok(best)
}

impl Scenario {
    /// Check every structural invariant: polyline shape, FOV containment,
    /// positive extents, heading range, and complete `T`-step trajectories.
    pub fn validate(&self, expected_steps: usize) -> Result<(), ScenarioError> {
        // Containment uses the same half-open convention as the raster.
        let fov = GridSpec::square(2, self.context.fov_extent);
        for (i, pl) in self.context.polylines.iter().enumerate() {
            if pl.points.len() < 2 {
                return Err(ScenarioError::ShortPolyline { index: i, len: pl.points.len() });
            }
            for (j, w) in pl.points.windows(2).enumerate() {
                if w[0] == w[1] {
                    return Err(ScenarioError::DuplicatePoint { index: i, at: j });
                }
            }
        }
        let half = self.context.fov_extent / 2.0;
        for (i, tl) in self.context.traffic_lights.iter().enumerate() {
            if tl.position.x.abs() > half || tl.position.y.abs() > half {
                return Err(ScenarioError::LightOutsideFov { index: i });
            }
        }
        for (i, agent) in self.agents.iter().enumerate() {
            let s = &agent.initial;
            if s.width <= 0.0 || s.length <= 0.0 {
                return Err(ScenarioError::BadExtents { index: i, width: s.width, length: s.length });
            }
            if !(s.heading > -std::f64::consts::PI - 1e-12 && s.heading <= std::f64::consts::PI + 1e-12) {
                return Err(ScenarioError::BadHeading { index: i, heading: s.heading });
            }
            if s.speed < 0.0 {
                return Err(ScenarioError::NegativeSpeed { index: i, speed: s.speed });
            }
            if !fov.contains(s.x, s.y) {
                return Err(ScenarioError::AgentOutsideFov { index: i, x: s.x, y: s.y });
            }
            if agent.future.len() != expected_steps {
                return Err(ScenarioError::WrongTrajectoryLength {
                    index: i,
                    len: agent.future.len(),
                    expected: expected_steps,
                });
            }
        }
        Ok(())
    }
}
