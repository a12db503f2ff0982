//! Unified traffic scenario generation on a desk-scale budget.
//!
//! `scengen` builds complete driving scenarios — road layout, agents with
//! initial states, and multi-second future trajectories — with a single
//! model. New agents are injected autoregressively: each injection is
//! conditioned on the road layout, the traffic lights, and every agent
//! already present, including the agents' full future trajectories.
//!
//! The crate is organized around the generation pipeline:
//!
//! - [`scenario`] / [`geom`] / [`grid`]: domain types and the deterministic
//!   geometry (oriented-box collision, box interior sampling, BEV rasters)
//!   shared by everything else.
//! - [`corpus`]: a procedural ground-truth scenario generator and the
//!   masking machinery that turns scenarios into training examples.
//! - [`tensor`]: a minimal reverse-mode autodiff engine over dense arrays —
//!   the numerical substrate for the encoders, decoders, and training.
//! - [`model`]: the shared scenario encoder (sparse points → pillars →
//!   dense embedding) and the three decoder heads (occupancy, initial-state
//!   attributes, trajectories) plus the agent-centric road encoder.
//! - [`generate`]: the inference loop that injects agents one at a time.
//! - [`train`]: the training loop with checkpointing and resume.
//! - [`metrics`]: MMD² two-sample metrics and static/dynamic collision
//!   rates, with the evaluation protocol and report aggregation.
//! - [`render`]: deterministic SVG rendering of scenarios.
//!
//! Start with the runnable examples (`cargo run --example corpus_quickstart`)
//! or the `scengen` binary (`scengen corpus|train|generate|evaluate|render`).

pub mod config;
pub mod corpus;
pub mod generate;
pub mod geom;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod model;
pub mod render;
pub mod scenario;
pub mod tensor;
pub mod train;
pub mod util;

pub use config::{Preset, RunConfig};
pub use scenario::{Agent, AgentClass, InitialState, RoadKind, RoadPolyline, SceneContext, Scenario, Trajectory};
