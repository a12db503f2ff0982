//! The unified scenario model: one shared encoder, three decoder heads.
//!
//! Training uses teacher forcing: hidden agents' ground-truth positions
//! and headings feed the fusion and trajectory stages, with one loss term
//! per hidden agent plus the dense occupancy loss.

pub mod attributes;
pub mod encoder;
pub mod features;
pub mod fusion;
pub mod occupancy;
pub mod roads;
pub mod trajectory;

pub use attributes::{attribute_loss, gt_attributes, AttributeDecoder, AttributeMixture, AttributeOutput};
pub use encoder::{Backbone, PillarEncoder, ScenarioEmbedding};
pub use features::{build_input_points, resample_road_points, FeatureLayout, InputPointSet};
pub use fusion::FeatureFusion;
pub use occupancy::OccupancyDecoder;
pub use roads::RoadEncoder;
pub use trajectory::{trajectory_loss, TrajectoryDecoder, TrajectoryOutput, TrajectorySet};

use crate::config::ModelConfig;
use crate::corpus::{render_gt_occupancy, TrainingExample};
use crate::geom::Vec2;
use crate::grid::GridSpec;
use crate::scenario::{Agent, SceneContext};
use crate::tensor::nn::{named_params, Module};
use crate::tensor::{Tape, Tensor, Var};
use crate::util::{derive_rng, streams};

pub struct ScenarioModel {
    pub cfg: ModelConfig,
    pub pillar: PillarEncoder,
    pub backbone: Backbone,
    pub occupancy: OccupancyDecoder,
    pub roads: RoadEncoder,
    pub fusion: FeatureFusion,
    pub attributes: AttributeDecoder,
    pub trajectory: TrajectoryDecoder,
}

/// Loss terms of one training example, kept separate for weighting.
pub struct TrainingLosses {
    pub occupancy: Var,
    pub attributes: Option<Var>,
    pub trajectory: Option<Var>,
    pub hidden_count: usize,
}

impl ScenarioModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = derive_rng(seed, streams::PARAM_INIT, 0);
        let in_width = FeatureLayout { t_steps: cfg.t_steps }.width();
        Self {
            cfg: cfg.clone(),
            pillar: PillarEncoder::new("enc.pillar", cfg, in_width, &mut rng),
            backbone: Backbone::new("enc.backbone", cfg, &mut rng),
            occupancy: OccupancyDecoder::new("dec.occ", cfg, &mut rng),
            roads: RoadEncoder::new("dec.roads", cfg, &mut rng),
            fusion: FeatureFusion::new("dec.fuse", cfg, &mut rng),
            attributes: AttributeDecoder::new("dec.attr", cfg, &mut rng),
            trajectory: TrajectoryDecoder::new("dec.traj", cfg, &mut rng),
        }
    }

    pub fn occupancy_grid_spec(&self) -> GridSpec {
        GridSpec::square(self.cfg.occupancy_side, self.cfg.fov_extent)
    }

    /// Encode the scene and visible agents into the dense embedding.
    pub fn encode(&self, tape: &Tape, context: &SceneContext, agents: &[Agent]) -> ScenarioEmbedding {
        let points = build_input_points(context, agents, self.cfg.trajectory_inputs, &self.cfg);
        let pillars = self.pillar.forward(tape, &points);
        self.backbone.forward(tape, &pillars)
    }

    /// One full teacher-forced pass over a masked example.
    pub fn training_losses(&self, tape: &Tape, example: &TrainingExample) -> TrainingLosses {
        let embedding = self.encode(tape, &example.context, &example.input_agents);
        let logits = self.occupancy.forward_logits(tape, &embedding);
        let labels = render_gt_occupancy(example, &self.occupancy_grid_spec());
        let occupancy = self.occupancy.loss_from_logits(&logits, &labels);

        let road_points = resample_road_points(&example.context, self.cfg.point_interval);
        let mut attr_total: Option<Var> = None;
        let mut traj_total: Option<Var> = None;
        for agent in &example.hidden_agents {
            let origin = agent.initial.position();
            let road_vec = self.roads.forward(tape, &road_points, origin);
            let fused = self.fusion.forward(tape, &embedding, origin, &road_vec);

            let attr_out = self.attributes.forward(tape, &fused);
            let a_loss = attribute_loss(&attr_out, &agent.initial, &self.cfg.attr_scales);
            attr_total = Some(match attr_total {
                None => a_loss,
                Some(acc) => acc.add(&a_loss),
            });

            let traj_out = self.trajectory.forward(tape, &fused, origin, agent.initial.heading);
            let gt_local: Vec<(f64, f64)> = agent
                .future
                .poses
                .iter()
                .map(|p| (p.x - origin.x, p.y - origin.y))
                .collect();
            let t_loss = trajectory_loss(&traj_out, &gt_local);
            traj_total = Some(match traj_total {
                None => t_loss,
                Some(acc) => acc.add(&t_loss),
            });
        }

        TrainingLosses {
            occupancy,
            attributes: attr_total,
            trajectory: traj_total,
            hidden_count: example.hidden_agents.len(),
        }
    }

    /// Occupancy prediction for the current partial scenario.
    pub fn predict_occupancy(
        &self,
        tape: &Tape,
        context: &SceneContext,
        agents: &[Agent],
    ) -> (ScenarioEmbedding, Var) {
        let embedding = self.encode(tape, context, agents);
        let predictions = self.occupancy.forward(tape, &embedding);
        (embedding, predictions)
    }

    /// Road encoding and fusion at a candidate origin, shared by both
    /// per-agent heads.
    pub fn fuse_at(
        &self,
        tape: &Tape,
        embedding: &ScenarioEmbedding,
        road_points: &[(Vec2, crate::scenario::RoadKind)],
        origin: Vec2,
    ) -> Var {
        let road_vec = self.roads.forward(tape, road_points, origin);
        self.fusion.forward(tape, embedding, origin, &road_vec)
    }

    pub fn params(&self) -> Vec<(String, Tensor<f64>)> {
        named_params(self)
    }

    /// Load parameters by name; every model parameter must be present with
    /// a matching shape.
    pub fn load_params(&mut self, entries: &[(String, Tensor<f64>)]) -> Result<(), String> {
        let lookup: std::collections::HashMap<&str, &Tensor<f64>> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut missing = Vec::new();
        self.visit_params_mut(&mut |name, tensor| match lookup.get(name) {
            Some(loaded) if loaded.shape() == tensor.shape() => *tensor = (*loaded).clone(),
            Some(loaded) => missing.push(format!(
                "{name}: shape {:?} vs checkpoint {:?}",
                tensor.shape(),
                loaded.shape()
            )),
            None => missing.push(format!("{name}: missing from checkpoint")),
        });
        if missing.is_empty() {
            Ok(())
        } else {
            Err(missing.join("; "))
        }
    }
}

impl Module<f64> for ScenarioModel {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.pillar.visit_params(f);
        self.backbone.visit_params(f);
        self.occupancy.visit_params(f);
        self.roads.visit_params(f);
        self.fusion.visit_params(f);
        self.attributes.visit_params(f);
        self.trajectory.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.pillar.visit_params_mut(f);
        self.backbone.visit_params_mut(f);
        self.occupancy.visit_params_mut(f);
        self.roads.visit_params_mut(f);
        self.fusion.visit_params_mut(f);
        self.attributes.visit_params_mut(f);
        self.trajectory.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::{generate_scenario, mask_scenario, MaskSpec};

    fn small_model() -> (RunConfig, ScenarioModel) {
        let cfg = RunConfig::desk(0);
        let model = ScenarioModel::new(&cfg.model, 1);
        (cfg, model)
    }

    #[test]
    fn whole_encoder_is_input_point_permutation_invariant() {
        let (cfg, model) = small_model();
        let scenario = generate_scenario(&cfg.corpus, 2).unwrap();
        let tape = Tape::new();
        let points = build_input_points(&scenario.context, &scenario.agents, true, &cfg.model);
        // Reverse point order by constructing reversed copies.
        let mut rev = points.clone();
        rev.positions.reverse();
        let w = points.width;
        let mut feats = Vec::with_capacity(points.features.len());
        for i in (0..points.len()).rev() {
            feats.extend_from_slice(&points.features[i * w..(i + 1) * w]);
        }
        rev.features = feats;
        let a = model.backbone.forward(&tape, &model.pillar.forward(&tape, &points));
        let b = model.backbone.forward(&tape, &model.pillar.forward(&tape, &rev));
        assert_eq!(a.map.value(), b.map.value());
    }

    #[test]
    fn encoder_sensitive_to_added_agent() {
        let (cfg, model) = small_model();
        let scenario = generate_scenario(&cfg.corpus, 3).unwrap();
        assert!(!scenario.agents.is_empty());
        let tape = Tape::new();
        let without = model.encode(&tape, &scenario.context, &[]);
        let with = model.encode(&tape, &scenario.context, &scenario.agents[..1]);
        let d: f64 = without
            .map
            .value()
            .data()
            .iter()
            .zip(with.map.value().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(d > 1e-9, "embedding should react to an added agent");
    }

    #[test]
    fn training_losses_cover_all_heads() {
        let (cfg, model) = small_model();
        let scenario = generate_scenario(&cfg.corpus, 4).unwrap();
        let example = mask_scenario(&scenario, &MaskSpec { p_keep: 0.4, rng_seed: 9 });
        assert!(!example.hidden_agents.is_empty());
        let tape = Tape::new();
        let losses = model.training_losses(&tape, &example);
        assert!(losses.occupancy.value().item() > 0.0);
        let attr = losses.attributes.expect("hidden agents present");
        let traj = losses.trajectory.expect("hidden agents present");
        assert!(attr.value().item().is_finite());
        assert!(traj.value().item().is_finite());
        // Gradients reach both the embedding path and the road encoder.
        let total = losses.occupancy.add(&attr).add(&traj);
        let grads = tape.backward(&total);
        let g_pillar = grads.get("enc.pillar.l0.w").expect("pillar grads");
        let g_road = grads.get("dec.roads.embed.w").expect("road grads");
        assert!(g_pillar.data().iter().any(|&v| v != 0.0));
        assert!(g_road.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_restores_params() {
        let (cfg, model) = small_model();
        let entries = model.params();
        let mut fresh = ScenarioModel::new(&cfg.model, 999);
        // Different init seed: parameters differ before loading.
        let differs = fresh
            .params()
            .iter()
            .zip(&entries)
            .any(|((_, a), (_, b))| a.data() != b.data());
        assert!(differs);
        fresh.load_params(&entries).unwrap();
        for ((na, a), (nb, b)) in fresh.params().iter().zip(&entries) {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
        }
    }
}
