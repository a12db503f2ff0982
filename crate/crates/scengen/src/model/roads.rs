//! Agent-centric road layout encoder: polyline points near a candidate
//! position, translated to the agent frame and encoded by a transformer.

use crate::config::ModelConfig;
use crate::geom::Vec2;
use crate::scenario::RoadKind;
use crate::tensor::nn::{EncoderLayer, Linear, Module, Param};
use crate::tensor::{Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub struct RoadEncoder {
    embed: Linear,
    layers: Vec<EncoderLayer>,
    /// Returned when no road point lies within the radius.
    empty: Param,
    radius: f64,
    max_points: usize,
    dim: usize,
}

impl RoadEncoder {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..cfg.road_layers)
            .map(|i| {
                EncoderLayer::new(&format!("{prefix}.l{i}"), cfg.road_dim, cfg.road_heads, cfg.road_ffn, rng)
            })
            .collect();
        Self {
            embed: Linear::new(&format!("{prefix}.embed"), 2 + RoadKind::ALL.len(), cfg.road_dim, rng),
            layers,
            empty: Param::new(format!("{prefix}.empty"), Tensor::zeros(&[cfg.road_dim])),
            radius: cfg.road_radius,
            max_points: cfg.road_max_points,
            dim: cfg.road_dim,
        }
    }

    /// Encode road points around `origin` into a single [D_r] vector.
    /// Selection is deterministic: nearest points first, ties by index.
    pub fn forward(&self, tape: &Tape, road_points: &[(Vec2, RoadKind)], origin: Vec2) -> Var {
        let mut nearby: Vec<(f64, usize)> = road_points
            .iter()
            .enumerate()
            .filter_map(|(i, (p, _))| {
                let d = p.distance(origin);
                (d <= self.radius).then_some((d, i))
            })
            .collect();
        if nearby.is_empty() {
            return self.empty.var(tape);
        }
        nearby.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nearby.truncate(self.max_points);

        let n = nearby.len();
        let width = 2 + RoadKind::ALL.len();
        let mut rows = Vec::with_capacity(n * width);
        for &(_, i) in &nearby {
            let (p, kind) = road_points[i];
            let local = p - origin;
            rows.push(local.x / self.radius);
            rows.push(local.y / self.radius);
            let mut one_hot = [0.0; 6];
            one_hot[kind.index()] = 1.0;
            rows.extend_from_slice(&one_hot);
        }
        let feats = tape.constant(Tensor::from_f64s(&[n, width], &rows));
        let mut h = self.embed.forward(tape, &feats);
        for layer in &self.layers {
            h = layer.forward(tape, &h, None);
        }
        h.mean_axis0().reshape(&[self.dim])
    }
}

impl Module<f64> for RoadEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.embed.visit_params(f);
        for l in &self.layers {
            l.visit_params(f);
        }
        self.empty.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.embed.visit_params_mut(f);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
        self.empty.visit_params_mut(f);
    }
}
