//! Shared scenario encoder: point pillars plus a conv/attention backbone
//! producing the dense scenario embedding.

use super::features::InputPointSet;
use crate::config::ModelConfig;
use crate::grid::GridSpec;
use crate::tensor::nn::{glorot, EncoderLayer, Linear, Mlp, Module, Param};
use crate::tensor::{Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Dense scenario embedding, stored channels-first: [D_d, H_d, W_d].
pub struct ScenarioEmbedding {
    pub map: Var,
    pub side: usize,
    pub dim: usize,
}

/// Per-pillar point MLP with max-pooling into a P x P feature map.
pub struct PillarEncoder {
    pub mlp: Mlp,
    grid: GridSpec,
    feat_dim: usize,
}

impl PillarEncoder {
    pub fn new(prefix: &str, cfg: &ModelConfig, in_width: usize, rng: &mut ChaCha8Rng) -> Self {
        // Input features plus the offset to the pillar center.
        let dims = [in_width + 2, cfg.pillar_feat, cfg.pillar_feat];
        Self {
            mlp: Mlp::new(prefix, &dims, true, rng),
            grid: GridSpec::square(cfg.pillars, cfg.fov_extent),
            feat_dim: cfg.pillar_feat,
        }
    }

    /// [points] -> [pillar_feat, P, P]; empty pillars hold the zero vector.
    pub fn forward(&self, tape: &Tape, points: &InputPointSet) -> Var {
        let p = self.grid.rows;
        let n = points.len();
        let width = points.width;
        let mut rows = Vec::with_capacity(n * (width + 2));
        let mut ids = Vec::with_capacity(n);
        for (i, pos) in points.positions.iter().enumerate() {
            let (r, c) = self
                .grid
                .grid_index(pos.x, pos.y)
                .expect("input point outside the FOV was not dropped");
            let center = self.grid.cell_center(r, c);
            rows.extend_from_slice(&points.features[i * width..(i + 1) * width]);
            rows.push(pos.x - center.x);
            rows.push(pos.y - center.y);
            ids.push(r * p + c);
        }
        let feats = tape.constant(Tensor::from_f64s(&[n, width + 2], &rows));
        let encoded = self.mlp.forward(tape, &feats);
        let pooled = encoded.scatter_max(&ids, p * p);
        pooled.transpose().reshape(&[self.feat_dim, p, p])
    }
}

impl Module<f64> for PillarEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.mlp.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.mlp.visit_params_mut(f);
    }
}

/// Two stride-2 conv blocks followed by one full self-attention block over
/// the flattened grid, projected to the embedding depth.
pub struct Backbone {
    conv1: Param,
    bias1: Param,
    conv2: Param,
    bias2: Param,
    pos: Param,
    attn: EncoderLayer,
    proj: Linear,
    cfg_side: usize,
    cfg_dim: usize,
}

impl Backbone {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let tokens = cfg.embed_side * cfg.embed_side;
        Self {
            conv1: Param::new(
                format!("{prefix}.conv1.w"),
                glorot(rng, &[cfg.backbone_c1, cfg.pillar_feat, 3, 3], cfg.pillar_feat * 9, cfg.backbone_c1 * 9),
            ),
            bias1: Param::new(format!("{prefix}.conv1.b"), Tensor::zeros(&[cfg.backbone_c1, 1, 1])),
            conv2: Param::new(
                format!("{prefix}.conv2.w"),
                glorot(rng, &[cfg.backbone_c2, cfg.backbone_c1, 3, 3], cfg.backbone_c1 * 9, cfg.backbone_c2 * 9),
            ),
            bias2: Param::new(format!("{prefix}.conv2.b"), Tensor::zeros(&[cfg.backbone_c2, 1, 1])),
            pos: Param::new(
                format!("{prefix}.pos"),
                glorot(rng, &[tokens, cfg.backbone_c2], tokens, cfg.backbone_c2),
            ),
            attn: EncoderLayer::new(
                &format!("{prefix}.attn"),
                cfg.backbone_c2,
                cfg.backbone_heads,
                cfg.backbone_c2 * 2,
                rng,
            ),
            proj: Linear::new(&format!("{prefix}.proj"), cfg.backbone_c2, cfg.embed_dim, rng),
            cfg_side: cfg.embed_side,
            cfg_dim: cfg.embed_dim,
        }
    }

    /// [pillar_feat, P, P] -> embedding [D_d, P/4, P/4]
    pub fn forward(&self, tape: &Tape, pillars: &Var) -> ScenarioEmbedding {
        let h1 = pillars.conv2d(&self.conv1.var(tape), 2).add(&self.bias1.var(tape)).relu();
        let h2 = h1.conv2d(&self.conv2.var(tape), 2).add(&self.bias2.var(tape)).relu();
        let side = self.cfg_side;
        let c2 = h2.shape()[0];
        let tokens = h2.reshape(&[c2, side * side]).transpose().add(&self.pos.var(tape));
        let attended = self.attn.forward(tape, &tokens, None);
        let projected = self.proj.forward(tape, &attended);
        let map = projected.transpose().reshape(&[self.cfg_dim, side, side]);
        ScenarioEmbedding { map, side, dim: self.cfg_dim }
    }
}

impl Module<f64> for Backbone {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.conv1.visit_params(f);
        self.bias1.visit_params(f);
        self.conv2.visit_params(f);
        self.bias2.visit_params(f);
        self.pos.visit_params(f);
        self.attn.visit_params(f);
        self.proj.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.conv1.visit_params_mut(f);
        self.bias1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bias2.visit_params_mut(f);
        self.pos.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.proj.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::geom::Vec2;
    use rand::SeedableRng;

    fn tiny_points(n: usize, width: usize) -> InputPointSet {
        let positions: Vec<Vec2> = (0..n).map(|i| Vec2::new(i as f64, -(i as f64))).collect();
        let features = (0..n * width).map(|i| (i % 7) as f64 * 0.1).collect();
        InputPointSet { positions, features, width }
    }

    #[test]
    fn empty_point_set_yields_zero_map() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = PillarEncoder::new("p", &cfg, 39, &mut rng);
        let tape = Tape::new();
        let out = enc.forward(&tape, &tiny_points(0, 39));
        assert_eq!(out.shape(), vec![cfg.pillar_feat, cfg.pillars, cfg.pillars]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pillar_output_is_point_order_invariant() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = PillarEncoder::new("p", &cfg, 10, &mut rng);
        let pts = tiny_points(6, 10);
        let mut reversed = pts.clone();
        reversed.positions.reverse();
        let w = pts.width;
        let mut rev_feats = Vec::new();
        for i in (0..6).rev() {
            rev_feats.extend_from_slice(&pts.features[i * w..(i + 1) * w]);
        }
        reversed.features = rev_feats;
        let tape = Tape::new();
        let a = enc.forward(&tape, &pts).value();
        let b = enc.forward(&tape, &reversed).value();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_points_do_not_change_pooling() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = PillarEncoder::new("p", &cfg, 10, &mut rng);
        let pts = tiny_points(5, 10);
        let mut doubled = pts.clone();
        doubled.positions.extend(pts.positions.iter().copied());
        doubled.features.extend(pts.features.iter().copied());
        let tape = Tape::new();
        assert_eq!(enc.forward(&tape, &pts).value(), enc.forward(&tape, &doubled).value());
    }

    #[test]
    fn backbone_shape_contract_and_finite_on_zero() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bb = Backbone::new("b", &cfg, &mut rng);
        let tape = Tape::new();
        let zeros = tape.constant(Tensor::zeros(&[cfg.pillar_feat, cfg.pillars, cfg.pillars]));
        let emb = bb.forward(&tape, &zeros);
        assert_eq!(emb.map.shape(), vec![cfg.embed_dim, cfg.embed_side, cfg.embed_side]);
        assert!(!emb.map.value().has_nan());
    }
}
