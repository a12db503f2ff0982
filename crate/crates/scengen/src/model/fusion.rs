//! Per-agent feature fusion: a bilinear k x k patch from the scenario
//! embedding concatenated with the road encoding, through a 1-layer MLP.

use super::encoder::ScenarioEmbedding;
use crate::config::ModelConfig;
use crate::geom::Vec2;
use crate::tensor::nn::{Linear, Module};
use crate::tensor::{Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

pub struct FeatureFusion {
    mlp: Linear,
    patch_k: usize,
    fov_extent: f64,
    out_dim: usize,
}

impl FeatureFusion {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let in_dim = cfg.patch_k * cfg.patch_k * cfg.embed_dim + cfg.road_dim;
        Self {
            mlp: Linear::new(&format!("{prefix}.mlp"), in_dim, cfg.fused_dim, rng),
            patch_k: cfg.patch_k,
            fov_extent: cfg.fov_extent,
            out_dim: cfg.fused_dim,
        }
    }

    /// Continuous embedding-grid coordinates of a scene position; cell
    /// centers land exactly on the integer lattice.
    pub fn grid_coords(&self, embedding_side: usize, origin: Vec2) -> (f64, f64) {
        let half = self.fov_extent / 2.0;
        let scale = embedding_side as f64 / self.fov_extent;
        let col = (origin.x + half) * scale - 0.5;
        let row = (half - origin.y) * scale - 0.5;
        (row, col)
    }

    /// Sample the k x k patch around `origin` and fuse with the road vector.
    pub fn forward(
        &self,
        tape: &Tape,
        embedding: &ScenarioEmbedding,
        origin: Vec2,
        road_vec: &Var,
    ) -> Var {
        let half = self.fov_extent / 2.0;
        assert!(
            origin.x.abs() <= half && origin.y.abs() <= half,
            "fusion origin ({}, {}) outside the FOV",
            origin.x,
            origin.y
        );
        let (row, col) = self.grid_coords(embedding.side, origin);
        let r = (self.patch_k / 2) as isize;
        let mut coords = Vec::with_capacity(self.patch_k * self.patch_k);
        for dr in -r..=r {
            for dc in -r..=r {
                coords.push((row + dr as f64, col + dc as f64));
            }
        }
        let patch = embedding.map.bilinear_sample(&coords);
        let flat = patch.reshape(&[1, self.patch_k * self.patch_k * embedding.dim]);
        let road = road_vec.reshape(&[1, road_vec.value().numel()]);
        let fused = Var::cat(&[&flat, &road], 1);
        self.mlp.forward(tape, &fused).relu().reshape(&[self.out_dim])
    }
}

impl Module<f64> for FeatureFusion {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.mlp.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.mlp.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::grid::GridSpec;
    use crate::tensor::nn::glorot;
    use rand::SeedableRng;

    #[test]
    fn lattice_origin_patch_matches_direct_slice() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fusion = FeatureFusion::new("f", &cfg, &mut rng);
        let tape = Tape::new();
        let map_t = glorot::<f64>(&mut rng, &[cfg.embed_dim, cfg.embed_side, cfg.embed_side], 4, 4);
        let emb = ScenarioEmbedding {
            map: tape.constant(map_t.clone()),
            side: cfg.embed_side,
            dim: cfg.embed_dim,
        };
        // Center of embedding cell (7, 9) in scene coordinates.
        let embed_grid = GridSpec::square(cfg.embed_side, cfg.fov_extent);
        let origin = embed_grid.cell_center(7, 9);
        let (row, col) = fusion.grid_coords(cfg.embed_side, origin);
        assert!((row - 7.0).abs() < 1e-9 && (col - 9.0).abs() < 1e-9);

        // The bilinear patch at an exact lattice point equals direct cells.
        let patch = emb.map.bilinear_sample(&[(7.0, 9.0)]).value();
        let side = cfg.embed_side;
        for ch in 0..cfg.embed_dim {
            let direct = map_t.data()[(ch * side + 7) * side + 9];
            assert_eq!(patch.data()[ch], direct);
        }

        let road = tape.constant(Tensor::zeros(&[cfg.road_dim]));
        let out = fusion.forward(&tape, &emb, origin, &road);
        assert_eq!(out.shape(), vec![cfg.fused_dim]);
    }

    #[test]
    #[should_panic(expected = "outside the FOV")]
    fn origin_outside_fov_rejected() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fusion = FeatureFusion::new("f", &cfg, &mut rng);
        let tape = Tape::new();
        let emb = ScenarioEmbedding {
            map: tape.constant(Tensor::zeros(&[cfg.embed_dim, cfg.embed_side, cfg.embed_side])),
            side: cfg.embed_side,
            dim: cfg.embed_dim,
        };
        let road = tape.constant(Tensor::zeros(&[cfg.road_dim]));
        let _ = fusion.forward(&tape, &emb, Vec2::new(100.0, 0.0), &road);
    }
}
