//! Occupancy decoder: dense embedding to per-class center probabilities.

use super::encoder::ScenarioEmbedding;
use crate::config::{upsample_factors, ModelConfig};
use crate::grid::OccupancyGrid;
use crate::tensor::nn::{glorot, Module, Param};
use crate::tensor::{binary_cross_entropy, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Upsample/conv stages from the embedding resolution to the raster
/// resolution, then a 1x1 conv to C channels and a per-cell sigmoid.
pub struct OccupancyDecoder {
    stages: Vec<(usize, Param, Param)>,
    head_w: Param,
    head_b: Param,
    classes: usize,
}

impl OccupancyDecoder {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let factors = upsample_factors(cfg.embed_side, cfg.occupancy_side)
            .expect("occupancy side unreachable from embedding side");
        let mut stages = Vec::new();
        let mut in_ch = cfg.embed_dim;
        for (i, &f) in factors.iter().enumerate() {
            let out_ch = if i == 0 { cfg.occ_channels } else { cfg.occ_channels / 2 };
            let out_ch = out_ch.max(4);
            stages.push((
                f,
                Param::new(
                    format!("{prefix}.s{i}.w"),
                    glorot(rng, &[out_ch, in_ch, 3, 3], in_ch * 9, out_ch * 9),
                ),
                Param::new(format!("{prefix}.s{i}.b"), Tensor::zeros(&[out_ch, 1, 1])),
            ));
            in_ch = out_ch;
        }
        Self {
            stages,
            head_w: Param::new(
                format!("{prefix}.head.w"),
                glorot(rng, &[cfg.classes, in_ch, 1, 1], in_ch, cfg.classes),
            ),
            head_b: Param::new(format!("{prefix}.head.b"), Tensor::zeros(&[cfg.classes, 1, 1])),
            classes: cfg.classes,
        }
    }

    /// Embedding -> [C, H, W] pre-sigmoid logits.
    pub fn forward_logits(&self, tape: &Tape, embedding: &ScenarioEmbedding) -> Var {
        let mut h = embedding.map.clone();
        for (factor, w, b) in &self.stages {
            h = h.upsample_nearest(*factor).conv2d(&w.var(tape), 1).add(&b.var(tape)).relu();
        }
        h.conv2d(&self.head_w.var(tape), 1).add(&self.head_b.var(tape))
    }

    /// Embedding -> [C, H, W] probabilities in [0, 1].
    pub fn forward(&self, tape: &Tape, embedding: &ScenarioEmbedding) -> Var {
        self.forward_logits(tape, embedding).sigmoid()
    }

    /// Per-cell binary cross-entropy in the numerically stable logits
    /// form: `relu(z) - z*y + ln(1 + exp(-|z|))`. Same loss as
    /// [`binary_cross_entropy`] after a sigmoid, but the gradient stays
    /// exact (`sigmoid(z) - y`) even for saturated cells.
    pub fn loss_from_logits(&self, logits: &Var, labels: &OccupancyGrid) -> Var {
        let target = Tensor::from_f64s(
            &[labels.classes, labels.rows, labels.cols],
            labels.values(),
        );
        let y = logits.tape().constant(target);
        let hinge = logits.relu().sub(&logits.mul(&y));
        hinge.add(&logits.abs().neg().softplus()).mean()
    }

    /// Per-cell binary cross-entropy on probabilities.
    pub fn loss(&self, predictions: &Var, labels: &OccupancyGrid) -> Var {
        let target = Tensor::from_f64s(
            &[labels.classes, labels.rows, labels.cols],
            labels.values(),
        );
        binary_cross_entropy(predictions, &target)
    }

    /// Extract prediction values into an [`OccupancyGrid`].
    pub fn to_grid(&self, predictions: &Var) -> OccupancyGrid {
        let v = predictions.value();
        let shape = v.shape().to_vec();
        assert_eq!(shape.len(), 3);
        assert_eq!(shape[0], self.classes);
        OccupancyGrid::from_values(shape[0], shape[1], shape[2], v.to_f64_vec())
    }
}

impl Module<f64> for OccupancyDecoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        for (_, w, b) in &self.stages {
            w.visit_params(f);
            b.visit_params(f);
        }
        self.head_w.visit_params(f);
        self.head_b.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        for (_, w, b) in &mut self.stages {
            w.visit_params_mut(f);
            b.visit_params_mut(f);
        }
        self.head_w.visit_params_mut(f);
        self.head_b.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use rand::SeedableRng;

    #[test]
    fn output_shape_and_range() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = OccupancyDecoder::new("occ", &cfg, &mut rng);
        let tape = Tape::new();
        let emb = ScenarioEmbedding {
            map: tape.constant(glorot(
                &mut rng,
                &[cfg.embed_dim, cfg.embed_side, cfg.embed_side],
                10,
                10,
            )),
            side: cfg.embed_side,
            dim: cfg.embed_dim,
        };
        let pred = dec.forward(&tape, &emb);
        assert_eq!(pred.shape(), vec![3, cfg.occupancy_side, cfg.occupancy_side]);
        assert!(pred.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let grid = dec.to_grid(&pred);
        assert_eq!(grid.rows, cfg.occupancy_side);
    }

    #[test]
    fn loss_on_zero_labels_with_tiny_predictions() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = OccupancyDecoder::new("occ", &cfg, &mut rng);
        let tape = Tape::new();
        let side = cfg.occupancy_side;
        // Saturated-low predictions against all-zero labels: loss ~ 0.
        let preds = tape.constant(Tensor::filled(&[3, side, side], 1e-9));
        let labels = OccupancyGrid::zeros(3, side, side);
        assert!(dec.loss(&preds, &labels).value().item() < 1e-6);
    }
}
