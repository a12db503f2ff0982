//! Attribute decoder: a 5-D mixture over the initial-state scalars
//! (width, length, cos heading, sin heading, speed) with M joint modes,
//! and its classification + regression loss.

use crate::config::ModelConfig;
use crate::scenario::InitialState;
use crate::tensor::nn::{Mlp, Module};
use crate::tensor::{cross_entropy, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Decoder output kept on the tape for training, with a plain-value view
/// for sampling.
pub struct AttributeOutput {
    /// Transformed mode values, [M, 5]: width, length, cos, sin, speed.
    pub values: Var,
    /// Mode logits [M] and probabilities [M].
    pub logits: Var,
    pub probs: Var,
}

/// Plain mixture values for inference-time sampling.
#[derive(Debug, Clone)]
pub struct AttributeMixture {
    pub values: Vec<[f64; 5]>,
    pub probs: Vec<f64>,
}

impl AttributeOutput {
    pub fn mixture(&self) -> AttributeMixture {
        let v = self.values.value();
        let m = v.shape()[0];
        let d = v.data();
        let values = (0..m)
            .map(|i| [d[i * 5], d[i * 5 + 1], d[i * 5 + 2], d[i * 5 + 3], d[i * 5 + 4]])
            .collect();
        AttributeMixture { values, probs: self.probs.value().to_f64_vec() }
    }
}

impl AttributeMixture {
    /// Index of the most likely mode (ties: lowest index).
    pub fn argmax_mode(&self) -> usize {
        argmax(&self.probs)
    }
}

pub struct AttributeDecoder {
    mlp: Mlp,
    modes: usize,
}

impl AttributeDecoder {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        // 4 hidden layers of the configured width, ReLU activations.
        let h = cfg.attr_hidden;
        let dims = [cfg.fused_dim, h, h, h, h, cfg.attr_modes * 6];
        Self { mlp: Mlp::new(prefix, &dims, false, rng), modes: cfg.attr_modes }
    }

    /// Fused feature [D] -> mixture with positive extents/speed (softplus)
    /// and a unit-normalized heading vector per mode.
    pub fn forward(&self, tape: &Tape, fused: &Var) -> AttributeOutput {
        let d = fused.value().numel();
        let raw = self.mlp.forward(tape, &fused.reshape(&[1, d])).reshape(&[self.modes, 6]);
        let w = raw.narrow(1, 0, 1).softplus();
        let l = raw.narrow(1, 1, 1).softplus();
        let cos_raw = raw.narrow(1, 2, 1);
        let sin_raw = raw.narrow(1, 3, 1);
        let norm = cos_raw
            .mul(&cos_raw)
            .add(&sin_raw.mul(&sin_raw))
            .add_scalar(1e-12)
            .sqrt();
        let cos = cos_raw.div(&norm);
        let sin = sin_raw.div(&norm);
        let speed = raw.narrow(1, 4, 1).softplus();
        let logits = raw.narrow(1, 5, 1).reshape(&[self.modes]);
        AttributeOutput {
            values: Var::cat(&[&w, &l, &cos, &sin, &speed], 1),
            probs: logits.softmax_last(),
            logits,
        }
    }
}

impl Module<f64> for AttributeDecoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.mlp.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.mlp.visit_params_mut(f);
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Ground-truth attribute vector in decoder order.
pub fn gt_attributes(state: &InitialState) -> [f64; 5] {
    [state.width, state.length, state.heading.cos(), state.heading.sin(), state.speed]
}

/// Per-attribute classification + regression loss.
///
/// For each of the five scaled attributes: cross-entropy pushes probability
/// onto the mode whose value is closest to the ground truth, while the L1
/// regression term penalizes the value of the currently most likely mode
/// (not the closest one). Ties break toward the lowest mode index.
pub fn attribute_loss(output: &AttributeOutput, gt: &InitialState, scales: &[f64; 5]) -> Var {
    let values = output.values.value();
    let m = values.shape()[0];
    let gt_vec = gt_attributes(gt);
    let probs = output.probs.value();
    let most_likely = argmax(probs.data());

    // Classification: one term per attribute, targeting that attribute's
    // closest mode.
    let mut loss: Option<Var> = None;
    for (j, &target_value) in gt_vec.iter().enumerate() {
        let mut closest = 0usize;
        let mut best = f64::INFINITY;
        for mode in 0..m {
            let diff = (values.data()[mode * 5 + j] - target_value).abs() / scales[j];
            if diff < best {
                best = diff;
                closest = mode;
            }
        }
        let ce = cross_entropy(&output.logits, closest);
        loss = Some(match loss {
            None => ce,
            Some(acc) => acc.add(&ce),
        });
    }

    // Regression: L1 between the ground truth and the most likely mode's
    // values, in scaled units.
    let row = output.values.narrow(0, most_likely, 1).reshape(&[5]);
    let tape = output.values.tape();
    let gt_t = tape.constant(Tensor::from_f64s(&[5], &gt_vec));
    let inv_scales: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
    let inv = tape.constant(Tensor::from_f64s(&[5], &inv_scales));
    let reg = row.sub(&gt_t).mul(&inv).abs().sum();

    loss.unwrap().add(&reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::scenario::AgentClass;
    use crate::tensor::nn::glorot;
    use rand::SeedableRng;

    fn decoder_and_fused() -> (AttributeDecoder, Tape, Var) {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = AttributeDecoder::new("attr", &cfg, &mut rng);
        let tape = Tape::new();
        let fused = tape.constant(glorot(&mut rng, &[cfg.fused_dim], 8, 8));
        (dec, tape, fused)
    }

    #[test]
    fn probabilities_sum_to_one_and_heading_unit_norm() {
        let (dec, tape, fused) = decoder_and_fused();
        let out = dec.forward(&tape, &fused);
        let probs = out.probs.value().to_f64_vec();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mixture = out.mixture();
        for mode in &mixture.values {
            let norm = (mode[2] * mode[2] + mode[3] * mode[3]).sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
            assert!(mode[0] > 0.0 && mode[1] > 0.0 && mode[4] >= 0.0);
        }
    }

    /// Build an output whose mode values and logits are fixed constants.
    fn synthetic_output(tape: &Tape, values: &[[f64; 5]], logits: &[f64]) -> AttributeOutput {
        let flat: Vec<f64> = values.iter().flatten().copied().collect();
        let values = tape.constant(Tensor::from_f64s(&[values.len(), 5], &flat));
        let logits_v = tape.constant(Tensor::from_f64s(&[logits.len()], logits));
        AttributeOutput { values, probs: logits_v.softmax_last(), logits: logits_v }
    }

    fn gt_state() -> InitialState {
        InitialState {
            x: 0.0,
            y: 0.0,
            width: 2.0,
            length: 4.5,
            heading: 0.0,
            speed: 5.0,
            class: AgentClass::Vehicle,
        }
    }

    #[test]
    fn exact_confident_mode_gives_near_zero_loss() {
        let tape = Tape::new();
        let gt = gt_state();
        let exact = [2.0, 4.5, 1.0, 0.0, 5.0];
        let other = [1.0, 1.0, 0.0, 1.0, 1.0];
        let out = synthetic_output(&tape, &[exact, other], &[50.0, 0.0]);
        let loss = attribute_loss(&out, &gt, &[5.0, 5.0, 1.0, 1.0, 15.0]);
        assert!(loss.value().item() < 1e-9, "loss = {}", loss.value().item());
    }

    #[test]
    fn regression_term_uses_most_likely_mode_not_closest() {
        let tape = Tape::new();
        let gt = gt_state();
        // Mode 0 is closest to the ground truth on every attribute, but
        // mode 1 is the most likely one.
        let closest = [2.0, 4.5, 1.0, 0.0, 5.0];
        let likely = [3.0, 6.0, 0.0, 1.0, 8.0];
        let out = synthetic_output(&tape, &[closest, likely], &[0.0, 10.0]);
        let scales = [5.0, 5.0, 1.0, 1.0, 15.0];
        let loss = attribute_loss(&out, &gt, &scales).value().item();

        // Expected regression term: |gt - likely| scaled.
        let expected_reg: f64 = [(2.0 - 3.0f64) / 5.0, (4.5 - 6.0) / 5.0, 1.0, -1.0, (5.0 - 8.0) / 15.0]
            .iter()
            .map(|d| d.abs())
            .sum();
        // Classification: every attribute targets mode 0, which has
        // probability ~ softmax([0, 10])[0].
        let ce_one = -(f64::exp(0.0) / (f64::exp(0.0) + f64::exp(10.0))).ln();
        let expected = expected_reg + 5.0 * ce_one;
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs expected {expected}");
    }

    #[test]
    fn classification_targets_per_attribute_closest_mode() {
        let tape = Tape::new();
        let gt = gt_state();
        // Mode 0 closest in width; mode 1 closest in speed.
        let a = [2.0, 10.0, -1.0, 0.0, 50.0];
        let b = [9.0, 10.0, -1.0, 0.0, 5.0];
        let out = synthetic_output(&tape, &[a, b], &[0.0, 0.0]);
        let loss = attribute_loss(&out, &gt, &[5.0, 5.0, 1.0, 1.0, 15.0]).value().item();
        // Uniform probabilities: each CE term is ln 2 regardless of target,
        // so the loss decomposes; this asserts the code runs both targets.
        let ce = (2.0f64).ln();
        assert!(loss > 5.0 * ce - 1e-9);
    }
}
