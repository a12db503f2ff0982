//! Trajectory decoder: K candidate trajectories of T Gaussian waypoints
//! each, produced by learned query tokens cross-attending to the fused
//! feature and the initial state.
//!
//! Waypoints live in the translated agent frame (no rotation); the initial
//! heading enters as a decoder input token instead.

use crate::config::ModelConfig;
use crate::geom::Vec2;
use crate::tensor::nn::{glorot, DecoderLayer, Linear, Module, Param};
use crate::tensor::{cross_entropy, gaussian_nll_2d, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Decoder output on the tape: per-candidate Gaussian waypoint parameters
/// in the agent frame, plus candidate logits.
pub struct TrajectoryOutput {
    /// Means, sigmas, correlation: each [K, T].
    pub mu_x: Var,
    pub mu_y: Var,
    pub sigma_x: Var,
    pub sigma_y: Var,
    pub rho: Var,
    pub logits: Var,
    pub probs: Var,
}

/// Plain-value candidate set for sampling: `waypoints[k][t] = (x, y, sx,
/// sy, rho)` in the agent frame.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub waypoints: Vec<Vec<(f64, f64, f64, f64, f64)>>,
    pub probs: Vec<f64>,
}

impl TrajectoryOutput {
    pub fn set(&self) -> TrajectorySet {
        let (mx, my) = (self.mu_x.value(), self.mu_y.value());
        let (sx, sy) = (self.sigma_x.value(), self.sigma_y.value());
        let r = self.rho.value();
        let (k, t) = (mx.shape()[0], mx.shape()[1]);
        let waypoints = (0..k)
            .map(|i| {
                (0..t)
                    .map(|j| {
                        let at = i * t + j;
                        (mx.data()[at], my.data()[at], sx.data()[at], sy.data()[at], r.data()[at])
                    })
                    .collect()
            })
            .collect();
        TrajectorySet { waypoints, probs: self.probs.value().to_f64_vec() }
    }
}

impl TrajectorySet {
    /// Most likely candidate (ties: lowest index).
    pub fn argmax_candidate(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

pub struct TrajectoryDecoder {
    queries: Param,
    fused_proj: Linear,
    init_proj: Linear,
    layers: Vec<DecoderLayer>,
    waypoint_head: Linear,
    logit_head: Linear,
    k: usize,
    t_steps: usize,
    half_fov: f64,
}

impl TrajectoryDecoder {
    pub fn new(prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.traj_dim;
        let layers = (0..cfg.traj_layers)
            .map(|i| DecoderLayer::new(&format!("{prefix}.l{i}"), d, cfg.traj_heads, cfg.traj_ffn, rng))
            .collect();
        Self {
            queries: Param::new(format!("{prefix}.queries"), glorot(rng, &[cfg.traj_k, d], d, d)),
            fused_proj: Linear::new(&format!("{prefix}.fused"), cfg.fused_dim, d, rng),
            init_proj: Linear::new(&format!("{prefix}.init"), 4, d, rng),
            layers,
            waypoint_head: Linear::new(&format!("{prefix}.wp"), d, cfg.t_steps * 5, rng),
            logit_head: Linear::new(&format!("{prefix}.logit"), d, 1, rng),
            k: cfg.traj_k,
            t_steps: cfg.t_steps,
            half_fov: cfg.fov_extent / 2.0,
        }
    }

    /// Decode K candidates conditioned on the fused feature and the agent's
    /// initial position and heading.
    pub fn forward(&self, tape: &Tape, fused: &Var, position: Vec2, heading: f64) -> TrajectoryOutput {
        let d_in = fused.value().numel();
        let fused_tok = self.fused_proj.forward(tape, &fused.reshape(&[1, d_in]));
        let init_feats = Tensor::from_f64s(
            &[1, 4],
            &[position.x / self.half_fov, position.y / self.half_fov, heading.cos(), heading.sin()],
        );
        let init_tok = self.init_proj.forward(tape, &tape.constant(init_feats));
        let context = Var::cat(&[&fused_tok, &init_tok], 0);

        let mut h = self.queries.var(tape);
        for layer in &self.layers {
            h = layer.forward(tape, &h, &context);
        }
        let wp = self.waypoint_head.forward(tape, &h).reshape(&[self.k, self.t_steps, 5]);
        let flat = |j: usize| wp.narrow(2, j, 1).reshape(&[self.k, self.t_steps]);
        let logits = self.logit_head.forward(tape, &h).reshape(&[self.k]);
        // Means carry a fixed gain so raw head outputs of O(1) can cover
        // the tens-of-meters displacement range.
        TrajectoryOutput {
            mu_x: flat(0).scale(10.0),
            mu_y: flat(1).scale(10.0),
            sigma_x: flat(2).softplus().add_scalar(1e-3),
            sigma_y: flat(3).softplus().add_scalar(1e-3),
            rho: flat(4).tanh().scale(0.99),
            probs: logits.softmax_last(),
            logits,
        }
    }
}

impl Module<f64> for TrajectoryDecoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        self.queries.visit_params(f);
        self.fused_proj.visit_params(f);
        self.init_proj.visit_params(f);
        for l in &self.layers {
            l.visit_params(f);
        }
        self.waypoint_head.visit_params(f);
        self.logit_head.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.queries.visit_params_mut(f);
        self.fused_proj.visit_params_mut(f);
        self.init_proj.visit_params_mut(f);
        for l in &mut self.layers {
            l.visit_params_mut(f);
        }
        self.waypoint_head.visit_params_mut(f);
        self.logit_head.visit_params_mut(f);
    }
}

/// Winner-take-all loss: pick the candidate with the smallest mean
/// Euclidean distance to the ground truth (ties: lowest index), then
/// cross-entropy on the candidate logits plus the mean Gaussian NLL of the
/// ground-truth positions under that candidate's waypoints.
///
/// `gt` is the ground-truth trajectory in the agent frame, length T.
pub fn trajectory_loss(output: &TrajectoryOutput, gt: &[(f64, f64)]) -> Var {
    let mx = output.mu_x.value();
    let my = output.mu_y.value();
    let (k, t) = (mx.shape()[0], mx.shape()[1]);
    assert_eq!(gt.len(), t, "trajectory loss needs {} ground-truth poses, got {}", t, gt.len());

    let mut best = (0usize, f64::INFINITY);
    for cand in 0..k {
        let mut total = 0.0;
        for (j, &(gx, gy)) in gt.iter().enumerate() {
            let dx = mx.data()[cand * t + j] - gx;
            let dy = my.data()[cand * t + j] - gy;
            total += (dx * dx + dy * dy).sqrt();
        }
        let ade = total / t as f64;
        if ade < best.1 {
            best = (cand, ade);
        }
    }
    let winner = best.0;

    let ce = cross_entropy(&output.logits, winner);
    let row = |v: &Var| v.narrow(0, winner, 1).reshape(&[t]);
    let nll = gaussian_nll_2d(
        &row(&output.mu_x),
        &row(&output.mu_y),
        &row(&output.sigma_x),
        &row(&output.sigma_y),
        &row(&output.rho),
        gt,
    )
    .mean();
    ce.add(&nll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::tensor::nn::glorot as ginit;
    use rand::SeedableRng;

    #[test]
    fn output_contract() {
        let cfg = RunConfig::desk(0).model;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = TrajectoryDecoder::new("traj", &cfg, &mut rng);
        let tape = Tape::new();
        let fused = tape.constant(ginit(&mut rng, &[cfg.fused_dim], 8, 8));
        let out = dec.forward(&tape, &fused, Vec2::new(3.0, -4.0), 0.7);
        assert_eq!(out.mu_x.shape(), vec![cfg.traj_k, cfg.t_steps]);
        assert_eq!(out.logits.shape(), vec![cfg.traj_k]);
        let probs = out.probs.value().to_f64_vec();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let set = out.set();
        for cand in &set.waypoints {
            for &(_, _, sx, sy, rho) in cand {
                assert!(sx > 0.0 && sy > 0.0 && rho.abs() < 1.0);
            }
        }
    }

    /// Fixed-value output for loss checks.
    fn synthetic(tape: &Tape, k: usize, t: usize, means: &[(f64, f64)], logits: &[f64]) -> TrajectoryOutput {
        assert_eq!(means.len(), k * t);
        let mx: Vec<f64> = means.iter().map(|m| m.0).collect();
        let my: Vec<f64> = means.iter().map(|m| m.1).collect();
        let ones = Tensor::filled(&[k, t], 1.0);
        let zeros = Tensor::zeros(&[k, t]);
        let logits_v = tape.constant(Tensor::from_f64s(&[k], logits));
        TrajectoryOutput {
            mu_x: tape.constant(Tensor::from_f64s(&[k, t], &mx)),
            mu_y: tape.constant(Tensor::from_f64s(&[k, t], &my)),
            sigma_x: tape.constant(ones.clone()),
            sigma_y: tape.constant(ones),
            rho: tape.constant(zeros),
            probs: logits_v.softmax_last(),
            logits: logits_v,
        }
    }

    #[test]
    fn single_candidate_at_truth_gives_ln_2pi() {
        let tape = Tape::new();
        let gt = vec![(1.0, 2.0), (2.0, 3.0), (3.0, 4.0)];
        let out = synthetic(&tape, 1, 3, &gt, &[0.0]);
        let loss = trajectory_loss(&out, &gt).value().item();
        let expect = (2.0 * std::f64::consts::PI).ln(); // CE of K=1 is 0
        assert!((loss - expect).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn duplicate_best_candidates_tie_to_lowest_index() {
        let tape = Tape::new();
        let gt = vec![(0.0, 0.0), (1.0, 0.0)];
        let same = [(0.0, 0.0), (1.0, 0.0)];
        let far = [(9.0, 9.0), (9.0, 9.0)];
        let mut means = Vec::new();
        means.extend_from_slice(&far);
        means.extend_from_slice(&same);
        means.extend_from_slice(&same); // duplicate of the best
        let out = synthetic(&tape, 3, 2, &means, &[0.3, 0.3, 0.3]);
        let loss_a = trajectory_loss(&out, &gt).value().item();
        // Swapping the duplicates changes nothing.
        let mut means_b = Vec::new();
        means_b.extend_from_slice(&far);
        means_b.extend_from_slice(&same);
        means_b.extend_from_slice(&same);
        let out_b = synthetic(&tape, 3, 2, &means_b, &[0.3, 0.3, 0.3]);
        let loss_b = trajectory_loss(&out_b, &gt).value().item();
        assert_eq!(loss_a, loss_b);
    }
}
