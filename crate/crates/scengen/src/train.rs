//! Training loop: per-step masking, gradient accumulation, Adam updates,
//! checkpointing, and exact resume.
//!
//! Every random decision at step `n` comes from an RNG derived from
//! `(seed, TRAIN_STEP, n)`, so a resumed run replays the identical stream
//! without serializing RNG state. In single-thread f64 mode two runs (or
//! a split run) produce bitwise-identical parameters.

use crate::config::RunConfig;
use crate::corpus::{mask_scenario, sample_p_keep, MaskSpec, TrainingExample};
use crate::model::ScenarioModel;
use crate::scenario::Scenario;
use crate::tensor::nn::Module;
use crate::tensor::{
    save_checkpoint, Adam, AdamConfig, Checkpoint, CheckpointError, GradMap, Tape, Tensor,
};
use crate::util::{derive_rng, streams, worker_threads};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step} on example {scenario_id}")]
    NanLoss { step: u64, scenario_id: String },
    #[error("checkpoint failure: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
}

/// One logged step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub occupancy: f64,
    pub attributes: f64,
    pub trajectory: f64,
    pub hidden: usize,
    pub skipped: bool,
}

/// Checkpoint metadata serialized into the file header.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainMeta {
    step: u64,
    config: serde_json::Value,
}

pub struct TrainSession {
    pub cfg: RunConfig,
    pub model: ScenarioModel,
    opt: Adam<f64>,
    pub step: u64,
    pub history: Vec<LossRecord>,
}

impl TrainSession {
    pub fn new(cfg: &RunConfig) -> Self {
        let model = ScenarioModel::new(&cfg.model, cfg.seed);
        let opt = Adam::new(AdamConfig {
            lr: cfg.train.lr,
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            eps: cfg.train.adam_eps,
        });
        Self { cfg: cfg.clone(), model, opt, step: 0, history: Vec::new() }
    }

    /// Restore a session from a checkpoint written by [`TrainSession::save`].
    /// The provided config must match the checkpointed one exactly.
    pub fn from_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Self, TrainError> {
        let ckpt = crate::tensor::load_checkpoint::<f64>(path)?;
        let meta: TrainMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| TrainError::Resume(format!("bad checkpoint meta: {e}")))?;
        if meta.config != cfg.to_json() {
            return Err(TrainError::Resume(
                "checkpoint was written with a different config".into(),
            ));
        }
        let mut session = Self::new(cfg);
        session.step = meta.step;

        let params: Vec<(String, Tensor<f64>)> = ckpt
            .entries
            .iter()
            .filter(|(n, _)| !n.starts_with("adam."))
            .cloned()
            .collect();
        session
            .model
            .load_params(&params)
            .map_err(TrainError::Resume)?;

        let mut adam_entries = Vec::new();
        for (name, m) in ckpt.entries.iter().filter(|(n, _)| n.starts_with("adam.m.")) {
            let base = name.trim_start_matches("adam.m.").to_string();
            let v = ckpt
                .get(&format!("adam.v.{base}"))
                .ok_or_else(|| TrainError::Resume(format!("missing adam.v.{base}")))?;
            adam_entries.push((base, m.clone(), v.clone()));
        }
        session.opt = Adam::restore(
            AdamConfig {
                lr: cfg.train.lr,
                beta1: cfg.train.beta1,
                beta2: cfg.train.beta2,
                eps: cfg.train.adam_eps,
            },
            meta.step,
            adam_entries,
        );
        Ok(session)
    }

    /// Write parameters, optimizer state, and the full config.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let meta = TrainMeta { step: self.step, config: self.cfg.to_json() };
        let mut entries = self.model.params();
        for (name, m, v) in self.opt.state_entries() {
            entries.push((format!("adam.m.{name}"), m));
            entries.push((format!("adam.v.{name}"), v));
        }
        let ckpt = Checkpoint { meta: serde_json::to_string(&meta).unwrap(), entries };
        save_checkpoint(path, &ckpt)?;
        Ok(())
    }

    /// Draw the batch of masked examples for a step.
    fn draw_batch(&self, corpus: &[Scenario], step: u64) -> Vec<(String, TrainingExample)> {
        let mut rng = derive_rng(self.cfg.seed, streams::TRAIN_STEP, step);
        let batch = self.cfg.train.batch_scenarios.max(1);
        (0..batch)
            .map(|_| {
                let (scenario, spec) = match self.cfg.train.fixed_mask_seed {
                    Some(fixed) => {
                        let mut frng = derive_rng(fixed, streams::MASKING, 1);
                        let p_keep = sample_p_keep(&mut frng);
                        (&corpus[0], MaskSpec { p_keep, rng_seed: fixed })
                    }
                    None => {
                        let idx = rng.gen_range(0..corpus.len());
                        let p_keep = sample_p_keep(&mut rng);
                        let mask_seed = rng.gen::<u64>();
                        (&corpus[idx], MaskSpec { p_keep, rng_seed: mask_seed })
                    }
                };
                (scenario.id.clone(), mask_scenario(scenario, &spec))
            })
            .collect()
    }

    /// Loss and gradients for one example; `None` when the example has no
    /// hidden agents (skipped per the masking protocol).
    fn example_pass(&self, example: &TrainingExample) -> Option<(GradMap<f64>, LossParts)> {
        if example.hidden_agents.is_empty() {
            return None;
        }
        let tape = Tape::new();
        let losses = self.model.training_losses(&tape, example);
        let w = &self.cfg.train;
        let mut total = losses.occupancy.scale(w.weight_occupancy);
        let occ_v = losses.occupancy.value().item();
        let mut attr_v = 0.0;
        let mut traj_v = 0.0;
        if let Some(attr) = &losses.attributes {
            attr_v = attr.value().item();
            total = total.add(&attr.scale(w.weight_attributes));
        }
        if let Some(traj) = &losses.trajectory {
            traj_v = traj.value().item();
            total = total.add(&traj.scale(w.weight_trajectory));
        }
        let total_v = total.value().item();
        let grads = tape.backward(&total);
        Some((
            grads,
            LossParts {
                total: total_v,
                occupancy: occ_v,
                attributes: attr_v,
                trajectory: traj_v,
                hidden: losses.hidden_count,
            },
        ))
    }

    /// Run steps `self.step + 1 ..= until`. Writes checkpoints and a loss
    /// log when `out` is given.
    pub fn run(
        &mut self,
        corpus: &[Scenario],
        until: u64,
        out: Option<&TrainOutput>,
    ) -> Result<(), TrainError> {
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let parallel_batch = self.cfg.train.batch_scenarios > 1 && worker_threads() != Some(1);
        let mut log = match out {
            Some(o) => Some(o.open_log()?),
            None => None,
        };
        while self.step < until {
            let step = self.step + 1;
            let batch = self.draw_batch(corpus, step);

            // Per-example passes; order-preserving merge keeps the update
            // deterministic even when the batch runs in parallel.
            let results: Vec<Option<(GradMap<f64>, LossParts)>> = if parallel_batch {
                batch.par_iter().map(|(_, ex)| self.example_pass(ex)).collect()
            } else {
                batch.iter().map(|(_, ex)| self.example_pass(ex)).collect()
            };

            let mut merged: Option<GradMap<f64>> = None;
            let mut parts = LossParts::default();
            let mut used = 0usize;
            for (result, (id, _)) in results.into_iter().zip(&batch) {
                let Some((grads, p)) = result else { continue };
                if !p.total.is_finite() {
                    return Err(TrainError::NanLoss { step, scenario_id: id.clone() });
                }
                used += 1;
                parts.accumulate(&p);
                merged = Some(match merged {
                    None => grads,
                    Some(mut acc) => {
                        acc.merge(&grads);
                        acc
                    }
                });
            }

            let skipped = used == 0;
            if let Some(mut grads) = merged {
                grads.scale(1.0 / used as f64);
                parts.scale(1.0 / used as f64);
                self.opt.begin_step();
                let opt = &mut self.opt;
                self.model.visit_params_mut(&mut |name, tensor| {
                    match grads.get(name) {
                        Some(g) => opt.update(name, tensor, g),
                        None => {
                            let zeros = Tensor::zeros(tensor.shape());
                            opt.update(name, tensor, &zeros);
                        }
                    }
                });
            }

            self.step = step;
            let record = LossRecord {
                step,
                total: parts.total,
                occupancy: parts.occupancy,
                attributes: parts.attributes,
                trajectory: parts.trajectory,
                hidden: parts.hidden,
                skipped,
            };
            if let Some(log) = log.as_mut() {
                writeln!(log, "{}", serde_json::to_string(&record).unwrap())?;
            }
            self.history.push(record);

            if let Some(o) = out {
                if step % self.cfg.train.checkpoint_every as u64 == 0 || step == until {
                    self.save(&o.checkpoint_path())?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct LossParts {
    total: f64,
    occupancy: f64,
    attributes: f64,
    trajectory: f64,
    hidden: usize,
}

impl LossParts {
    fn accumulate(&mut self, other: &LossParts) {
        self.total += other.total;
        self.occupancy += other.occupancy;
        self.attributes += other.attributes;
        self.trajectory += other.trajectory;
        self.hidden += other.hidden;
    }

    fn scale(&mut self, k: f64) {
        self.total *= k;
        self.occupancy *= k;
        self.attributes *= k;
        self.trajectory *= k;
    }
}

/// Output locations for a training run.
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("loss.jsonl")
    }

    fn open_log(&self) -> std::io::Result<std::fs::File> {
        std::fs::OpenOptions::new().create(true).append(true).open(self.log_path())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::desk(7);
        cfg.corpus.n_scenarios = 2;
        cfg.corpus.vehicles = (2, 3);
        cfg.corpus.pedestrians = (0, 1);
        cfg.corpus.cyclists = (0, 0);
        cfg.train.steps = 4;
        cfg.train.checkpoint_every = 2;
        cfg
    }

    #[test]
    fn short_run_is_bitwise_reproducible() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
        let run = || {
            let mut s = TrainSession::new(&cfg);
            s.run(&corpus, 4, None).unwrap();
            s.model
                .params()
                .into_iter()
                .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_equals_uninterrupted() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = TrainOutput::new(dir.path().join("run")).unwrap();

        let mut full = TrainSession::new(&cfg);
        full.run(&corpus, 4, None).unwrap();

        let mut first = TrainSession::new(&cfg);
        first.run(&corpus, 2, None).unwrap();
        first.save(&out.checkpoint_path()).unwrap();
        let mut resumed = TrainSession::from_checkpoint(&cfg, &out.checkpoint_path()).unwrap();
        assert_eq!(resumed.step, 2);
        resumed.run(&corpus, 4, None).unwrap();

        for ((na, a), (nb, b)) in full.model.params().iter().zip(resumed.model.params().iter()) {
            assert_eq!(na, nb);
            let ba: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb, "parameter {na} diverged after resume");
        }
    }

    #[test]
    fn loss_decreases_on_short_overfit() {
        let mut cfg = tiny_cfg();
        cfg.corpus.n_scenarios = 1;
        cfg.train.fixed_mask_seed = Some(3);
        let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
        let mut s = TrainSession::new(&cfg);
        s.run(&corpus, 60, None).unwrap();
        let early = s.history[0].total;
        let late = s.history.last().unwrap().total;
        assert!(late < early, "loss should drop: {early} -> {late}");
    }

    #[test]
    fn config_mismatch_refuses_resume() {
        let cfg = tiny_cfg();
        let corpus = generate_corpus(&cfg.corpus, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = TrainSession::new(&cfg);
        s.run(&corpus, 1, None).unwrap();
        s.save(&path).unwrap();
        let mut other = cfg.clone();
        other.train.lr *= 2.0;
        assert!(matches!(
            TrainSession::from_checkpoint(&other, &path),
            Err(TrainError::Resume(_))
        ));
    }
}
