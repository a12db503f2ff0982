//! Run configuration: presets, file loading, and structural self-checks.
//!
//! The `paper` preset pins the full-scale hyperparameters (120 m FOV,
//! 384x384 occupancy grid, 128x128 pillars, 32x32x64 embedding, 5x5
//! patches, 256-wide road encoder, 512-wide fusion, M = 8 attribute modes,
//! K = 64 trajectories over T = 80 steps at 10 Hz). The `desk` preset
//! scales widths and counts down to CPU-minutes while keeping every
//! structural constant (3 agent classes, loss forms, sampling rules).

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }
}

/// Synthetic corpus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_scenarios: usize,
    pub fov_extent: f64,
    pub t_steps: usize,
    pub dt: f64,
    /// Lanes per driving direction, inclusive range.
    pub lanes_per_direction: (usize, usize),
    pub lane_width: f64,
    /// Arc-road radius range in meters.
    pub arc_radius: (f64, f64),
    /// Probability mix over road families (straight, arc, intersection).
    pub road_mix: (f64, f64, f64),
    /// Inclusive agent count ranges per class.
    pub vehicles: (usize, usize),
    pub pedestrians: (usize, usize),
    pub cyclists: (usize, usize),
    /// Speed ranges per class, m/s.
    pub vehicle_speed: (f64, f64),
    pub pedestrian_speed: (f64, f64),
    pub cyclist_speed: (f64, f64),
    /// Box extent ranges, meters: (width lo, width hi, length lo, length hi).
    pub vehicle_size: (f64, f64, f64, f64),
    pub pedestrian_size: (f64, f64, f64, f64),
    pub cyclist_size: (f64, f64, f64, f64),
    /// Placement attempts per agent before giving up.
    pub max_placement_attempts: usize,
}

/// Model architecture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fov_extent: f64,
    /// Occupancy raster side (H = W).
    pub occupancy_side: usize,
    /// Number of agent classes C (structural: vehicle, pedestrian, cyclist).
    pub classes: usize,
    /// Pillar grid side P.
    pub pillars: usize,
    /// Per-pillar feature width after max-pooling.
    pub pillar_feat: usize,
    /// Dense embedding side (H_d = W_d) and channel depth D_d.
    pub embed_side: usize,
    pub embed_dim: usize,
    /// Backbone conv channels (stride-2 stages) and attention heads.
    pub backbone_c1: usize,
    pub backbone_c2: usize,
    pub backbone_heads: usize,
    /// Occupancy decoder intermediate channels.
    pub occ_channels: usize,
    /// Feature patch side k.
    pub patch_k: usize,
    /// Agent-centric road encoder: output width D_r, depth, heads, ffn,
    /// selection radius (m), and point budget.
    pub road_dim: usize,
    pub road_layers: usize,
    pub road_heads: usize,
    pub road_ffn: usize,
    pub road_radius: f64,
    pub road_max_points: usize,
    /// Fused per-agent feature width D.
    pub fused_dim: usize,
    /// Attribute decoder: hidden width (4 hidden layers) and mode count M.
    pub attr_hidden: usize,
    pub attr_modes: usize,
    /// Trajectory decoder: K candidates, transformer width/depth.
    pub traj_k: usize,
    pub traj_dim: usize,
    pub traj_layers: usize,
    pub traj_heads: usize,
    pub traj_ffn: usize,
    /// Future steps T and timestep seconds.
    pub t_steps: usize,
    pub dt: f64,
    /// Feed future agent trajectories into the shared encoder (the
    /// "trajectory inputs" variant when true, the joint variant when false).
    pub trajectory_inputs: bool,
    /// Road polyline resample interval for input points, meters.
    pub point_interval: f64,
    /// Box interior sample spacing, meters.
    pub box_point_spacing: f64,
    /// Attribute loss scales: width, length, cos, sin, speed.
    pub attr_scales: [f64; 5],
    /// Speed normalizer for input point features, m/s.
    pub speed_feat_norm: f64,
}

/// Training loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Scenarios per optimizer step (gradient accumulation).
    pub batch_scenarios: usize,
    pub weight_occupancy: f64,
    pub weight_attributes: f64,
    pub weight_trajectory: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// When set, every step uses the same masking draw (overfit runs).
    pub fixed_mask_seed: Option<u64>,
}

/// Inference-time sampling options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Cells within this distance of an existing agent center are zeroed
    /// before sampling, meters.
    pub suppression_radius: f64,
    /// Temperature over occupancy mass (1 = proportional sampling).
    pub occupancy_temperature: f64,
    /// Sample uniformly within the chosen cell instead of its center.
    pub subcell_jitter: bool,
}

/// Evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Gaussian kernel bandwidth, applied after per-family standardization.
    pub bandwidth: f64,
    /// Standardize features by reference-corpus statistics first.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::Paper => Self::paper(seed),
            Preset::Desk => Self::desk(seed),
        }
    }

    pub fn paper(seed: u64) -> Self {
        let model = ModelConfig {
            fov_extent: 120.0,
            occupancy_side: 384,
            classes: 3,
            pillars: 128,
            pillar_feat: 64,
            embed_side: 32,
            embed_dim: 64,
            backbone_c1: 96,
            backbone_c2: 128,
            backbone_heads: 4,
            occ_channels: 32,
            patch_k: 5,
            road_dim: 256,
            road_layers: 4,
            road_heads: 4,
            road_ffn: 512,
            road_radius: 30.0,
            road_max_points: 256,
            fused_dim: 512,
            attr_hidden: 1024,
            attr_modes: 8,
            traj_k: 64,
            traj_dim: 512,
            traj_layers: 8,
            traj_heads: 8,
            traj_ffn: 1024,
            t_steps: 80,
            dt: 0.1,
            trajectory_inputs: true,
            point_interval: 1.0,
            box_point_spacing: 0.5,
            attr_scales: [5.0, 5.0, 1.0, 1.0, 15.0],
            speed_feat_norm: 15.0,
        };
        Self {
            preset: Preset::Paper,
            seed,
            corpus: Self::corpus_defaults(400, 80, 0.1),
            model,
            train: Self::train_defaults(20_000),
            generate: Self::generate_defaults(),
            metrics: Self::metrics_defaults(),
        }
    }

    pub fn desk(seed: u64) -> Self {
        let model = ModelConfig {
            fov_extent: 120.0,
            occupancy_side: 96,
            classes: 3,
            pillars: 64,
            pillar_feat: 32,
            embed_side: 16,
            embed_dim: 32,
            backbone_c1: 32,
            backbone_c2: 48,
            backbone_heads: 2,
            occ_channels: 12,
            patch_k: 5,
            road_dim: 64,
            road_layers: 2,
            road_heads: 2,
            road_ffn: 96,
            road_radius: 30.0,
            road_max_points: 64,
            fused_dim: 128,
            attr_hidden: 128,
            attr_modes: 4,
            traj_k: 8,
            traj_dim: 64,
            traj_layers: 2,
            traj_heads: 2,
            traj_ffn: 128,
            t_steps: 20,
            dt: 0.1,
            trajectory_inputs: true,
            point_interval: 1.0,
            box_point_spacing: 0.5,
            attr_scales: [5.0, 5.0, 1.0, 1.0, 15.0],
            speed_feat_norm: 15.0,
        };
        Self {
            preset: Preset::Desk,
            seed,
            corpus: Self::corpus_defaults(200, 20, 0.1),
            model,
            train: Self::train_defaults(3000),
            generate: Self::generate_defaults(),
            metrics: Self::metrics_defaults(),
        }
    }

    fn corpus_defaults(n_scenarios: usize, t_steps: usize, dt: f64) -> CorpusConfig {
        CorpusConfig {
            n_scenarios,
            fov_extent: 120.0,
            t_steps,
            dt,
            lanes_per_direction: (1, 2),
            lane_width: 3.5,
            arc_radius: (35.0, 80.0),
            road_mix: (0.40, 0.35, 0.25),
            vehicles: (4, 9),
            pedestrians: (0, 3),
            cyclists: (0, 2),
            vehicle_speed: (3.0, 12.0),
            pedestrian_speed: (0.6, 1.5),
            cyclist_speed: (2.0, 6.0),
            vehicle_size: (1.8, 2.1, 4.2, 5.2),
            pedestrian_size: (0.5, 0.8, 0.5, 0.8),
            cyclist_size: (0.6, 0.8, 1.6, 2.0),
            max_placement_attempts: 60,
        }
    }

    fn train_defaults(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_scenarios: 1,
            weight_occupancy: 1.0,
            weight_attributes: 1.0,
            weight_trajectory: 1.0,
            checkpoint_every: 1000,
            log_every: 100,
            fixed_mask_seed: None,
        }
    }

    fn generate_defaults() -> GenerateConfig {
        GenerateConfig {
            suppression_radius: 2.0,
            occupancy_temperature: 1.0,
            subcell_jitter: false,
        }
    }

    fn metrics_defaults() -> MetricsConfig {
        MetricsConfig { bandwidth: 1.0, standardize: true }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Structural invariants every config must satisfy.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let fail = |what: String| Err(ConfigError::Invalid(what));
        if m.classes != 3 {
            return fail(format!("classes must be 3, got {}", m.classes));
        }
        if m.embed_side * 4 != m.pillars {
            return fail(format!(
                "embedding side {} must be pillars/4 = {}",
                m.embed_side,
                m.pillars / 4
            ));
        }
        if upsample_factors(m.embed_side, m.occupancy_side).is_none() {
            return fail(format!(
                "occupancy side {} not reachable from embedding side {} by 2x/3x upsampling",
                m.occupancy_side, m.embed_side
            ));
        }
        if m.backbone_c2 % m.backbone_heads != 0
            || m.road_dim % m.road_heads != 0
            || m.traj_dim % m.traj_heads != 0
        {
            return fail("attention widths must be divisible by head counts".into());
        }
        if m.patch_k % 2 == 0 {
            return fail(format!("patch side k must be odd, got {}", m.patch_k));
        }
        if m.t_steps != self.corpus.t_steps || (m.dt - self.corpus.dt).abs() > 1e-12 {
            return fail("model and corpus timestep settings must match".into());
        }
        if (m.fov_extent - self.corpus.fov_extent).abs() > 1e-12 {
            return fail("model and corpus FOV must match".into());
        }
        if m.attr_scales.iter().any(|&s| s <= 0.0) {
            return fail("attribute scales must be positive".into());
        }
        if self.metrics.bandwidth <= 0.0 {
            return fail("kernel bandwidth must be positive".into());
        }
        Ok(())
    }

    /// Structural constants as printable rows; the `paper` preset pins the
    /// full-scale values and refuses to run when they drift.
    pub fn self_check_table(&self) -> Vec<(String, String)> {
        let m = &self.model;
        vec![
            ("fov_extent_m".into(), format!("{}", m.fov_extent)),
            ("occupancy_grid".into(), format!("{0}x{0}", m.occupancy_side)),
            ("classes".into(), format!("{}", m.classes)),
            ("pillars".into(), format!("{0}x{0}", m.pillars)),
            ("embedding".into(), format!("{0}x{0}x{1}", m.embed_side, m.embed_dim)),
            ("patch_k".into(), format!("{0}x{0}", m.patch_k)),
            ("road_encoder".into(), format!("{} layers x {}", m.road_layers, m.road_dim)),
            ("fused_dim".into(), format!("{}", m.fused_dim)),
            ("attr_decoder".into(), format!("4 hidden x {}", m.attr_hidden)),
            ("attr_modes".into(), format!("{}", m.attr_modes)),
            ("traj_decoder".into(), format!("{} layers x {}", m.traj_layers, m.traj_dim)),
            ("traj_k".into(), format!("{}", m.traj_k)),
            ("t_steps".into(), format!("{}", m.t_steps)),
            ("dt_s".into(), format!("{}", m.dt)),
        ]
    }

    /// Assert the paper preset's structural numbers.
    pub fn assert_paper_preset(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        let expected: [(&str, f64); 14] = [
            ("fov_extent", m.fov_extent - 120.0),
            ("occupancy_side", m.occupancy_side as f64 - 384.0),
            ("classes", m.classes as f64 - 3.0),
            ("pillars", m.pillars as f64 - 128.0),
            ("embed_side", m.embed_side as f64 - 32.0),
            ("embed_dim", m.embed_dim as f64 - 64.0),
            ("patch_k", m.patch_k as f64 - 5.0),
            ("road_dim", m.road_dim as f64 - 256.0),
            ("road_layers", m.road_layers as f64 - 4.0),
            ("fused_dim", m.fused_dim as f64 - 512.0),
            ("attr_modes", m.attr_modes as f64 - 8.0),
            ("traj_k", m.traj_k as f64 - 64.0),
            ("traj_layers", m.traj_layers as f64 - 8.0),
            ("t_steps", m.t_steps as f64 - 80.0),
        ];
        for (name, delta) in expected {
            if delta.abs() > 1e-12 {
                return Err(ConfigError::Invalid(format!(
                    "paper preset structural constant {name} drifted"
                )));
            }
        }
        if (m.dt - 0.1).abs() > 1e-12 || m.attr_hidden != 1024 || m.traj_dim != 512 {
            return Err(ConfigError::Invalid("paper preset structural constant drifted".into()));
        }
        Ok(())
    }
}

/// Factor `to / from` into nearest-neighbor upsample stages of 2x and 3x
/// (2s first). `None` when the ratio is not a product of 2s and 3s.
pub fn upsample_factors(from: usize, to: usize) -> Option<Vec<usize>> {
    if from == 0 || to % from != 0 {
        return None;
    }
    let mut ratio = to / from;
    let mut factors = Vec::new();
    while ratio % 2 == 0 {
        factors.push(2);
        ratio /= 2;
    }
    while ratio % 3 == 0 {
        factors.push(3);
        ratio /= 3;
    }
    if ratio == 1 {
        Some(factors)
    } else {
        None
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse failure: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_paper_pins_structurals() {
        let paper = RunConfig::paper(0);
        paper.validate().unwrap();
        paper.assert_paper_preset().unwrap();
        let desk = RunConfig::desk(0);
        desk.validate().unwrap();
        // Desk intentionally fails the paper pin.
        assert!(desk.assert_paper_preset().is_err());
    }

    #[test]
    fn upsample_factorization() {
        assert_eq!(upsample_factors(16, 96), Some(vec![2, 3]));
        assert_eq!(upsample_factors(32, 384), Some(vec![2, 2, 3]));
        assert_eq!(upsample_factors(16, 16), Some(vec![]));
        assert_eq!(upsample_factors(16, 80), None); // ratio 5
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::desk(9);
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn broken_config_rejected() {
        let mut cfg = RunConfig::desk(0);
        cfg.model.occupancy_side = 100; // 100/16 not a 2-3 product
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = RunConfig::desk(0);
        cfg.model.classes = 2;
        assert!(cfg.validate().is_err());
    }
}
