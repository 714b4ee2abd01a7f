//! Experiment configuration: one declarative JSON document with full
//! schema validation (unknown fields are rejected), plus the two named
//! presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AmmConfig;
use crate::channel::ChannelModel;
use crate::env::EnvConfig;
use crate::scene::{Aabb, SlotGenConfig, VisibilityModel, WalkParams};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Minutes-scale defaults for laptop runs.
    Desk,
    /// The measured simulation parameters (25-frame map, 60-frame slots,
    /// 20/8 Mbit rates, 2 s slots, 2 Mbit frames).
    Table1,
}

impl std::str::FromStr for Preset {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "table1" => Ok(Preset::Table1),
            other => Err(HarnessError::BadConfig(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Stationary high-rate fractions to sweep, each strictly in (0, 1).
    pub ratios: Vec<f64>,
    /// Markov mixing rate mu: p_lh = mu*rho, p_hl = mu*(1-rho).
    pub mixing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub amm: AmmConfig,
    pub sweep: SweepConfig,
    pub seeds: Vec<u64>,
    /// Fresh rollout episodes used to score a trained or fixed policy.
    pub eval_episodes: usize,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Table1 => Self::table1(),
        }
    }

    /// Desk scale: a 10-frame map over 20-frame slots in a 400-point
    /// scene, 40 slots per episode, 30 episodes, 10 seeds.
    pub fn desk() -> Self {
        ExperimentConfig {
            env: EnvConfig {
                capacity: 10,
                history_window: 3,
                discount: 0.9,
                episode_len: 40,
                n_points: 400,
                bounds: Aabb::new([0.0, 0.0, 0.0], [10.0, 10.0, 3.0]).expect("static bounds"),
                slot_gen: SlotGenConfig {
                    frames_per_slot: 20,
                    walk: WalkParams { step: 0.2, turn: 0.25 },
                    visibility: VisibilityModel { fov: 0.7, max_range: 7.0, detect_prob: 0.9 },
                    jaccard_threshold: 0.7,
                },
                channel: ChannelModel {
                    r_high: 20e6,
                    r_low: 8e6,
                    p_hl: 0.2,
                    p_lh: 0.2,
                    frame_bits: 5e6,
                    slot_seconds: 2.0,
                    initial: crate::channel::ChannelState::High,
                },
                pi_scale: 1.0,
                seed: 0,
            },
            amm: crate::agent::AmmConfig::desk(0),
            sweep: SweepConfig { ratios: vec![0.2, 0.5, 0.8], mixing: 0.2 },
            seeds: (0..10).collect(),
            eval_episodes: 1,
        }
    }

    /// The full measured parameter set; slower, reachable by name.
    pub fn table1() -> Self {
        let mut cfg = Self::desk();
        cfg.env.capacity = 25;
        cfg.env.slot_gen.frames_per_slot = 60;
        cfg.env.channel = ChannelModel::table1();
        cfg
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        self.amm.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::BadConfig("seeds must be non-empty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::BadConfig("eval_episodes must be positive".into()));
        }
        if self.sweep.ratios.is_empty() {
            return Err(HarnessError::BadConfig("sweep.ratios must be non-empty".into()));
        }
        for &r in &self.sweep.ratios {
            if r.is_nan() || r <= 0.0 || r >= 1.0 {
                return Err(HarnessError::BadConfig(format!(
                    "sweep ratio {r} must lie strictly inside (0, 1)"
                )));
            }
        }
        if self.sweep.mixing.is_nan() || self.sweep.mixing <= 0.0 {
            return Err(HarnessError::BadConfig("sweep.mixing must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
