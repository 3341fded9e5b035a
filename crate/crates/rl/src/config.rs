//! Training hyperparameters and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Sac,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Sac => "sac",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ddpg" => Ok(Algorithm::Ddpg),
            "sac" => Ok(Algorithm::Sac),
            other => Err(format!("unknown algorithm '{other}' (expected ddpg or sac)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "alpha")]
pub enum EntropyMode {
    /// Learn the temperature against a target entropy of `-action_dim`.
    Autotune,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub total_steps: usize,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub learning_starts: usize,
    pub buffer_size: usize,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub policy_update_freq: usize,
    pub target_update_freq: usize,
    /// DDPG Gaussian action noise.
    pub exploration_noise: f64,
    pub entropy: EntropyMode,
    pub critic_hidden: usize,
    /// Evaluate every this many environment steps (0 disables the learning curve).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub normalize_input: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// The full-scale hyperparameters.
    pub fn paper(algorithm: Algorithm) -> Self {
        let common = TrainConfig {
            algorithm,
            total_steps: 1_000_000,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            learning_starts: 5_000,
            buffer_size: 1_000_000,
            policy_lr: 3e-4,
            q_lr: 1e-3,
            policy_update_freq: 2,
            target_update_freq: 1,
            exploration_noise: 0.1,
            entropy: EntropyMode::Autotune,
            critic_hidden: 256,
            eval_interval: 10_000,
            eval_episodes: 10,
            normalize_input: true,
            seed: 0,
        };
        match algorithm {
            Algorithm::Sac => common,
            Algorithm::Ddpg => TrainConfig { learning_starts: 25_000, q_lr: 3e-4, ..common },
        }
    }

    /// Single-core desk scale: 5e4 steps, learning from step 1e3, smaller critics and batches.
    pub fn desk(algorithm: Algorithm) -> Self {
        TrainConfig {
            total_steps: 50_000,
            learning_starts: 1_000,
            buffer_size: 50_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            critic_hidden: DESK_CRITIC_HIDDEN,
            batch_size: DESK_BATCH,
            ..TrainConfig::paper(algorithm)
        }
    }

    pub fn preset(name: &str, algorithm: Algorithm) -> Result<Self, String> {
        match name {
            "paper" => Ok(TrainConfig::paper(algorithm)),
            "desk" => Ok(TrainConfig::desk(algorithm)),
            other => Err(format!("unknown preset '{other}' (expected paper or desk)")),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("batch_size", self.batch_size),
            ("buffer_size", self.buffer_size),
            ("policy_update_freq", self.policy_update_freq),
            ("target_update_freq", self.target_update_freq),
            ("critic_hidden", self.critic_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err("gamma and tau must lie in [0, 1]".into());
        }
        if !(self.policy_lr > 0.0 && self.q_lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if !(self.exploration_noise >= 0.0) {
            return Err("exploration noise must be nonnegative".into());
        }
        if let EntropyMode::Fixed(a) = self.entropy {
            if !(a > 0.0) {
                return Err("fixed entropy temperature must be positive".into());
            }
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return Err("eval_episodes must be positive when evaluating".into());
        }
        Ok(())
    }
}

pub const DESK_CRITIC_HIDDEN: usize = 64;
pub const DESK_BATCH: usize = 64;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_matches_published_tables() {
        let sac = TrainConfig::paper(Algorithm::Sac);
        assert_eq!((sac.total_steps, sac.buffer_size, sac.batch_size, sac.learning_starts), (1_000_000, 1_000_000, 256, 5_000));
        assert_eq!((sac.gamma, sac.tau, sac.policy_lr, sac.q_lr), (0.99, 0.005, 3e-4, 1e-3));
        assert_eq!((sac.policy_update_freq, sac.target_update_freq), (2, 1));
        assert_eq!(sac.entropy, EntropyMode::Autotune);
        let ddpg = TrainConfig::paper(Algorithm::Ddpg);
        assert_eq!((ddpg.policy_lr, ddpg.q_lr, ddpg.learning_starts, ddpg.exploration_noise), (3e-4, 3e-4, 25_000, 0.1));
        assert_eq!(ddpg.policy_update_freq, 2);
    }

    #[test]
    fn desk_preset_scales_steps() {
        for algo in [Algorithm::Sac, Algorithm::Ddpg] {
            let d = TrainConfig::desk(algo);
            assert_eq!((d.total_steps, d.learning_starts, d.eval_interval, d.eval_episodes), (50_000, 1_000, 5_000, 10));
            assert!(d.validate().is_ok());
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = TrainConfig::desk(Algorithm::Sac).with_seed(3);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
    }
}
