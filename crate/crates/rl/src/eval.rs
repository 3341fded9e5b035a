//! Deterministic evaluation rollouts, optionally with Gaussian noise on the
//! normalized observation.

use qpolicy_core::{intrt, IntegerGraph, PolicyNet};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::seeds;
use crate::RlError;

/// A deterministic policy evaluated on normalized observations.
pub trait Actor {
    fn normalize(&self, obs: &[f64]) -> Vec<f64>;
    fn act_normalized(&self, normalized: &[f64]) -> Result<Vec<f64>, RlError>;
}

impl Actor for PolicyNet {
    fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        self.normalizer.normalize(obs)
    }

    fn act_normalized(&self, normalized: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(PolicyNet::act_normalized(self, normalized)?)
    }
}

impl Actor for IntegerGraph {
    fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        self.normalizer.normalize(obs)
    }

    fn act_normalized(&self, normalized: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(intrt::run_integer_normalized(self, normalized)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episode_returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_returns(episode_returns: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&episode_returns);
        EvalReport { episode_returns, mean, std }
    }

    pub fn episodes(&self) -> usize {
        self.episode_returns.len()
    }
}

/// Mean and population standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Reset seed of evaluation episode `i`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seeds::mix(seeds::mix(seed, seeds::stream::EVAL), i as u64)
}

/// Undiscounted return of one deterministic episode.
pub fn rollout<A: Actor + ?Sized>(
    actor: &A,
    env: &dyn Environment,
    reset_seed: u64,
    noise: Option<(f64, &mut rand_chacha::ChaCha8Rng)>,
) -> Result<f64, RlError> {
    let mut state = env.reset(reset_seed);
    let mut total = 0.0;
    let mut noise = noise;
    for _ in 0..env.max_steps() {
        let mut x = actor.normalize(&env.observe(&state));
        if let Some((sigma, rng)) = noise.as_mut() {
            for v in &mut x {
                let eps: f64 = StandardNormal.sample(*rng);
                *v += *sigma * eps;
            }
        }
        let action = actor.act_normalized(&x)?;
        let tr = env.step(&state, &action);
        total += tr.reward;
        if tr.done() {
            break;
        }
        state = tr.state;
    }
    Ok(total)
}

pub fn evaluate<A: Actor + ?Sized>(actor: &A, env: &dyn Environment, episodes: usize, seed: u64) -> Result<EvalReport, RlError> {
    let returns = (0..episodes)
        .map(|i| rollout(actor, env, episode_seed(seed, i), None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_returns(returns))
}

/// Evaluation with `N(0, sigma^2)` added to every normalized observation component.
/// The noise stream depends only on `noise_seed`, the episode resets only on `seed`.
pub fn evaluate_noisy<A: Actor + ?Sized>(
    actor: &A,
    env: &dyn Environment,
    episodes: usize,
    seed: u64,
    sigma: f64,
    noise_seed: u64,
) -> Result<EvalReport, RlError> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(RlError::Config(format!("noise sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = seeds::rng(noise_seed, seeds::stream::NOISE);
    let returns = (0..episodes)
        .map(|i| rollout(actor, env, episode_seed(seed, i), Some((sigma, &mut rng))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_returns(returns))
}
