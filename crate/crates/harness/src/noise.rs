//! Robustness to Gaussian noise on the normalized observation.

use std::fmt::Write;

use qpolicy_rl::eval::evaluate_noisy;
use qpolicy_rl::{seeds, Actor, Environment, RlError};
use serde::Serialize;

pub const DEFAULT_SIGMAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const NOISE_HEADER: &str = "model,sigma,seed,mean_return,std_return";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub model: String,
    pub sigma: f64,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// A model to evaluate: label (e.g. `fp32`), its seed and the policy itself.
pub struct NoiseModel<'a> {
    pub label: String,
    pub seed: u64,
    pub actor: &'a dyn Actor,
}

/// Evaluate every model at every sigma. Models sharing a seed see the same
/// noise sequence; the episode resets depend only on `eval_seed`.
pub fn noise_eval(models: &[NoiseModel<'_>], env: &dyn Environment, sigmas: &[f64], episodes: usize, eval_seed: u64) -> Result<Vec<NoiseRow>, RlError> {
    let mut rows = Vec::with_capacity(models.len() * sigmas.len());
    for m in models {
        for &sigma in sigmas {
            let noise_seed = seeds::mix(eval_seed, m.seed);
            let r = evaluate_noisy(m.actor, env, episodes, eval_seed, sigma, noise_seed)?;
            rows.push(NoiseRow { model: m.label.clone(), sigma, seed: m.seed, mean_return: r.mean, std_return: r.std });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[NoiseRow], header_comment: &str) -> String {
    let mut out = String::new();
    if !header_comment.is_empty() {
        writeln!(out, "# {header_comment}").unwrap();
    }
    writeln!(out, "{NOISE_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{},{:?},{},{:?},{:?}", r.model, r.sigma, r.seed, r.mean_return, r.std_return).unwrap();
    }
    out
}
