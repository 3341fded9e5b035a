//! Trains and evaluates (configuration, seed) pairs, caching results.

use std::collections::BTreeMap;
use std::sync::Arc;

use qpolicy_core::{PolicyNet, QuantConfig};
use qpolicy_rl::{evaluate, init_policy, train, CurvePoint, EnvKind, Environment, EvalReport, RlError, TrainConfig};
use serde::Serialize;

use crate::parity::Summary;

/// Every model is scored on the same evaluation episodes.
pub const EVAL_SEED: u64 = 1_000_003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RunKey {
    pub quant: Option<QuantConfig>,
    pub hidden: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub key: RunKey,
    pub policy: PolicyNet,
    pub curve: Vec<CurvePoint>,
    pub eval: EvalReport,
}

pub struct Runner {
    pub env_kind: EnvKind,
    pub env: Box<dyn Environment>,
    pub template: TrainConfig,
    pub eval_episodes: usize,
    pub verbose: bool,
    cache: BTreeMap<RunKey, Arc<RunResult>>,
}

impl Runner {
    pub fn new(env_kind: EnvKind, template: TrainConfig) -> Self {
        let eval_episodes = template.eval_episodes.max(1);
        Runner { env_kind, env: env_kind.build(), template, eval_episodes, verbose: false, cache: BTreeMap::new() }
    }

    pub fn cached_runs(&self) -> usize {
        self.cache.len()
    }

    pub fn run(&mut self, quant: Option<QuantConfig>, hidden: usize, seed: u64) -> Result<Arc<RunResult>, RlError> {
        let key = RunKey { quant, hidden, seed };
        if let Some(r) = self.cache.get(&key) {
            return Ok(Arc::clone(r));
        }
        let config = self.template.clone().with_seed(seed);
        let start = std::time::Instant::now();
        let net = init_policy(&config, self.env.as_ref(), hidden, quant);
        let out = train(&config, net, self.env.as_ref())?;
        let eval = evaluate(&out.policy, self.env.as_ref(), self.eval_episodes, EVAL_SEED)?;
        if self.verbose {
            eprintln!(
                "  trained {} h={hidden} seed={seed}: {:.1} ({:.0}s)",
                describe(quant),
                eval.mean,
                start.elapsed().as_secs_f64()
            );
        }
        let result = Arc::new(RunResult { key, policy: out.policy, curve: out.curve, eval });
        self.cache.insert(key, Arc::clone(&result));
        Ok(result)
    }

    /// Train every seed of a configuration and summarize the evaluation means.
    pub fn summary(&mut self, quant: Option<QuantConfig>, hidden: usize, seeds: &[u64]) -> Result<(Summary, Vec<Arc<RunResult>>), RlError> {
        let runs = seeds.iter().map(|&s| self.run(quant, hidden, s)).collect::<Result<Vec<_>, _>>()?;
        Ok((Summary::from_reports(runs.iter().map(|r| &r.eval)), runs))
    }
}

pub fn describe(quant: Option<QuantConfig>) -> String {
    match quant {
        None => "fp32".into(),
        Some(q) => format!("in{}-w{}-a{}-out{}", q.input_bits, q.weight_bits, q.act_bits, q.output_bits),
    }
}

pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}
