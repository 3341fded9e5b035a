//! Full desk-preset training runs on the pendulum.

use std::sync::OnceLock;

use qpolicy_core::PolicyNet;
use qpolicy_rl::{evaluate, init_policy, train, Algorithm, EnvKind, TrainConfig};

const SEEDS: u64 = 5;
const EVAL_SEED: u64 = 1_000_003;

fn ddpg_policies() -> &'static Vec<PolicyNet> {
    static CELL: OnceLock<Vec<PolicyNet>> = OnceLock::new();
    CELL.get_or_init(|| {
        let env = EnvKind::Pendulum.build();
        (0..SEEDS)
            .map(|seed| {
                let config = TrainConfig::desk(Algorithm::Ddpg).with_seed(seed);
                let net = init_policy(&config, env.as_ref(), 64, None);
                train(&config, net, env.as_ref()).unwrap().policy
            })
            .collect()
    })
}

// Returns are negative, so "within 10% of the best" is read as mean >= best - 0.1 |best|.
#[test]
fn ddpg_desk_seeds_reach_the_best_seed() {
    let env = EnvKind::Pendulum.build();
    let means: Vec<f64> = ddpg_policies()
        .iter()
        .map(|p| evaluate(p, env.as_ref(), 10, EVAL_SEED).unwrap().mean)
        .collect();
    let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    assert!(mean >= best - 0.1 * best.abs(), "mean {mean:.1} best {best:.1} per seed {means:?}");
}

#[test]
fn short_and_long_evaluations_agree() {
    let env = EnvKind::Pendulum.build();
    let policy = &ddpg_policies()[0];
    let short = evaluate(policy, env.as_ref(), 10, EVAL_SEED).unwrap();
    let long = evaluate(policy, env.as_ref(), 1000, EVAL_SEED + 1).unwrap();
    let bound = 2.0 * long.std / 10f64.sqrt();
    assert!((short.mean - long.mean).abs() <= bound, "n=10 {:.1} n=1000 {:.1} bound {bound:.1}", short.mean, long.mean);
}
