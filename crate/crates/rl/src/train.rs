//! The off-policy training loop for DDPG and SAC.
//!
//! Replay stores raw observations; minibatches are normalized with the current
//! running statistics at sample time and fed to both the policy and the critics.

use ndarray::{Array1, Array2, ArrayView2};
use qpolicy_core::adam::Adam;
use qpolicy_core::mlp::Mlp;
use qpolicy_core::policy::PolicyOptimizer;
use qpolicy_core::{Normalizer, PolicyNet, QuantConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, EntropyMode, TrainConfig};
use crate::critic::{critic_input, CriticEnsemble};
use crate::env::{EnvState, Environment};
use crate::eval::{evaluate, EvalReport};
use crate::replay::{Batch, ReplayBuffer};
use crate::{sac, seeds, RlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Per-update losses, in update order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub critic_losses: Vec<f64>,
    pub actor_losses: Vec<f64>,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Frozen policy without training-only parts.
    pub policy: PolicyNet,
    pub curve: Vec<CurvePoint>,
    pub stats: TrainStats,
}

/// A freshly initialized policy for `env`, seeded from `config.seed`.
pub fn init_policy(config: &TrainConfig, env: &dyn Environment, hidden: usize, quant: Option<QuantConfig>) -> PolicyNet {
    let mut rng = seeds::rng(config.seed, seeds::stream::INIT);
    let mut net = PolicyNet::new(env.obs_dim(), env.action_dim(), hidden, quant, &mut rng);
    if config.algorithm == Algorithm::Sac {
        net = net.with_sigma_branch(&mut rng);
    }
    if !config.normalize_input {
        net.normalizer = Normalizer::disabled(env.obs_dim());
    }
    net.seed = Some(config.seed);
    net
}

struct SacState {
    critics: CriticEnsemble,
    log_alpha: f64,
    alpha_opt: Option<Adam<f64>>,
    sigma_opt: Adam<f64>,
    target_entropy: f64,
}

struct DdpgState {
    critics: CriticEnsemble,
    target_actor: PolicyNet,
}

enum Learner {
    Sac(SacState),
    Ddpg(DdpgState),
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn check(value: f64, what: &'static str, step: usize) -> Result<(), RlError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(RlError::NonFinite { what, step })
    }
}

fn sigma_raw(net: &PolicyNet, x: ArrayView2<f64>) -> Array2<f64> {
    net.sigma_branch.as_ref().expect("SAC policy has a sigma branch").forward(x)
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    env: &'a dyn Environment,
    net: PolicyNet,
    optim: PolicyOptimizer,
    learner: Learner,
    buffer: ReplayBuffer,
    action_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    stats: TrainStats,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a TrainConfig, env: &'a dyn Environment, net: PolicyNet) -> Result<Self, RlError> {
        config.validate().map_err(RlError::Config)?;
        if net.obs_dim() != env.obs_dim() || net.action_dim() != env.action_dim() {
            return Err(RlError::Config(format!(
                "policy is {}->{} but the environment is {}->{}",
                net.obs_dim(),
                net.action_dim(),
                env.obs_dim(),
                env.action_dim()
            )));
        }
        let mut init_rng = seeds::rng(config.seed, seeds::stream::INIT ^ 0x100);
        let (od, ad) = (env.obs_dim(), env.action_dim());
        let learner = match config.algorithm {
            Algorithm::Sac => {
                if net.sigma_branch.is_none() {
                    return Err(RlError::Config("SAC needs a policy with a sigma branch".into()));
                }
                let critics = CriticEnsemble::new(2, od, ad, config.critic_hidden, config.q_lr, &mut init_rng);
                let (log_alpha, alpha_opt) = match config.entropy {
                    EntropyMode::Autotune => (0.0, Some(Adam::new(config.q_lr, &[1]))),
                    EntropyMode::Fixed(a) => (a.ln(), None),
                };
                let sigma_sizes = net.sigma_branch.as_ref().unwrap().param_sizes();
                Learner::Sac(SacState {
                    critics,
                    log_alpha,
                    alpha_opt,
                    sigma_opt: Adam::new(config.policy_lr, &sigma_sizes),
                    target_entropy: -(ad as f64),
                })
            }
            Algorithm::Ddpg => Learner::Ddpg(DdpgState {
                critics: CriticEnsemble::new(1, od, ad, config.critic_hidden, config.q_lr, &mut init_rng),
                target_actor: net.clone(),
            }),
        };
        Ok(Trainer {
            config,
            env,
            optim: PolicyOptimizer::new(&net, config.policy_lr),
            net,
            learner,
            buffer: ReplayBuffer::new(config.buffer_size, od, ad),
            action_rng: seeds::rng(config.seed, seeds::stream::ACTION),
            replay_rng: seeds::rng(config.seed, seeds::stream::REPLAY),
            stats: TrainStats::default(),
        })
    }

    fn explore(&mut self, obs: &[f64], step: usize) -> Result<Vec<f64>, RlError> {
        let ad = self.env.action_dim();
        if step < self.config.learning_starts {
            return Ok((0..ad).map(|_| self.action_rng.gen_range(-1.0..1.0)).collect());
        }
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("one row");
        let tape = self.net.forward(x)?;
        let action = match self.config.algorithm {
            Algorithm::Sac => {
                let raw = sigma_raw(&self.net, tape.x0.view());
                let eps = gaussian(&mut self.action_rng, 1, ad);
                sac::sample(&tape.mu, &raw, eps).action.row(0).to_vec()
            }
            Algorithm::Ddpg => tape
                .action
                .row(0)
                .iter()
                .map(|a| {
                    let n: f64 = StandardNormal.sample(&mut self.action_rng);
                    (a + self.config.exploration_noise * n).clamp(-1.0, 1.0)
                })
                .collect(),
        };
        Ok(action)
    }

    fn update(&mut self, step: usize) -> Result<(), RlError> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng);
        // every update during warm-up calibrates the activation scales before they are used
        if self.net.in_warmup() {
            let tape = self.net.forward(batch.obs.view())?;
            self.net.observe_warmup(&tape)?;
            if let Learner::Ddpg(st) = &mut self.learner {
                st.target_actor.sync_calibration(&self.net);
            }
        }
        match self.config.algorithm {
            Algorithm::Sac => self.update_sac(step, &batch),
            Algorithm::Ddpg => self.update_ddpg(step, &batch),
        }
    }

    fn update_sac(&mut self, step: usize, batch: &Batch) -> Result<(), RlError> {
        let cfg = self.config;
        let obs = self.net.preprocess(batch.obs.view())?;
        let next = self.net.preprocess(batch.next_obs.view())?;
        let n = obs.nrows();
        let ad = self.env.action_dim();
        let Learner::Sac(st) = &mut self.learner else { unreachable!() };

        let alpha = st.log_alpha.exp();
        let next_tape = self.net.forward_normalized(next.view())?;
        let next_raw = sigma_raw(&self.net, next_tape.x0.view());
        let next_s = sac::sample(&next_tape.mu, &next_raw, gaussian(&mut self.action_rng, n, ad));
        let q_next = st.critics.target_min(critic_input(next.view(), next_s.action.view()).view());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let soft = q_next[i] - alpha * next_s.log_prob[i];
                batch.rewards[i] + (1.0 - batch.terminals[i]) * cfg.gamma * soft
            })
            .collect();
        let closs = st.critics.fit(critic_input(obs.view(), batch.actions.view()).view(), &y);
        check(closs, "critic loss", step)?;
        self.stats.critic_losses.push(closs);

        if step % cfg.policy_update_freq == 0 {
            for _ in 0..cfg.policy_update_freq {
                let alpha = st.log_alpha.exp();
                let tape = self.net.forward_normalized(obs.view())?;
                let sigma_net: &Mlp<f64> = self.net.sigma_branch.as_ref().expect("sigma branch");
                let (raw, sigma_tape) = sigma_net.forward_tape(tape.x0.view());
                let s = sac::sample(&tape.mu, &raw, gaussian(&mut self.action_rng, n, ad));
                let q_tapes = st.critics.forward_online(critic_input(obs.view(), s.action.view()).view());
                let q_vals: Vec<Array2<f32>> = q_tapes.iter().map(|(q, _)| q.clone()).collect();
                let (min_q, dq) = sac::min_routing(&q_vals, 1.0 / n as f32);
                let d_action = st.critics.action_grad(&q_tapes, &dq);
                let coef = Array1::from_elem(n, alpha / n as f64);
                let (d_mu, d_raw) = sac::backward(&s, &d_action, &coef);
                let aloss = (0..n).map(|i| alpha * s.log_prob[i] - min_q[i]).sum::<f64>() / n as f64;
                check(aloss, "actor loss", step)?;
                self.stats.actor_losses.push(aloss);

                let grads = self.net.backward_mu(&tape, &d_mu);
                let (sigma_grads, _) = sigma_net.backward(&sigma_tape, &d_raw, false);
                if !grads.is_finite() || !sigma_grads.is_finite() {
                    return Err(RlError::NonFinite { what: "policy gradient", step });
                }
                self.optim.step(&mut self.net, &grads)?;
                let sigma_net = self.net.sigma_branch.as_mut().expect("sigma branch");
                st.sigma_opt.step(&mut sigma_net.params_mut(), &sigma_grads.slices());

                if let Some(opt) = st.alpha_opt.as_mut() {
                    let tape = self.net.forward_normalized(obs.view())?;
                    let raw = sigma_raw(&self.net, tape.x0.view());
                    let s = sac::sample(&tape.mu, &raw, gaussian(&mut self.action_rng, n, ad));
                    let mean = s.log_prob.iter().map(|lp| lp + st.target_entropy).sum::<f64>() / n as f64;
                    let g = -st.log_alpha.exp() * mean;
                    let mut la = [st.log_alpha];
                    opt.step(&mut [&mut la[..]], &[&[g][..]]);
                    st.log_alpha = la[0];
                    check(st.log_alpha, "entropy temperature", step)?;
                }
                self.stats.alphas.push(st.log_alpha.exp());
            }
        }
        if step % cfg.target_update_freq == 0 {
            st.critics.soft_update(cfg.tau);
        }
        Ok(())
    }

    fn update_ddpg(&mut self, step: usize, batch: &Batch) -> Result<(), RlError> {
        let cfg = self.config;
        let obs = self.net.preprocess(batch.obs.view())?;
        let next = self.net.preprocess(batch.next_obs.view())?;
        let n = obs.nrows();
        let Learner::Ddpg(st) = &mut self.learner else { unreachable!() };

        let next_a = st.target_actor.forward_normalized(next.view())?.action;
        let q_next = st.critics.target_min(critic_input(next.view(), next_a.view()).view());
        let y: Vec<f64> = (0..n)
            .map(|i| batch.rewards[i] + (1.0 - batch.terminals[i]) * cfg.gamma * q_next[i])
            .collect();
        let closs = st.critics.fit(critic_input(obs.view(), batch.actions.view()).view(), &y);
        check(closs, "critic loss", step)?;
        self.stats.critic_losses.push(closs);

        if step % cfg.policy_update_freq == 0 {
            let tape = self.net.forward_normalized(obs.view())?;
            let q_tapes = st.critics.forward_online(critic_input(obs.view(), tape.action.view()).view());
            let aloss = -CriticEnsemble::mean_q(&q_tapes[0].0);
            check(aloss, "actor loss", step)?;
            self.stats.actor_losses.push(aloss);
            let dq = vec![Array2::from_elem((n, 1), -1.0 / n as f32)];
            let d_action = st.critics.action_grad(&q_tapes, &dq);
            let grads = self.net.backward(&tape, &d_action);
            if !grads.is_finite() {
                return Err(RlError::NonFinite { what: "policy gradient", step });
            }
            self.optim.step(&mut self.net, &grads)?;
            st.target_actor.soft_update_from(&self.net, cfg.tau);
            st.critics.soft_update(cfg.tau);
        }
        Ok(())
    }

    fn frozen_policy(&self) -> PolicyNet {
        let mut p = self.net.deployment_copy();
        p.freeze();
        p
    }

    fn evaluate_now(&self) -> Result<EvalReport, RlError> {
        evaluate(&self.frozen_policy(), self.env, self.config.eval_episodes, self.config.seed)
    }
}

/// Train `net` on `env`. The returned policy is frozen and ready for lowering.
pub fn train(config: &TrainConfig, net: PolicyNet, env: &dyn Environment) -> Result<TrainOutput, RlError> {
    let mut tr = Trainer::new(config, env, net)?;
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let env_seed = seeds::mix(config.seed, seeds::stream::ENV);
    let mut state: EnvState = env.reset(seeds::mix(env_seed, episode));
    for step in 0..config.total_steps {
        let obs = env.observe(&state);
        tr.net.normalizer.update(&obs);
        let action = tr.explore(&obs, step)?;
        let t = env.step(&state, &action);
        let next_obs = env.observe(&t.state);
        tr.buffer.push(&obs, &action, t.reward, &next_obs, t.terminated);
        state = if t.done() {
            episode += 1;
            env.reset(seeds::mix(env_seed, episode))
        } else {
            t.state
        };
        if step >= config.learning_starts {
            tr.update(step)?;
        }
        if config.eval_interval > 0 && (step + 1) % config.eval_interval == 0 {
            let r = tr.evaluate_now()?;
            curve.push(CurvePoint { step: step + 1, mean_return: r.mean, std_return: r.std });
        }
    }
    if !tr.net.is_finite() {
        return Err(RlError::NonFinite { what: "policy parameters", step: config.total_steps });
    }
    Ok(TrainOutput { policy: tr.frozen_policy(), curve, stats: tr.stats })
}
