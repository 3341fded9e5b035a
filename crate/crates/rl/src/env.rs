//! Built-in deterministic control tasks.
//!
//! Environments are functional: `reset(seed)` builds a state and `step` maps a
//! state and action to the next state without hidden mutation. Actions are
//! clipped to `[-1, 1]` per component before use.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds;

pub const EPISODE_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub physical: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    /// Reached a terminal state (never bootstrapped through).
    pub terminated: bool,
    /// Hit the time limit (still bootstrapped through).
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize {
        EPISODE_STEPS
    }
    fn reset(&self, seed: u64) -> EnvState;
    fn step(&self, state: &EnvState, action: &[f64]) -> Transition;
    fn observe(&self, state: &EnvState) -> Vec<f64>;
}

fn clip_action(a: f64) -> f64 {
    if a.is_nan() {
        0.0
    } else {
        a.clamp(-1.0, 1.0)
    }
}

/// Wrap an angle to `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Torque-limited pendulum swing-up; `theta = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    pub max_speed: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub g: f64,
    pub m: f64,
    pub l: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum { max_speed: 8.0, max_torque: 2.0, dt: 0.05, g: 10.0, m: 1.0, l: 1.0 }
    }
}

impl Pendulum {
    pub fn state(theta: f64, theta_dot: f64) -> EnvState {
        EnvState { physical: vec![theta, theta_dot], t: 0 }
    }
}

impl Environment for Pendulum {
    fn obs_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = seeds::rng(seed, seeds::stream::ENV);
        Pendulum::state(rng.gen_range(-PI..PI), rng.gen_range(-1.0..1.0))
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Transition {
        let (th, thdot) = (state.physical[0], state.physical[1]);
        let u = clip_action(action[0]) * self.max_torque;
        let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
        let acc = 3.0 * self.g / (2.0 * self.l) * th.sin() + 3.0 / (self.m * self.l * self.l) * u;
        let new_thdot = (thdot + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_th = th + new_thdot * self.dt;
        let t = state.t + 1;
        Transition {
            state: EnvState { physical: vec![new_th, new_thdot], t },
            reward: -cost,
            terminated: false,
            truncated: t >= self.max_steps(),
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        let (th, thdot) = (state.physical[0], state.physical[1]);
        vec![th.cos(), th.sin(), thdot]
    }
}

/// Planar point mass driven by a bounded acceleration towards the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub max_accel: f64,
    pub init_range: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass { dt: 0.05, max_accel: 1.0, init_range: 1.0 }
    }
}

impl Environment for PointMass {
    fn obs_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = seeds::rng(seed, seeds::stream::ENV);
        let r = self.init_range;
        EnvState { physical: vec![rng.gen_range(-r..r), rng.gen_range(-r..r), 0.0, 0.0], t: 0 }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Transition {
        let p = &state.physical;
        let u = [clip_action(action[0]) * self.max_accel, clip_action(action[1]) * self.max_accel];
        let reward = -(p[0] * p[0] + p[1] * p[1]) - 0.001 * (u[0] * u[0] + u[1] * u[1]);
        let vx = p[2] + u[0] * self.dt;
        let vy = p[3] + u[1] * self.dt;
        let t = state.t + 1;
        Transition {
            state: EnvState { physical: vec![p[0] + vx * self.dt, p[1] + vy * self.dt, vx, vy], t },
            reward,
            terminated: false,
            truncated: t >= self.max_steps(),
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.physical.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn build(self) -> Box<dyn Environment> {
        match self {
            EnvKind::Pendulum => Box::new(Pendulum::default()),
            EnvKind::PointMass => Box::new(PointMass::default()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
        })
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" | "point-mass" => Ok(EnvKind::PointMass),
            other => Err(format!("unknown environment '{other}' (expected pendulum or pointmass)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let env = Pendulum::default();
        assert_eq!(env.reset(0), env.reset(0));
        assert_ne!(env.reset(0), env.reset(1));
        let pm = PointMass::default();
        assert_eq!(pm.reset(3), pm.reset(3));
    }

    #[test]
    fn point_mass_at_rest_at_origin_earns_zero() {
        let env = PointMass::default();
        let s = EnvState { physical: vec![0.0; 4], t: 0 };
        let tr = env.step(&s, &[0.0, 0.0]);
        assert_eq!(tr.reward, 0.0);
        assert_eq!(tr.state.physical, vec![0.0; 4]);
    }

    #[test]
    fn hanging_pendulum_stays_down() {
        let env = Pendulum::default();
        let mut s = Pendulum::state(PI, 0.0);
        for _ in 0..EPISODE_STEPS {
            let tr = env.step(&s, &[0.0]);
            assert!((tr.reward + PI * PI).abs() < 1e-6, "{}", tr.reward);
            s = tr.state;
        }
        assert!((s.physical[0] - PI).abs() < 1e-6);
    }

    #[test]
    fn pendulum_step_matches_closed_form() {
        let env = Pendulum::default();
        let s = Pendulum::state(0.3, -0.5);
        let tr = env.step(&s, &[0.25]);
        let u = 0.5;
        let thdot = -0.5 + (15.0 * 0.3f64.sin() + 3.0 * u) * 0.05;
        assert_eq!(tr.state.physical, vec![0.3 + thdot * 0.05, thdot]);
        assert!((tr.reward + (0.09 + 0.1 * 0.25 + 0.001 * u * u)).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clipped() {
        let env = Pendulum::default();
        let s = Pendulum::state(1.0, 0.0);
        assert_eq!(env.step(&s, &[5.0]), env.step(&s, &[1.0]));
        assert_eq!(env.step(&s, &[-7.0]), env.step(&s, &[-1.0]));
    }

    #[test]
    fn speed_is_bounded_and_episode_truncates() {
        let env = Pendulum::default();
        let mut s = env.reset(4);
        for t in 1..=EPISODE_STEPS {
            let tr = env.step(&s, &[1.0]);
            assert!(tr.state.physical[1].abs() <= 8.0);
            assert_eq!(tr.truncated, t == EPISODE_STEPS);
            assert!(!tr.terminated);
            s = tr.state;
        }
    }

    #[test]
    fn angle_wraps() {
        assert!((angle_normalize(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(angle_normalize(0.5), 0.5);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("pendulum".parse::<EnvKind>().unwrap(), EnvKind::Pendulum);
        assert_eq!(EnvKind::PointMass.to_string().parse::<EnvKind>().unwrap(), EnvKind::PointMass);
        assert!("hopper".parse::<EnvKind>().is_err());
    }
}
