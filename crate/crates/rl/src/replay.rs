//! Fixed-capacity FIFO replay buffer with uniform minibatch sampling.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    terminals: Vec<bool>,
    /// Slot the next insert overwrites.
    head: usize,
    len: usize,
    inserted: u64,
}

/// A sampled minibatch; observations are raw (un-normalized).
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1.0 where the transition ended in a terminal state.
    pub terminals: Array1<f64>,
    pub indices: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        let reserve = capacity.min(1 << 16);
        ReplayBuffer {
            capacity,
            obs_dim,
            action_dim,
            obs: Vec::with_capacity(reserve * obs_dim),
            actions: Vec::with_capacity(reserve * action_dim),
            rewards: Vec::with_capacity(reserve),
            next_obs: Vec::with_capacity(reserve * obs_dim),
            terminals: Vec::with_capacity(reserve),
            head: 0,
            len: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total inserts so far, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], terminal: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(action.len(), self.action_dim);
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.terminals.push(terminal);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
            self.actions[i * self.action_dim..(i + 1) * self.action_dim].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(next_obs);
            self.terminals[i] = terminal;
        }
        self.head = (self.head + 1) % self.capacity;
        self.inserted += 1;
    }

    /// Reward stored in slot `i`.
    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    /// `batch` distinct slots chosen uniformly (all of them if fewer are stored).
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Batch {
        assert!(!self.is_empty(), "cannot sample an empty replay buffer");
        let n = batch.min(self.len);
        let indices = index::sample(rng, self.len, n).into_vec();
        let (od, ad) = (self.obs_dim, self.action_dim);
        let mut obs = Array2::zeros((n, od));
        let mut actions = Array2::zeros((n, ad));
        let mut next_obs = Array2::zeros((n, od));
        let mut rewards = Array1::zeros(n);
        let mut terminals = Array1::zeros(n);
        for (r, &i) in indices.iter().enumerate() {
            obs.row_mut(r).assign(&ndarray::ArrayView1::from(&self.obs[i * od..(i + 1) * od]));
            actions.row_mut(r).assign(&ndarray::ArrayView1::from(&self.actions[i * ad..(i + 1) * ad]));
            next_obs.row_mut(r).assign(&ndarray::ArrayView1::from(&self.next_obs[i * od..(i + 1) * od]));
            rewards[r] = self.rewards[i];
            terminals[r] = if self.terminals[i] { 1.0 } else { 0.0 };
        }
        Batch { obs, actions, rewards, next_obs, terminals, indices }
    }
}
