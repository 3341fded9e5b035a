use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the variance before the square root.
pub const NORM_EPS: f64 = 1e-8;

/// Per-dimension running standardization of observations (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    #[serde(with = "crate::real::vec")]
    mean: Vec<f64>,
    #[serde(with = "crate::real::vec")]
    var: Vec<f64>,
    count: u64,
    frozen: bool,
    /// When false, observations pass through unchanged.
    #[serde(default = "enabled_default")]
    enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Normalizer { mean: vec![0.0; dim], var: vec![1.0; dim], count: 0, frozen: false, enabled: true }
    }

    /// A pass-through normalizer.
    pub fn disabled(dim: usize) -> Self {
        Normalizer { enabled: false, ..Self::new(dim) }
    }

    /// A frozen normalizer with given statistics.
    pub fn from_stats(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimMismatch { expected: mean.len(), actual: var.len() });
        }
        if var.iter().chain(&mean).any(|v| !v.is_finite()) || var.iter().any(|v| *v < 0.0) {
            return Err(Error::Format("normalizer statistics must be finite, variances nonnegative".into()));
        }
        Ok(Normalizer { mean, var, count: 1, frozen: true, enabled: true })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Welford update with one observation; no-op when frozen or disabled.
    pub fn update(&mut self, obs: &[f64]) {
        if self.frozen || !self.enabled {
            return;
        }
        debug_assert_eq!(obs.len(), self.dim());
        if self.count == 0 {
            self.mean.copy_from_slice(obs);
            self.var.iter_mut().for_each(|v| *v = 0.0);
            self.count = 1;
            return;
        }
        let n = (self.count + 1) as f64;
        for ((m, v), &x) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(obs) {
            let delta = x - *m;
            *m += delta / n;
            *v = (*v * (n - 1.0) + delta * (x - *m)) / n;
        }
        self.count += 1;
    }

    pub fn normalize_into(&self, obs: &[f64], out: &mut [f64]) {
        if !self.enabled {
            out.copy_from_slice(obs);
            return;
        }
        for (((o, &x), m), v) in out.iter_mut().zip(obs).zip(&self.mean).zip(&self.var) {
            *o = (x - m) / (v + NORM_EPS).sqrt();
        }
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; obs.len()];
        self.normalize_into(obs, &mut out);
        out
    }
}
