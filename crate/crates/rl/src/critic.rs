//! FP32 action-value networks with target copies.

use ndarray::{s, Array2, ArrayView2, Axis};
use qpolicy_core::adam::Adam;
use qpolicy_core::mlp::{Mlp, MlpGrads, MlpTape};
use rand::Rng;

/// `[obs | action]` as f32 rows.
pub fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f32> {
    let n = obs.nrows();
    let mut x = Array2::zeros((n, obs.ncols() + actions.ncols()));
    x.slice_mut(s![.., ..obs.ncols()]).assign(&obs.mapv(|v| v as f32));
    x.slice_mut(s![.., obs.ncols()..]).assign(&actions.mapv(|v| v as f32));
    x
}

/// One or more Q-networks trained jointly, each with a soft-updated target.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    pub online: Vec<Mlp<f32>>,
    pub target: Vec<Mlp<f32>>,
    optim: Adam<f32>,
    obs_dim: usize,
}

impl CriticEnsemble {
    pub fn new<R: Rng>(count: usize, obs_dim: usize, action_dim: usize, hidden: usize, lr: f64, rng: &mut R) -> Self {
        let sizes = [obs_dim + action_dim, hidden, hidden, 1];
        let online: Vec<Mlp<f32>> = (0..count).map(|_| Mlp::new(&sizes, rng)).collect();
        let target = online.clone();
        let param_sizes: Vec<usize> = online.iter().flat_map(|q| q.param_sizes()).collect();
        CriticEnsemble { online, target, optim: Adam::new(lr as f32, &param_sizes), obs_dim }
    }

    /// Element-wise minimum over target critics, as f64.
    pub fn target_min(&self, x: ArrayView2<f32>) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; x.nrows()];
        for q in &self.target {
            for (o, v) in out.iter_mut().zip(q.forward(x).column(0)) {
                *o = o.min(*v as f64);
            }
        }
        out
    }

    /// One regression step of every online critic towards `y`; returns the summed MSE.
    pub fn fit(&mut self, x: ArrayView2<f32>, y: &[f64]) -> f64 {
        let n = x.nrows() as f32;
        let target = Array2::from_shape_fn((y.len(), 1), |(i, _)| y[i] as f32);
        let mut loss = 0.0f64;
        let mut grads: Vec<MlpGrads<f32>> = Vec::with_capacity(self.online.len());
        for q in &self.online {
            let (pred, tape) = q.forward_tape(x);
            let err = &pred - &target;
            loss += err.iter().map(|e| (*e as f64) * (*e as f64)).sum::<f64>() / n as f64;
            let dy = err.mapv(|e| 2.0 * e / n);
            grads.push(q.backward(&tape, &dy, false).0);
        }
        let slices: Vec<&[f32]> = grads.iter().flat_map(|g| g.slices()).collect();
        let mut params: Vec<&mut [f32]> = self.online.iter_mut().flat_map(|q| q.params_mut()).collect();
        self.optim.step(&mut params, &slices);
        loss
    }

    /// Online Q-values with tapes, for differentiating with respect to the action.
    pub fn forward_online(&self, x: ArrayView2<f32>) -> Vec<(Array2<f32>, MlpTape<f32>)> {
        self.online.iter().map(|q| q.forward_tape(x)).collect()
    }

    /// `d(sum_k sum_i dq[k][i] * Q_k(x_i)) / d action`, as f64 rows.
    pub fn action_grad(&self, tapes: &[(Array2<f32>, MlpTape<f32>)], dq: &[Array2<f32>]) -> Array2<f64> {
        let mut total: Option<Array2<f32>> = None;
        for ((q, (_, tape)), d) in self.online.iter().zip(tapes).zip(dq) {
            let dx = q.backward(tape, d, true).1.expect("input gradient requested");
            let da = dx.slice(s![.., self.obs_dim..]).to_owned();
            total = Some(match total {
                Some(t) => t + &da,
                None => da,
            });
        }
        total.expect("at least one critic").mapv(|v| v as f64)
    }

    pub fn soft_update(&mut self, tau: f64) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.soft_update_from(o, tau as f32);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.online.iter().all(Mlp::is_finite)
    }

    pub fn mean_q(values: &Array2<f32>) -> f64 {
        values.mean_axis(Axis(0)).map_or(0.0, |m| m[0] as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fit_reduces_loss_on_fixed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = CriticEnsemble::new(2, 3, 1, 32, 1e-3, &mut rng);
        let x = Array2::from_shape_fn((64, 4), |_| rng.gen_range(-1.0f32..1.0));
        let y: Vec<f64> = x.rows().into_iter().map(|r| (r[0] - 2.0 * r[3]) as f64).collect();
        let first = c.fit(x.view(), &y);
        let mut last = first;
        for _ in 0..300 {
            last = c.fit(x.view(), &y);
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn action_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = CriticEnsemble::new(2, 3, 2, 16, 1e-3, &mut rng);
        let obs = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let act = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let tapes = c.forward_online(critic_input(obs.view(), act.view()).view());
        let dq = vec![Array2::from_elem((5, 1), 1.0f32), Array2::from_elem((5, 1), 0.5f32)];
        let g = c.action_grad(&tapes, &dq);
        let value = |a: &Array2<f64>| {
            let x = critic_input(obs.view(), a.view());
            (c.online[0].forward(x.view()).sum() + 0.5 * c.online[1].forward(x.view()).sum()) as f64
        };
        let h = 1e-2;
        for i in 0..5 {
            for j in 0..2 {
                let mut p = act.clone();
                p[[i, j]] += h;
                let mut m = act.clone();
                m[[i, j]] -= h;
                let fd = (value(&p) - value(&m)) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-3, "{fd} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn soft_update_moves_target_toward_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = CriticEnsemble::new(1, 2, 1, 8, 1e-3, &mut rng);
        c.online[0].layers[0].w.fill(1.0);
        let before = c.target[0].layers[0].w.clone();
        c.soft_update(0.25);
        for (t, b) in c.target[0].layers[0].w.iter().zip(&before) {
            assert_eq!(*t, 0.75 * b + 0.25);
        }
    }
}
