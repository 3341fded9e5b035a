//! Tanh-squashed Gaussian policy head used by SAC.

use ndarray::{Array1, Array2, Zip};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// One reparameterized draw per row.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub raw_tanh: Array2<f64>,
    pub std: Array2<f64>,
    pub eps: Array2<f64>,
    /// `tanh(mu + std * eps)`.
    pub action: Array2<f64>,
    /// Per-row log-density including the tanh correction.
    pub log_prob: Array1<f64>,
}

/// `raw` is the σ-branch output; it is squashed into `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn sample(mu: &Array2<f64>, raw: &Array2<f64>, eps: Array2<f64>) -> SquashedSample {
    let raw_tanh = raw.mapv(f64::tanh);
    let log_std = raw_tanh.mapv(|t| LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (t + 1.0));
    let std = log_std.mapv(f64::exp);
    let mut action = Array2::zeros(mu.raw_dim());
    let mut log_prob = Array1::zeros(mu.nrows());
    for i in 0..mu.nrows() {
        let mut lp = 0.0;
        for j in 0..mu.ncols() {
            let e = eps[[i, j]];
            let y = (mu[[i, j]] + std[[i, j]] * e).tanh();
            action[[i, j]] = y;
            lp += -0.5 * e * e - log_std[[i, j]] - HALF_LN_2PI - (1.0 - y * y + SQUASH_EPS).ln();
        }
        log_prob[i] = lp;
    }
    SquashedSample { raw_tanh, std, eps, action, log_prob }
}

/// Gradients of `sum_i [alpha_coef * log_prob_i + sum_j d_action_ij * action_ij]`
/// with respect to `mu` and the σ-branch output.
pub fn backward(s: &SquashedSample, d_action: &Array2<f64>, alpha_coef: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut d_mu = Array2::zeros(s.action.raw_dim());
    let mut d_raw = Array2::zeros(s.action.raw_dim());
    let half_range = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    for i in 0..s.action.nrows() {
        let a = alpha_coef[i];
        for j in 0..s.action.ncols() {
            let y = s.action[[i, j]];
            let one_m = 1.0 - y * y;
            let dx = d_action[[i, j]] * one_m + a * 2.0 * y * one_m / (one_m + SQUASH_EPS);
            d_mu[[i, j]] = dx;
            let d_log_std = dx * s.std[[i, j]] * s.eps[[i, j]] - a;
            let t = s.raw_tanh[[i, j]];
            d_raw[[i, j]] = d_log_std * half_range * (1.0 - t * t);
        }
    }
    (d_mu, d_raw)
}

/// Row-wise minimum of twin Q-values and the upstream gradient routing
/// `-scale` to whichever critic attained it.
pub fn min_routing(q: &[Array2<f32>], scale: f32) -> (Vec<f64>, Vec<Array2<f32>>) {
    let n = q[0].nrows();
    let mut mins = vec![f64::INFINITY; n];
    let mut which = vec![0usize; n];
    for (k, qk) in q.iter().enumerate() {
        for (i, v) in qk.column(0).iter().enumerate() {
            if (*v as f64) < mins[i] {
                mins[i] = *v as f64;
                which[i] = k;
            }
        }
    }
    let dq = (0..q.len())
        .map(|k| {
            let mut d = Array2::zeros((n, 1));
            Zip::indexed(&mut d).for_each(|(i, _), v| {
                if which[i] == k {
                    *v = -scale;
                }
            });
            d
        })
        .collect();
    (mins, dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(mu: &Array2<f64>, raw: &Array2<f64>, eps: &Array2<f64>, c: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
        let s = sample(mu, raw, eps.clone());
        (&s.action * c).sum() + (&s.log_prob * alpha).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, a) = (6, 2);
        let mu = Array2::from_shape_fn((n, a), |_| rng.gen_range(-1.5..1.5));
        let raw = Array2::from_shape_fn((n, a), |_| rng.gen_range(-1.0..1.0));
        let eps = Array2::from_shape_fn((n, a), |_| rng.gen_range(-2.0..2.0));
        let c = Array2::from_shape_fn((n, a), |_| rng.gen_range(-1.0..1.0));
        let alpha = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..0.5));
        let s = sample(&mu, &raw, eps.clone());
        let (d_mu, d_raw) = backward(&s, &c, &alpha);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..a {
                for (which, analytic) in [(0, d_mu[[i, j]]), (1, d_raw[[i, j]])] {
                    let (mut mp, mut mm, mut rp, mut rm) = (mu.clone(), mu.clone(), raw.clone(), raw.clone());
                    if which == 0 {
                        mp[[i, j]] += h;
                        mm[[i, j]] -= h;
                    } else {
                        rp[[i, j]] += h;
                        rm[[i, j]] -= h;
                    }
                    let fd = (objective(&mp, &rp, &eps, &c, &alpha) - objective(&mm, &rm, &eps, &c, &alpha)) / (2.0 * h);
                    assert!((fd - analytic).abs() <= 1e-5 * (1.0 + fd.abs()), "{which} ({i},{j}): {analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn log_std_bounds() {
        let mu = Array2::zeros((2, 1));
        let raw = Array2::from_shape_vec((2, 1), vec![-50.0, 50.0]).unwrap();
        let s = sample(&mu, &raw, Array2::zeros((2, 1)));
        assert!((s.std[[0, 0]] - LOG_STD_MIN.exp()).abs() < 1e-12);
        assert!((s.std[[1, 0]] - LOG_STD_MAX.exp()).abs() < 1e-9);
    }

    #[test]
    fn log_prob_matches_gaussian_at_zero() {
        let mu = Array2::zeros((1, 1));
        let raw = Array2::zeros((1, 1));
        let s = sample(&mu, &raw, Array2::zeros((1, 1)));
        let log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        assert!((s.log_prob[0] - (-log_std - HALF_LN_2PI - (1.0 + SQUASH_EPS).ln())).abs() < 1e-12);
    }

    #[test]
    fn min_routing_picks_smaller_critic() {
        let q1 = Array2::from_shape_vec((3, 1), vec![1.0f32, 5.0, -2.0]).unwrap();
        let q2 = Array2::from_shape_vec((3, 1), vec![2.0f32, 4.0, -3.0]).unwrap();
        let (m, dq) = min_routing(&[q1, q2], 0.5);
        assert_eq!(m, vec![1.0, 4.0, -3.0]);
        assert_eq!(dq[0].column(0).to_vec(), vec![-0.5, 0.0, 0.0]);
        assert_eq!(dq[1].column(0).to_vec(), vec![0.0, -0.5, -0.5]);
    }
}
