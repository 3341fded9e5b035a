use num_traits::Float;

/// Adam with bias correction, applied to a fixed list of parameter slices.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: F, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            eps: F::from(1e-8).unwrap(),
            step: 0,
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn lr(&self) -> F {
        self.lr
    }

    /// One update. `params` and `grads` must match the sizes given at construction.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), self.m.len(), "parameter group count changed");
        self.step += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        let step_size = self.lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            assert_eq!(p.len(), m.len(), "parameter group {i} changed size");
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (one - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (one - self.beta2) * gj * gj;
                let denom = v[j].sqrt() / bc2_sqrt + self.eps;
                p[j] = p[j] - step_size * m[j] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = Adam::new(0.1f64, &[2]);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut [&mut p], &[&[2.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(0.05f32, &[1]);
        let mut p = vec![3.0f32];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
