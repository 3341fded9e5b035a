//! Central finite-difference check of [`PolicyNet::backward`].
//!
//! Rounding is piecewise constant, so the check is meant for nets using the
//! clip-only surrogate ([`Rounding::Identity`](crate::quant::Rounding)) or no
//! quantization at all. Parameters whose perturbation moves any value across a
//! clip edge, a ReLU kink or changes a weight-scale argmax are skipped.

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::policy::{PolicyNet, Tape};
use crate::quant::QuantSpec;

pub const STEP: f64 = 1e-6;
/// Absolute slack for gradients that are zero up to finite-difference noise.
pub const ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn region(spec: &QuantSpec, x: f64) -> u8 {
    let v = spec.to_lattice(x);
    if v < spec.q_min() as f64 {
        0
    } else if v > spec.q_max() as f64 {
        2
    } else {
        1
    }
}

fn argmax_abs(w: &Array2<f64>) -> usize {
    w.iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
        .0
}

/// Which piece of the piecewise-smooth forward every value sits on.
fn signature(net: &PolicyNet, tape: &Tape) -> Vec<u8> {
    let mut sig = Vec::new();
    if let Some(spec) = &tape.input_spec {
        sig.extend(tape.x0.iter().map(|&x| region(spec, x)));
    }
    let n = tape.layers.len();
    for (l, (lt, layer)) in tape.layers.iter().zip(&net.layers).enumerate() {
        if let Some(spec) = &lt.weight_spec {
            sig.extend(layer.weights.iter().map(|&w| region(spec, w)));
            sig.extend((argmax_abs(&layer.weights) as u64).to_le_bytes());
        }
        if let Some(spec) = &lt.bias_spec {
            sig.extend(layer.bias.iter().map(|&b| region(spec, b)));
        }
        if l + 1 < n {
            sig.extend(lt.z.iter().map(|&z| u8::from(z > 0.0)));
        }
        if let Some(spec) = &lt.out_spec {
            sig.extend(lt.site.iter().map(|&x| region(spec, x)));
        }
    }
    sig
}

fn loss(net: &PolicyNet, obs: ArrayView2<f64>, upstream: &Array2<f64>) -> Result<(f64, Vec<u8>)> {
    let tape = net.forward(obs)?;
    Ok(((&tape.action * upstream).sum(), signature(net, &tape)))
}

/// Compare analytic gradients of `sum(upstream * action)` with central differences
/// for every weight, bias and activation log-scale.
pub fn check(net: &PolicyNet, obs: ArrayView2<f64>, upstream: &Array2<f64>, rel_tol: f64) -> Result<GradCheckReport> {
    let tape = net.forward(obs)?;
    let base_sig = signature(net, &tape);
    let grads = net.backward(&tape, upstream);
    let mut report = GradCheckReport::default();

    let mut compare = |name: String, analytic: f64, plus: (f64, Vec<u8>), minus: (f64, Vec<u8>)| {
        if plus.1 != base_sig || minus.1 != base_sig {
            report.skipped += 1;
            return;
        }
        let fd = (plus.0 - minus.0) / (2.0 * STEP);
        let err = (fd - analytic).abs();
        let scale = fd.abs().max(analytic.abs());
        report.checked += 1;
        // near-zero pairs pass on the absolute floor; their ratio says nothing
        if scale > ABS_FLOOR / rel_tol {
            report.max_rel_error = report.max_rel_error.max(err / scale);
        }
        if err > rel_tol * scale + ABS_FLOOR {
            report.failures.push(format!("{name}: analytic {analytic:e}, finite difference {fd:e}"));
        }
    };

    for l in 0..net.layers.len() {
        for i in 0..net.layers[l].weights.len() {
            let mut p = net.clone();
            p.layers[l].weights.as_slice_mut().expect("standard layout")[i] += STEP;
            let mut m = net.clone();
            m.layers[l].weights.as_slice_mut().expect("standard layout")[i] -= STEP;
            let a = grads.weights[l].as_slice().expect("standard layout")[i];
            compare(format!("layer {l} weight {i}"), a, loss(&p, obs, upstream)?, loss(&m, obs, upstream)?);
        }
        for i in 0..net.layers[l].bias.len() {
            let mut p = net.clone();
            p.layers[l].bias[i] += STEP;
            let mut m = net.clone();
            m.layers[l].bias[i] -= STEP;
            compare(format!("layer {l} bias {i}"), grads.bias[l][i], loss(&p, obs, upstream)?, loss(&m, obs, upstream)?);
        }
    }
    let n_scales = grads.log_scales.len();
    for k in 0..n_scales {
        let shifted = |delta: f64| -> Result<PolicyNet> {
            let mut q = net.clone();
            let state = if k == 0 {
                q.input_quant.as_mut()
            } else {
                q.layers[k - 1].out_quant.as_mut()
            };
            if let Some(s) = state {
                s.spec = s.spec.with_scale((s.spec.scale().ln() + delta).exp())?;
            }
            Ok(q)
        };
        let (p, m) = (shifted(STEP)?, shifted(-STEP)?);
        compare(format!("log-scale {k}"), grads.log_scales[k], loss(&p, obs, upstream)?, loss(&m, obs, upstream)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::QuantConfig;
    use crate::quant::Rounding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(quant: Option<QuantConfig>, seed: u64) -> (PolicyNet, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = PolicyNet::new(3, 2, 5, quant, &mut rng);
        net.rounding = Rounding::Identity;
        for s in [net.input_quant.as_mut()].into_iter().flatten() {
            s.spec = s.spec.with_scale(1.5).unwrap();
        }
        for l in &mut net.layers {
            if let Some(s) = l.out_quant.as_mut() {
                s.spec = s.spec.with_scale(rng.gen_range(0.3..1.0)).unwrap();
            }
        }
        net.freeze();
        let obs = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        let up = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        (net, obs, up)
    }

    #[test]
    fn fp32_gradients_match() {
        let (n, obs, up) = net(None, 1);
        let r = check(&n, obs.view(), &up, 1e-4).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
        assert!(r.checked > 40);
    }

    #[test]
    fn surrogate_gradients_match() {
        for seed in 0..10 {
            let (n, obs, up) = net(Some(QuantConfig::uniform(3)), seed);
            let r = check(&n, obs.view(), &up, 1e-4).unwrap();
            assert!(r.passed(), "seed {seed}: {:?}", r.failures);
            assert!(r.checked > r.skipped);
        }
    }
}
