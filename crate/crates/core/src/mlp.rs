//! Plain float multilayer perceptron with ReLU hidden layers and a linear head.
//!
//! Used for the FP32 critics and for the training-only σ-branch of SAC policies.

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar: Float + LinalgScalar + ScalarOperand + Send + Sync + std::fmt::Debug {}
impl<T: Float + LinalgScalar + ScalarOperand + Send + Sync + std::fmt::Debug> Scalar for T {}

/// `a . b`, always row-major. `dot` may hand back column-major results for thin shapes.
pub fn matmul<F: Scalar>(a: ArrayView2<F>, b: ArrayView2<F>) -> Array2<F> {
    let c = a.dot(&b);
    if c.is_standard_layout() {
        c
    } else {
        c.as_standard_layout().into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `out x in`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for weights and bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = Array2::from_shape_fn((output, input), |_| F::from(rng.gen_range(-bound..bound)).unwrap());
        let b = Array1::from_shape_fn(output, |_| F::from(rng.gen_range(-bound..bound)).unwrap());
        Dense { w, b }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn apply(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut z = matmul(x, self.w.t());
        for mut row in z.rows_mut() {
            row.zip_mut_with(&self.b, |a, &b| *a = *a + b);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Activations saved by [`Mlp::forward_tape`].
#[derive(Debug, Clone)]
pub struct MlpTape<F> {
    inputs: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads<F> {
    pub w: Vec<Array2<F>>,
    pub b: Vec<Array1<F>>,
}

impl<F: Scalar> MlpGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(self.w.len() * 2);
        for (w, b) in self.w.iter().zip(&self.b) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[inline]
fn relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

impl<F: Scalar> Mlp<F> {
    /// `sizes = [in, hidden.., out]`.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let layers = sizes.windows(2).map(|p| Dense::init(p[0], p[1], rng)).collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].apply(x);
        if last > 0 {
            h.mapv_inplace(relu);
        }
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.apply(h.view());
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        h
    }

    pub fn forward_tape(&self, x: ArrayView2<F>) -> (Array2<F>, MlpTape<F>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(h.view());
            inputs.push(h);
            h = if l < last { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        (h, MlpTape { inputs, pre })
    }

    /// Gradients of `sum(dy * y)` with respect to parameters and, optionally, the input.
    pub fn backward(&self, tape: &MlpTape<F>, dy: &Array2<F>, want_input_grad: bool) -> (MlpGrads<F>, Option<Array2<F>>) {
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut dz = dy.clone();
        let mut dx = None;
        for l in (0..n).rev() {
            gw.push(matmul(dz.t(), tape.inputs[l].view()));
            gb.push(dz.sum_axis(Axis(0)));
            if l > 0 || want_input_grad {
                let mut d = matmul(dz.view(), self.layers[l].w.view());
                if l > 0 {
                    ndarray::Zip::from(&mut d).and(&tape.pre[l - 1]).for_each(|g, &z| {
                        if z <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    dz = d;
                } else {
                    dx = Some(d);
                }
            }
        }
        gw.reverse();
        gb.reverse();
        (MlpGrads { w: gw, b: gb }, dx)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// `self <- (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &Mlp<F>, tau: F) {
        let keep = F::one() - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.zip_mut_with(&o.w, |a, &b| *a = keep * *a + tau * b);
            t.b.zip_mut_with(&o.b, |a, &b| *a = keep * *a + tau * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseDoc {
    #[serde(with = "crate::real::matrix")]
    pub weights: Vec<Vec<f64>>,
    #[serde(with = "crate::real::vec")]
    pub bias: Vec<f64>,
}

pub fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Format("matrix must be non-empty and rectangular".into()));
    }
    Ok(Array2::from_shape_vec((r, c), rows.concat()).expect("shape checked"))
}

impl Mlp<f64> {
    pub fn to_doc(&self) -> Vec<DenseDoc> {
        self.layers
            .iter()
            .map(|l| DenseDoc { weights: matrix_rows(&l.w), bias: l.b.to_vec() })
            .collect()
    }

    pub fn from_doc(doc: &[DenseDoc]) -> Result<Self> {
        let mut layers = Vec::with_capacity(doc.len());
        for d in doc {
            let w = matrix_from_rows(&d.weights)?;
            if d.bias.len() != w.nrows() {
                return Err(Error::DimMismatch { expected: w.nrows(), actual: d.bias.len() });
            }
            layers.push(Dense { w, b: Array1::from(d.bias.clone()) });
        }
        if layers.is_empty() || layers.windows(2).any(|p| p[0].output_dim() != p[1].input_dim()) {
            return Err(Error::Format("inconsistent layer shapes".into()));
        }
        Ok(Mlp { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp<f64>, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        (net.forward(x.view()) * c).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f64>::new(&[3, 5, 4, 2], &mut rng);
        let x = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let c = Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0));
        let (_, tape) = net.forward_tape(x.view());
        let (grads, dx) = net.backward(&tape, &c, true);
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for idx in 0..net.layers[l].w.len() {
                let mut p = net.clone();
                p.layers[l].w.as_slice_mut().unwrap()[idx] += h;
                let mut m = net.clone();
                m.layers[l].w.as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&p, &x, &c) - loss(&m, &x, &c)) / (2.0 * h);
                let g = grads.w[l].as_slice().unwrap()[idx];
                assert!((fd - g).abs() <= 1e-6 * (1.0 + fd.abs()), "layer {l} w[{idx}]: {g} vs {fd}");
            }
        }
        let dx = dx.unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = (loss(&net, &xp, &c) - loss(&net, &xm, &c)) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn soft_update_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Mlp::<f32>::new(&[2, 3, 1], &mut rng);
        let mut target = Mlp::<f32>::new(&[2, 3, 1], &mut rng);
        let before = target.clone();
        target.soft_update_from(&online, 0.005);
        for l in 0..2 {
            for ((t, b), o) in target.layers[l].w.iter().zip(&before.layers[l].w).zip(&online.layers[l].w) {
                assert_eq!(*t, 0.995 * b + 0.005 * o);
            }
        }
    }

    #[test]
    fn doc_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::<f64>::new(&[3, 4, 2], &mut rng);
        let json = serde_json::to_string(&net.to_doc()).unwrap();
        let doc: Vec<DenseDoc> = serde_json::from_str(&json).unwrap();
        assert_eq!(Mlp::from_doc(&doc).unwrap(), net);
    }
}
