//! Fake-quant policy MLP.
//!
//! Deployment path: `normalize -> clip -> QDQ_in -> [matvec -> +bias -> ReLU -> QDQ_act] x 2
//! -> matvec -> +bias -> QDQ_out -> tanh`. Weights are fake-quantized with a
//! per-tensor absmax scale recomputed on every forward pass; biases with a
//! 24-bit quantizer at accumulator scale so that bias addition is exact in the
//! integer graph. A policy built without a [`QuantConfig`] is the plain FP32
//! network with the same topology.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::mlp::{matmul, matrix_from_rows, matrix_rows, DenseDoc, Mlp};
use crate::normalizer::Normalizer;
use crate::quant::{
    qdq_scale_grad, round_half_even, ste_grad, weight_scale, QuantSpec, Rounding, ScaleState, SteMode, SCALE_FLOOR,
};

/// Normalized observations are clipped to `[-NORM_CLIP, NORM_CLIP]` before input quantization.
pub const NORM_CLIP: f64 = 10.0;
/// Bitwidth of the bias quantizer.
pub const BIAS_BITS: u32 = 24;
/// Hidden width of the SAC σ-branch.
pub const SIGMA_HIDDEN: usize = 64;
/// Number of hidden layers of every policy.
pub const HIDDEN_LAYERS: usize = 2;

const FORMAT: &str = "qpolicy-policy";
const VERSION: u32 = 1;

/// Bitwidths of the policy's quantizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuantConfig {
    pub input_bits: u32,
    /// All weight matrices.
    pub weight_bits: u32,
    /// Post-ReLU hidden activations.
    pub act_bits: u32,
    /// The pre-tanh output.
    pub output_bits: u32,
}

impl QuantConfig {
    pub fn uniform(bits: u32) -> Self {
        QuantConfig { input_bits: bits, weight_bits: bits, act_bits: bits, output_bits: bits }
    }

    /// Core precision `core` for weights and hidden activations, with explicit input/output bits.
    pub fn core(core: u32, input_bits: u32, output_bits: u32) -> Self {
        QuantConfig { input_bits, weight_bits: core, act_bits: core, output_bits }
    }
}

/// One affine layer and the quantizer on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub weight_bits: Option<u32>,
    /// Unsigned after hidden layers, signed on the final pre-tanh output.
    pub out_quant: Option<ScaleState>,
}

impl PolicyLayer {
    pub fn weight_spec(&self) -> Option<QuantSpec> {
        self.weight_bits
            .map(|b| QuantSpec::signed(b, weight_scale(self.weights.iter())).expect("absmax scale is positive"))
    }

    pub fn out_spec(&self) -> Option<QuantSpec> {
        self.out_quant.as_ref().map(|s| s.spec)
    }
}

/// Bias quantizer whose unit equals the product of input and weight units.
pub fn bias_spec(input: &QuantSpec, weight: &QuantSpec) -> QuantSpec {
    let bits = bias_bits(input.bits(), weight.bits());
    let q_s = (1i64 << (bits - 1)) as f64;
    QuantSpec::signed(bits, input.unit() * weight.unit() * q_s).expect("product of positive units")
}

/// 24 bits, widened for wide inputs/weights so the bias range stays at least
/// `2^9` times the product of the input and weight scales.
pub fn bias_bits(input_bits: u32, weight_bits: u32) -> u32 {
    BIAS_BITS.max(input_bits + weight_bits + 8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    obs_dim: usize,
    action_dim: usize,
    hidden: usize,
    pub normalizer: Normalizer,
    quant: Option<QuantConfig>,
    pub input_quant: Option<ScaleState>,
    pub layers: Vec<PolicyLayer>,
    /// Training-only FP32 branch producing SAC's pre-squash log-σ.
    pub sigma_branch: Option<Mlp<f64>>,
    pub ste: SteMode,
    /// Forward rounding; [`Rounding::Identity`] exists for gradient checking.
    pub rounding: Rounding,
    /// Training seed, carried as metadata.
    pub seed: Option<u64>,
}

/// Record of one layer's forward pass.
#[derive(Debug, Clone)]
pub struct LayerTape {
    /// The (fake-quantized) input to the matvec.
    pub input: Array2<f64>,
    /// The (fake-quantized) weights used.
    pub weights: Array2<f64>,
    pub weight_spec: Option<QuantSpec>,
    pub bias_spec: Option<QuantSpec>,
    /// Pre-activation including bias.
    pub z: Array2<f64>,
    /// Value presented to the output quantizer: `relu(z)` for hidden layers, `z` for the last.
    pub site: Array2<f64>,
    pub out_spec: Option<QuantSpec>,
}

/// Everything [`PolicyNet::backward`] needs, plus the quantized intermediates.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Clipped normalized observation, i.e. the input quantizer's argument.
    pub x0: Array2<f64>,
    pub input_spec: Option<QuantSpec>,
    pub layers: Vec<LayerTape>,
    /// Quantized pre-tanh output.
    pub mu: Array2<f64>,
    pub action: Array2<f64>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.x0.nrows()
    }

    /// Integer codes at every quantizer site: input, each hidden activation, and the output.
    pub fn codes(&self) -> Option<Vec<Array2<i64>>> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let spec = self.input_spec?;
        out.push(self.x0.mapv(|x| spec.code(x)));
        for l in &self.layers {
            let spec = l.out_spec?;
            out.push(l.site.mapv(|x| spec.code(x)));
        }
        Some(out)
    }
}

/// Gradients of a scalar loss with respect to every policy parameter.
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
    /// Gradients with respect to log-scales: input quantizer first, then each layer's output quantizer.
    pub log_scales: Vec<f64>,
}

impl PolicyGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.log_scales.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Straight-through backward through a quantizer: rewrites `grad` in place and
/// returns the gradient with respect to the scale. Same results as
/// [`ste_grad`] and [`qdq_scale_grad`] applied elementwise.
fn quant_backward(grad: &mut Array2<f64>, x: &Array2<f64>, spec: &QuantSpec, rounding: Rounding, ste: SteMode) -> f64 {
    let spec = *spec;
    let (lo, hi, qs) = (spec.q_min() as f64, spec.q_max() as f64, spec.q_s() as f64);
    let half_even = rounding == Rounding::HalfEven;
    let clipped = ste == SteMode::Clipped;
    let mut gs = 0.0;
    Zip::from(grad).and(x).for_each(|g, &x| {
        let v = spec.to_lattice(x);
        let d = if v < lo {
            lo / qs
        } else if v > hi {
            hi / qs
        } else if half_even {
            (round_half_even(v) - v) / qs
        } else {
            0.0
        };
        gs += *g * d;
        if clipped && !(v >= lo && v <= hi) {
            *g = 0.0;
        }
    });
    gs
}

impl PolicyNet {
    /// A fresh policy with two hidden layers of width `hidden`.
    pub fn new<R: Rng>(obs_dim: usize, action_dim: usize, hidden: usize, quant: Option<QuantConfig>, rng: &mut R) -> Self {
        let sizes = [obs_dim, hidden, hidden, action_dim];
        let mlp = Mlp::<f64>::new(&sizes, rng);
        let n = mlp.layers.len();
        let layers = mlp
            .layers
            .into_iter()
            .enumerate()
            .map(|(l, d)| {
                let out_quant = quant.map(|q| {
                    let spec = if l + 1 < n {
                        QuantSpec::unsigned(q.act_bits, 1.0)
                    } else {
                        QuantSpec::signed(q.output_bits, 1.0)
                    };
                    ScaleState::new(spec.expect("valid bitwidth"))
                });
                PolicyLayer { weights: d.w, bias: d.b, weight_bits: quant.map(|q| q.weight_bits), out_quant }
            })
            .collect();
        PolicyNet {
            obs_dim,
            action_dim,
            hidden,
            normalizer: Normalizer::new(obs_dim),
            quant,
            input_quant: quant.map(|q| ScaleState::new(QuantSpec::signed(q.input_bits, 1.0).expect("valid bitwidth"))),
            layers,
            sigma_branch: None,
            ste: SteMode::Clipped,
            rounding: Rounding::HalfEven,
            seed: None,
        }
    }

    /// Adds the FP32 σ-branch used by SAC during training.
    pub fn with_sigma_branch<R: Rng>(mut self, rng: &mut R) -> Self {
        self.sigma_branch = Some(Mlp::new(&[self.obs_dim, SIGMA_HIDDEN, self.action_dim], rng));
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn quant(&self) -> Option<QuantConfig> {
        self.quant
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    /// Scale states in gradient order: input first, then each layer's output.
    pub fn scale_states(&self) -> Vec<&ScaleState> {
        self.input_quant.iter().chain(self.layers.iter().filter_map(|l| l.out_quant.as_ref())).collect()
    }

    fn scale_states_mut(&mut self) -> Vec<&mut ScaleState> {
        self.input_quant.iter_mut().chain(self.layers.iter_mut().filter_map(|l| l.out_quant.as_mut())).collect()
    }

    /// Fix every scale and the normalizer for evaluation and lowering.
    pub fn freeze(&mut self) {
        self.normalizer.freeze();
        for s in self.scale_states_mut() {
            s.warmup_steps_remaining = 0;
            s.learnable = false;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.normalizer.is_frozen() && self.scale_states().iter().all(|s| !s.trainable() && !s.in_warmup())
    }

    /// Drop training-only state (the σ-branch).
    pub fn deployment_copy(&self) -> PolicyNet {
        PolicyNet { sigma_branch: None, ..self.clone() }
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.obs_dim {
            return Err(Error::DimMismatch { expected: self.obs_dim, actual });
        }
        Ok(())
    }

    /// Normalized, clipped observations for a batch of raw observations.
    pub fn preprocess(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(obs.ncols())?;
        let mut x = Array2::zeros(obs.raw_dim());
        for (row, mut out) in obs.rows().into_iter().zip(x.rows_mut()) {
            let src = row.to_vec();
            self.normalizer.normalize_into(&src, out.as_slice_mut().expect("standard layout"));
        }
        x.mapv_inplace(|v| v.clamp(-NORM_CLIP, NORM_CLIP));
        Ok(x)
    }

    /// Fake-quant forward pass from raw observations.
    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<Tape> {
        let x = self.preprocess(obs)?;
        Ok(self.forward_clipped(x))
    }

    /// Forward pass from already-normalized observations (noise injection enters here).
    pub fn forward_normalized(&self, normalized: ArrayView2<f64>) -> Result<Tape> {
        self.check_dim(normalized.ncols())?;
        Ok(self.forward_clipped(normalized.mapv(|v| v.clamp(-NORM_CLIP, NORM_CLIP))))
    }

    fn quantize_array<D: ndarray::Dimension>(&self, a: &ndarray::Array<f64, D>, spec: &QuantSpec) -> ndarray::Array<f64, D> {
        let spec = *spec;
        match self.rounding {
            Rounding::HalfEven => a.mapv(|x| spec.fake_quant(x)),
            Rounding::Identity => a.mapv(|x| spec.clip_only(x)),
        }
    }

    fn forward_clipped(&self, x0: Array2<f64>) -> Tape {
        let input_spec = self.input_quant.as_ref().map(|s| s.spec);
        let mut x = match &input_spec {
            Some(spec) => self.quantize_array(&x0, spec),
            None => x0.clone(),
        };
        let n = self.layers.len();
        let mut in_spec = input_spec;
        let mut tapes = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let weight_spec = layer.weight_spec();
            let w = match &weight_spec {
                Some(spec) => self.quantize_array(&layer.weights, spec),
                None => layer.weights.clone(),
            };
            let b_spec = match (&in_spec, &weight_spec) {
                (Some(i), Some(w)) => Some(bias_spec(i, w)),
                _ => None,
            };
            let b = match &b_spec {
                Some(spec) => self.quantize_array(&layer.bias, spec),
                None => layer.bias.clone(),
            };
            let mut z = matmul(x.view(), w.t());
            z += &b;
            let site = if l + 1 < n { z.mapv(relu) } else { z.clone() };
            let out_spec = layer.out_spec();
            let y = match &out_spec {
                Some(spec) => self.quantize_array(&site, spec),
                None => site.clone(),
            };
            tapes.push(LayerTape { input: x, weights: w, weight_spec, bias_spec: b_spec, z, site, out_spec });
            x = y;
            in_spec = out_spec;
        }
        let action = x.mapv(f64::tanh);
        Tape { x0, input_spec, layers: tapes, mu: x, action }
    }

    /// Deterministic action for one raw observation.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        Ok(self.forward(x)?.action.into_raw_vec_and_offset().0)
    }

    /// Deterministic action for one normalized observation.
    pub fn act_normalized(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, normalized.len()), normalized).expect("row vector");
        Ok(self.forward_normalized(x)?.action.into_raw_vec_and_offset().0)
    }

    /// Backward pass given the loss gradient with respect to the action.
    pub fn backward(&self, tape: &Tape, d_action: &Array2<f64>) -> PolicyGrads {
        let mut d_mu = d_action.clone();
        Zip::from(&mut d_mu).and(&tape.action).for_each(|g, &a| *g *= 1.0 - a * a);
        self.backward_mu(tape, &d_mu)
    }

    /// Backward pass given the loss gradient with respect to the quantized pre-tanh output.
    pub fn backward_mu(&self, tape: &Tape, d_mu: &Array2<f64>) -> PolicyGrads {
        let n = self.layers.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut g_log = vec![0.0; if self.is_quantized() { n + 1 } else { 0 }];
        let mut d = d_mu.clone();
        for l in (0..n).rev() {
            let lt = &tape.layers[l];
            if let Some(spec) = &lt.out_spec {
                g_log[l + 1] = quant_backward(&mut d, &lt.site, spec, self.rounding, self.ste) * spec.scale();
            }
            if l + 1 < n {
                Zip::from(&mut d).and(&lt.z).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let mut d_w = matmul(d.t(), lt.input.view());
            let mut d_b = d.sum_axis(Axis(0));
            let next = if l > 0 || self.input_quant.is_some() { Some(matmul(d.view(), lt.weights.view())) } else { None };

            let layer = &self.layers[l];
            if let Some(spec) = &lt.weight_spec {
                let ds = quant_backward(&mut d_w, &layer.weights, spec, self.rounding, self.ste);
                // absmax scale: route to the (first) largest-magnitude entry
                if spec.scale() > SCALE_FLOOR {
                    let (idx, w_max) = layer
                        .weights
                        .iter()
                        .enumerate()
                        .fold((0, 0.0f64), |(bi, bv), (i, &w)| if w.abs() > bv.abs() { (i, w) } else { (bi, bv) });
                    d_w.as_slice_mut().expect("standard layout")[idx] += ds * w_max.signum();
                }
            }
            if let Some(spec) = &lt.bias_spec {
                Zip::from(&mut d_b).and(&layer.bias).for_each(|g, &b| *g = ste_grad(*g, b, spec, self.ste));
            }
            gw[l] = d_w;
            gb[l] = d_b;
            if let Some(nd) = next {
                d = nd;
            }
        }
        if let (Some(spec), true) = (&tape.input_spec, self.input_quant.is_some()) {
            let mut gs = 0.0;
            Zip::from(&d).and(&tape.x0).for_each(|&g, &x| gs += qdq_scale_grad(g, x, spec, self.rounding));
            g_log[0] = gs * spec.scale();
        }
        PolicyGrads { weights: gw, bias: gb, log_scales: g_log }
    }

    /// Feed one batch of quantizer inputs to every scale still warming up.
    pub fn observe_warmup(&mut self, tape: &Tape) -> Result<()> {
        if let Some(s) = self.input_quant.as_mut() {
            if s.in_warmup() {
                s.update_warmup(tape.x0.as_slice().expect("standard layout"))?;
            }
        }
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let Some(s) = layer.out_quant.as_mut() {
                if s.in_warmup() {
                    s.update_warmup(lt.site.as_slice().expect("standard layout"))?;
                }
            }
        }
        Ok(())
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.weights.len(), l.bias.len()]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// `self <- (1 - tau) * self + tau * online` on weights, biases and scales.
    pub fn soft_update_from(&mut self, online: &PolicyNet, tau: f64) {
        let keep = 1.0 - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weights.zip_mut_with(&o.weights, |a, &b| *a = keep * *a + tau * b);
            t.bias.zip_mut_with(&o.bias, |a, &b| *a = keep * *a + tau * b);
        }
        // Calibration statistics are copied outright; learned scales are averaged.
        let online_scales: Vec<ScaleState> = online.scale_states().into_iter().cloned().collect();
        for (t, o) in self.scale_states_mut().into_iter().zip(online_scales) {
            if o.in_warmup() || t.in_warmup() {
                *t = o;
            } else {
                let s = keep * t.spec.scale() + tau * o.spec.scale();
                t.spec = t.spec.with_scale(s.max(SCALE_FLOOR)).expect("positive interpolation");
            }
        }
        self.normalizer = online.normalizer.clone();
    }

    /// Whether any activation scale is still in warm-up.
    pub fn in_warmup(&self) -> bool {
        self.scale_states().iter().any(|s| s.in_warmup())
    }

    /// Copy scale states from `online` wherever either side is still warming up.
    pub fn sync_calibration(&mut self, online: &PolicyNet) {
        let online_scales: Vec<ScaleState> = online.scale_states().into_iter().cloned().collect();
        for (t, o) in self.scale_states_mut().into_iter().zip(online_scales) {
            if o.in_warmup() || t.in_warmup() {
                *t = o;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.sigma_branch.as_ref().map_or(true, Mlp::is_finite)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PolicyDoc {
            format: FORMAT.into(),
            version: VERSION,
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            hidden: vec![self.hidden; HIDDEN_LAYERS],
            quant: self.quant,
            ste: self.ste,
            seed: self.seed,
            input_scale: self.input_quant.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    weights: matrix_rows(&l.weights),
                    bias: l.bias.to_vec(),
                    weight_bits: l.weight_bits,
                    output_scale: l.out_quant.clone(),
                })
                .collect(),
            normalizer: self.normalizer.clone(),
            sigma_branch: self.sigma_branch.as_ref().map(Mlp::to_doc),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(s)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::Format(format!("expected {FORMAT} v{VERSION}, got {} v{}", doc.format, doc.version)));
        }
        let hidden = *doc.hidden.first().ok_or_else(|| Error::Format("missing hidden widths".into()))?;
        if doc.hidden.len() != HIDDEN_LAYERS || doc.hidden.iter().any(|&h| h != hidden) {
            return Err(Error::Format("policies have two hidden layers of equal width".into()));
        }
        let dims = [doc.obs_dim, hidden, hidden, doc.action_dim];
        if doc.layers.len() != dims.len() - 1 {
            return Err(Error::Format(format!("expected {} layers, got {}", dims.len() - 1, doc.layers.len())));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (l, ld) in doc.layers.into_iter().enumerate() {
            let weights = matrix_from_rows(&ld.weights)?;
            if weights.dim() != (dims[l + 1], dims[l]) {
                return Err(Error::Format(format!("layer {l} has shape {:?}", weights.dim())));
            }
            if ld.bias.len() != dims[l + 1] {
                return Err(Error::DimMismatch { expected: dims[l + 1], actual: ld.bias.len() });
            }
            if ld.weight_bits.is_some() != doc.quant.is_some() || ld.output_scale.is_some() != doc.quant.is_some() {
                return Err(Error::Format(format!("layer {l} quantizers disagree with the quant config")));
            }
            layers.push(PolicyLayer {
                weights,
                bias: Array1::from(ld.bias),
                weight_bits: ld.weight_bits,
                out_quant: ld.output_scale,
            });
        }
        if doc.normalizer.dim() != doc.obs_dim {
            return Err(Error::DimMismatch { expected: doc.obs_dim, actual: doc.normalizer.dim() });
        }
        let sigma_branch = doc.sigma_branch.as_deref().map(Mlp::from_doc).transpose()?;
        Ok(PolicyNet {
            obs_dim: doc.obs_dim,
            action_dim: doc.action_dim,
            hidden,
            normalizer: doc.normalizer,
            quant: doc.quant,
            input_quant: doc.input_scale,
            layers,
            sigma_branch,
            ste: doc.ste,
            rounding: Rounding::HalfEven,
            seed: doc.seed,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    format: String,
    version: u32,
    obs_dim: usize,
    action_dim: usize,
    hidden: Vec<usize>,
    quant: Option<QuantConfig>,
    #[serde(default)]
    ste: SteMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    input_scale: Option<ScaleState>,
    layers: Vec<LayerDoc>,
    normalizer: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_branch: Option<Vec<DenseDoc>>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(with = "crate::real::matrix")]
    weights: Vec<Vec<f64>>,
    #[serde(with = "crate::real::vec")]
    bias: Vec<f64>,
    weight_bits: Option<u32>,
    output_scale: Option<ScaleState>,
}

/// Adam state for a policy's weights, biases and log-scales.
#[derive(Debug, Clone)]
pub struct PolicyOptimizer {
    params: Adam<f64>,
    scales: Adam<f64>,
}

impl PolicyOptimizer {
    pub fn new(net: &PolicyNet, lr: f64) -> Self {
        let n_scales = net.scale_states().len();
        PolicyOptimizer { params: Adam::new(lr, &net.param_sizes()), scales: Adam::new(lr, &vec![1; n_scales]) }
    }

    /// Apply one step. Scales still in warm-up or marked non-learnable are left untouched.
    pub fn step(&mut self, net: &mut PolicyNet, grads: &PolicyGrads) -> Result<()> {
        self.params.step(&mut net.params_mut(), &grads.slices());
        if grads.log_scales.is_empty() {
            return Ok(());
        }
        let states = net.scale_states();
        let mut logs: Vec<f64> = states.iter().map(|s| s.spec.scale().ln()).collect();
        let masked: Vec<f64> = states
            .iter()
            .zip(&grads.log_scales)
            .map(|(s, g)| if s.trainable() { *g } else { 0.0 })
            .collect();
        let trainable: Vec<bool> = states.iter().map(|s| s.trainable()).collect();
        {
            let mut slots: Vec<&mut [f64]> = logs.chunks_mut(1).collect();
            let g: Vec<&[f64]> = masked.chunks(1).collect();
            self.scales.step(&mut slots, &g);
        }
        for ((state, log), train) in net.scale_states_mut().into_iter().zip(logs).zip(trainable) {
            if train {
                state.set_learned_scale(log.exp())?;
            }
        }
        Ok(())
    }
}
