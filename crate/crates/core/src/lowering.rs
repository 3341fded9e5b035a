//! Compilation of a frozen fake-quant policy into an integer-only graph.
//!
//! Each layer keeps integer weights and, per output neuron, a sorted table of
//! accumulator thresholds: the output code is `q_min + #{k : acc >= T_k}`. The
//! table encodes `clip(round_half_even((acc + b_int) * M), q_min, q_max)` with
//! `M = u_in * u_w * q_s_out / s_out`, so the bias and the ReLU (the lower clip
//! at zero for unsigned outputs) are folded into the thresholds.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intrt;
use crate::normalizer::Normalizer;
use crate::policy::{bias_spec, PolicyNet, NORM_CLIP};
use crate::quant::{round_half_even, QuantSpec};

const FORMAT: &str = "qpolicy-graph";
const VERSION: u32 = 1;
/// Thresholds are clamped to this magnitude; anything beyond is unreachable by an i64 accumulator sum.
const THRESHOLD_LIMIT: i64 = 1 << 52;
const PROBE_INPUTS: usize = 256;
const PROBE_SEED: u64 = 0x5eed_0100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntLayer {
    /// `out x in`.
    pub int_weights: Vec<Vec<i64>>,
    pub weight_spec: QuantSpec,
    /// Integer bias at accumulator scale (already folded into `thresholds`).
    pub bias_int: Vec<i64>,
    pub acc_bits: u32,
    /// `out x (2^b_out - 1)`, non-decreasing per row.
    pub thresholds: Vec<Vec<i64>>,
    pub in_spec: QuantSpec,
    pub out_spec: QuantSpec,
    #[serde(with = "crate::real")]
    pub multiplier: f64,
}

impl IntLayer {
    pub fn input_dim(&self) -> usize {
        self.int_weights.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.int_weights.len()
    }

    /// Output code for accumulator `acc` of neuron `row`.
    #[inline]
    pub fn requantize(&self, row: usize, acc: i64) -> i64 {
        self.out_spec.q_min() + threshold_count(&self.thresholds[row], acc) as i64
    }
}

/// Number of thresholds `<= acc` in a sorted row.
#[inline]
pub fn threshold_count(row: &[i64], acc: i64) -> usize {
    if row.len() <= 8 {
        row.iter().take_while(|&&t| t <= acc).count()
    } else {
        row.partition_point(|&t| t <= acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerGraph {
    pub format: String,
    pub version: u32,
    /// Frozen input statistics; the only real arithmetic precedes input quantization.
    pub normalizer: Normalizer,
    #[serde(with = "crate::real")]
    pub norm_clip: f64,
    pub input_spec: QuantSpec,
    pub layers: Vec<IntLayer>,
    /// Action component for each output code `q_min..=q_max`.
    #[serde(with = "crate::real::vec")]
    pub tanh_lut: Vec<f64>,
}

impl IntegerGraph {
    pub fn obs_dim(&self) -> usize {
        self.layers.first().map_or(0, IntLayer::input_dim)
    }

    pub fn action_dim(&self) -> usize {
        self.layers.last().map_or(0, IntLayer::output_dim)
    }

    pub fn output_spec(&self) -> QuantSpec {
        self.layers.last().expect("non-empty graph").out_spec
    }

    /// Action value for an output code.
    pub fn lut(&self, code: i64) -> f64 {
        self.tanh_lut[(code - self.output_spec().q_min()) as usize]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: IntegerGraph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    /// Structural checks on a deserialized graph.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Format(format!("expected {FORMAT} v{VERSION}, got {} v{}", self.format, self.version)));
        }
        if self.layers.is_empty() {
            return Err(Error::Format("graph has no layers".into()));
        }
        if self.normalizer.dim() != self.obs_dim() {
            return Err(Error::DimMismatch { expected: self.obs_dim(), actual: self.normalizer.dim() });
        }
        let mut in_spec = self.input_spec;
        let mut in_dim = self.obs_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_spec != in_spec {
                return Err(Error::Format(format!("layer {l} input spec does not chain")));
            }
            if layer.input_dim() != in_dim || layer.int_weights.iter().any(|r| r.len() != in_dim) {
                return Err(Error::Format(format!("layer {l} weights are not {in_dim} columns wide")));
            }
            let levels = layer.out_spec.levels() as usize - 1;
            if layer.thresholds.len() != layer.output_dim()
                || layer.bias_int.len() != layer.output_dim()
                || layer.thresholds.iter().any(|r| r.len() != levels || r.windows(2).any(|p| p[0] > p[1]))
            {
                return Err(Error::Format(format!("layer {l} thresholds malformed")));
            }
            let qs = layer.weight_spec.q_s();
            if layer.int_weights.iter().flatten().any(|w| w.abs() > qs) {
                return Err(Error::Format(format!("layer {l} weight exceeds q_s")));
            }
            in_spec = layer.out_spec;
            in_dim = layer.output_dim();
        }
        if self.tanh_lut.len() as u64 != self.output_spec().levels() {
            return Err(Error::Format("tanh table size must be 2^b_out".into()));
        }
        Ok(())
    }
}

#[inline]
fn requant_direct(acc_with_bias: i64, multiplier: f64) -> f64 {
    round_half_even(acc_with_bias as f64 * multiplier)
}

/// Sorted thresholds for codes above `q_min`.
///
/// `T_k` is the smallest `a` with `round_half_even((a + bias_int) * M) >= k`.
/// The closed-form guess `ceil((k - 0.5) / M) - bias_int` is corrected by a
/// local scan so floating-point error and tie parity are absorbed.
pub fn compute_thresholds(multiplier: f64, bias_int: i64, out_spec: &QuantSpec) -> Result<Vec<i64>> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(Error::InvalidMultiplier(multiplier));
    }
    let reaches = |a: i64, k: i64| requant_direct(a.saturating_add(bias_int), multiplier) >= k as f64;
    let mut out = Vec::with_capacity(out_spec.levels() as usize - 1);
    for k in out_spec.q_min() + 1..=out_spec.q_max() {
        let guess = ((k as f64 - 0.5) / multiplier).ceil() - bias_int as f64;
        let mut a = guess.clamp(-(THRESHOLD_LIMIT as f64), THRESHOLD_LIMIT as f64) as i64;
        if a.abs() < THRESHOLD_LIMIT {
            while a > -THRESHOLD_LIMIT && reaches(a - 1, k) {
                a -= 1;
            }
            while a < THRESHOLD_LIMIT && !reaches(a, k) {
                a += 1;
            }
        }
        out.push(a);
    }
    Ok(out)
}

/// Range `[lo, hi]` of `sum_j w_j * x_j` over all input codes.
pub fn dot_range(row: &[i64], in_spec: &QuantSpec) -> (i64, i64) {
    let (xmin, xmax) = (in_spec.q_min(), in_spec.q_max());
    row.iter().fold((0i64, 0i64), |(lo, hi), &w| {
        let (a, b) = (w * xmin, w * xmax);
        (lo + a.min(b), hi + a.max(b))
    })
}

/// Minimal two's-complement width holding every value in `[lo, hi]`, at least 2.
pub fn bits_for_range(lo: i64, hi: i64) -> u32 {
    let mut bits = 2;
    while bits < 64 && !(lo >= -(1i64 << (bits - 1)) && hi < (1i64 << (bits - 1))) {
        bits += 1;
    }
    bits
}

/// Accumulator width for a layer: all dot products over the input code range, widened by the bias.
pub fn accumulator_bits(int_weights: &[Vec<i64>], bias_int: &[i64], in_spec: &QuantSpec) -> u32 {
    int_weights
        .iter()
        .zip(bias_int)
        .map(|(row, &b)| {
            let (lo, hi) = dot_range(row, in_spec);
            bits_for_range(lo + b.min(0), hi + b.max(0))
        })
        .max()
        .unwrap_or(2)
}

/// `tanh(dequantize(k))` for `k = q_min..=q_max`.
pub fn build_tanh_lut(out_spec: &QuantSpec) -> Result<Vec<f64>> {
    if !out_spec.is_signed() {
        return Err(Error::InvalidSpec("the output quantizer must be signed".into()));
    }
    Ok((out_spec.q_min()..=out_spec.q_max()).map(|k| out_spec.dequantize(k).tanh()).collect())
}

/// Lower a frozen quantized policy. The result is checked against the
/// fake-quant forward pass before it is returned.
pub fn lower(net: &PolicyNet) -> Result<IntegerGraph> {
    if !net.is_quantized() {
        return Err(Error::NotQuantized);
    }
    if !net.is_frozen() {
        return Err(Error::Format("policy must be frozen (normalizer and scales fixed) before lowering".into()));
    }
    let input_spec = net.input_quant.as_ref().expect("quantized").spec;
    let mut in_spec = input_spec;
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let w_spec = layer.weight_spec().expect("quantized");
        let out_spec = layer.out_spec().expect("quantized");
        let b_spec = bias_spec(&in_spec, &w_spec);
        let int_weights: Vec<Vec<i64>> =
            layer.weights.rows().into_iter().map(|r| r.iter().map(|&w| w_spec.code(w)).collect()).collect();
        let bias_int: Vec<i64> = layer.bias.iter().map(|&b| b_spec.code(b)).collect();
        let multiplier = in_spec.unit() * w_spec.unit() * out_spec.q_s() as f64 / out_spec.scale();
        let thresholds =
            bias_int.iter().map(|&b| compute_thresholds(multiplier, b, &out_spec)).collect::<Result<Vec<_>>>()?;
        let acc_bits = accumulator_bits(&int_weights, &bias_int, &in_spec);
        layers.push(IntLayer {
            int_weights,
            weight_spec: w_spec,
            bias_int,
            acc_bits,
            thresholds,
            in_spec,
            out_spec,
            multiplier,
        });
        in_spec = out_spec;
    }
    let graph = IntegerGraph {
        format: FORMAT.into(),
        version: VERSION,
        normalizer: net.normalizer.clone(),
        norm_clip: NORM_CLIP,
        input_spec,
        tanh_lut: build_tanh_lut(&in_spec)?,
        layers,
    };
    verify_thresholds(&graph)?;
    verify_against(net, &graph, &probe_inputs(net.obs_dim()))?;
    Ok(graph)
}

fn verify_thresholds(graph: &IntegerGraph) -> Result<()> {
    for (l, layer) in graph.layers.iter().enumerate() {
        let (qmin, qmax) = (layer.out_spec.q_min(), layer.out_spec.q_max());
        for (row, (&b, ts)) in layer.bias_int.iter().zip(&layer.thresholds).enumerate() {
            // the count can only change at a threshold, so checking both sides of each is exhaustive
            for &t in ts.iter().filter(|t| t.abs() < THRESHOLD_LIMIT) {
                for a in [t - 1, t] {
                    let direct = (requant_direct(a + b, layer.multiplier) as i64).clamp(qmin, qmax);
                    if layer.requantize(row, a) != direct {
                        return Err(Error::BitExactness(format!(
                            "layer {l} neuron {row}: thresholds give {} at acc {a}, direct requantization {direct}",
                            layer.requantize(row, a)
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Normalized probe observations used for the lowering self-check.
fn probe_inputs(dim: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut x = Array2::from_shape_fn((PROBE_INPUTS, dim), |_| rng.gen_range(-3.0..3.0));
    x.row_mut(0).fill(0.0);
    x
}

/// Compare the integer trace with the fake-quant codes at every quantizer site.
pub fn verify_against(net: &PolicyNet, graph: &IntegerGraph, normalized: &Array2<f64>) -> Result<usize> {
    let tape = net.forward_normalized(normalized.view())?;
    let codes = tape.codes().ok_or(Error::NotQuantized)?;
    for (i, row) in normalized.rows().into_iter().enumerate() {
        let (action, trace) = intrt::run_integer_normalized(graph, row.as_slice().expect("standard layout"))?;
        for (site, (act, expected)) in trace.iter().zip(&codes).enumerate() {
            let want = expected.row(i);
            if act.values.as_slice() != want.as_slice().expect("standard layout") {
                return Err(Error::BitExactness(format!(
                    "input {i}, site {site}: integer {:?} vs fake-quant {:?}",
                    act.values, want
                )));
            }
        }
        let fq = tape.action.row(i);
        if action.iter().zip(fq.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::BitExactness(format!("input {i}: action {action:?} vs {fq:?}")));
        }
    }
    Ok(normalized.nrows())
}

/// Convenience: verify against a batch view.
pub fn verify_batch(net: &PolicyNet, graph: &IntegerGraph, normalized: ArrayView2<f64>) -> Result<usize> {
    verify_against(net, graph, &normalized.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force count: how many codes above q_min does `acc` reach.
    fn direct_code(acc: i64, bias: i64, m: f64, spec: &QuantSpec) -> i64 {
        (((acc + bias) as f64 * m).round_ties_even() as i64).clamp(spec.q_min(), spec.q_max())
    }

    #[test]
    fn identity_requantization_thresholds() {
        let spec = QuantSpec::unsigned(2, 1.0).unwrap();
        assert_eq!(compute_thresholds(1.0, 0, &spec).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn multiplier_0_7_thresholds() {
        // brute force round(0.7 a) over a in [0, 10]
        let codes: Vec<i64> = (0..=10).map(|a| ((a as f64 * 0.7).round_ties_even() as i64).min(3)).collect();
        assert_eq!(codes, vec![0, 1, 1, 2, 3, 3, 3, 3, 3, 3, 3]);
        let spec = QuantSpec::unsigned(2, 1.0).unwrap();
        let t = compute_thresholds(0.7, 0, &spec).unwrap();
        assert_eq!(t, vec![1, 3, 4]);
        assert_eq!(threshold_count(&t, 2), 1);
        assert_eq!(threshold_count(&t, 3), 2);
    }

    #[test]
    fn bias_translates_thresholds() {
        let spec = QuantSpec::signed(3, 1.0).unwrap();
        let base = compute_thresholds(0.37, 0, &spec).unwrap();
        for b in [-9i64, -1, 1, 4, 250] {
            let shifted = compute_thresholds(0.37, b, &spec).unwrap();
            let expect: Vec<i64> = base.iter().map(|t| t - b).collect();
            assert_eq!(shifted, expect, "bias {b}");
        }
    }

    #[test]
    fn invalid_multiplier_is_an_error() {
        let spec = QuantSpec::unsigned(2, 1.0).unwrap();
        assert!(compute_thresholds(0.0, 0, &spec).is_err());
        assert!(compute_thresholds(-1.0, 0, &spec).is_err());
        assert!(compute_thresholds(f64::NAN, 0, &spec).is_err());
    }

    #[test]
    fn threshold_count_matches_direct_requantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let bits = rng.gen_range(2..=4);
            let spec = QuantSpec::new(bits, rng.gen(), 1.0).unwrap();
            let m = 10f64.powf(rng.gen_range(-2.5..1.0));
            let b = rng.gen_range(-300..300);
            let t = compute_thresholds(m, b, &spec).unwrap();
            assert_eq!(t.len() as u64, spec.levels() - 1);
            for acc in -2048..2048 {
                let got = spec.q_min() + threshold_count(&t, acc) as i64;
                assert_eq!(got, direct_code(acc, b, m, &spec));
            }
        }
    }

    #[test]
    fn accumulator_bit_examples() {
        let u2 = QuantSpec::unsigned(2, 1.0).unwrap();
        assert_eq!(accumulator_bits(&[vec![1]], &[0], &u2), 3);
        assert_eq!(accumulator_bits(&[vec![0, 0]], &[0], &u2), 2);
        assert_eq!(accumulator_bits(&[vec![1, 1]], &[0], &u2), 4);
        let s4 = QuantSpec::signed(4, 1.0).unwrap();
        for w in [1i64, 3, -5, 7] {
            for fan in [1usize, 2, 4, 8] {
                let one = accumulator_bits(&[vec![w; fan]], &[0], &s4);
                let two = accumulator_bits(&[vec![w; 2 * fan]], &[0], &s4);
                assert_eq!(two, one + 1, "w {w} fan {fan}");
            }
        }
    }

    #[test]
    fn accumulator_bits_cover_enumerated_range() {
        let spec = QuantSpec::signed(3, 1.0).unwrap();
        let row = vec![3i64, -2, 4];
        let bits = accumulator_bits(&[row.clone()], &[5], &spec);
        let (lo, hi) = (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1);
        let mut seen_lo = i64::MAX;
        let mut seen_hi = i64::MIN;
        for a in -4..=3 {
            for b in -4..=3 {
                for c in -4..=3 {
                    let v = 3 * a - 2 * b + 4 * c;
                    for with_bias in [v, v + 5] {
                        assert!(with_bias >= lo && with_bias <= hi);
                        seen_lo = seen_lo.min(with_bias);
                        seen_hi = seen_hi.max(with_bias);
                    }
                }
            }
        }
        // one bit fewer would not hold the enumerated range
        let smaller = bits - 1;
        assert!(seen_lo < -(1i64 << (smaller - 1)) || seen_hi > (1i64 << (smaller - 1)) - 1);
    }

    #[test]
    fn tanh_lut_examples() {
        let spec = QuantSpec::signed(8, 1.0).unwrap();
        let lut = build_tanh_lut(&spec).unwrap();
        assert_eq!(lut.len(), 256);
        assert_eq!(lut[128], 0.0);
        // code 127 -> tanh(127 / 128)
        assert!((lut[255] - 0.758_293_535).abs() < 1e-9);
        for k in 1..=127usize {
            assert_eq!(lut[128 + k], -lut[128 - k]);
        }
        assert!(lut.windows(2).all(|p| p[0] < p[1]));
        assert!(lut.iter().all(|v| v.abs() < 1.0));
        assert!(build_tanh_lut(&QuantSpec::unsigned(4, 1.0).unwrap()).is_err());
    }
}
