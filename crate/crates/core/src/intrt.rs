//! Integer-only interpreter for [`IntegerGraph`]: the deployment reference semantics.
//!
//! After input quantization every operation is an integer multiply-add or an
//! integer comparison against a threshold; the tanh table is consulted only
//! for the final action.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lowering::IntegerGraph;
use crate::quant::{quantize_int, QuantSpec};

/// Integer codes at one layer boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntActivation {
    pub values: Vec<i64>,
    pub spec: QuantSpec,
}

/// Input quantization of an already-normalized observation.
pub fn quantize_input(graph: &IntegerGraph, normalized: &[f64]) -> Result<Vec<i64>> {
    if normalized.len() != graph.obs_dim() {
        return Err(Error::DimMismatch { expected: graph.obs_dim(), actual: normalized.len() });
    }
    normalized
        .iter()
        .map(|&x| quantize_int(x.clamp(-graph.norm_clip, graph.norm_clip), &graph.input_spec))
        .collect()
}

/// Full inference from a raw observation: normalize, quantize, run integer layers, look up tanh.
pub fn run_integer(graph: &IntegerGraph, obs: &[f64]) -> Result<(Vec<f64>, Vec<IntActivation>)> {
    if obs.len() != graph.obs_dim() {
        return Err(Error::DimMismatch { expected: graph.obs_dim(), actual: obs.len() });
    }
    run_integer_normalized(graph, &graph.normalizer.normalize(obs))
}

/// Inference from a normalized observation (noise injection enters here).
pub fn run_integer_normalized(graph: &IntegerGraph, normalized: &[f64]) -> Result<(Vec<f64>, Vec<IntActivation>)> {
    let codes = quantize_input(graph, normalized)?;
    let trace = run_codes(graph, &codes)?;
    let out = trace.last().expect("non-empty trace");
    let action = out.values.iter().map(|&k| graph.lut(k)).collect();
    Ok((action, trace))
}

/// The integer-only part: input codes in, one activation per layer boundary out
/// (the input codes first).
pub fn run_codes(graph: &IntegerGraph, input_codes: &[i64]) -> Result<Vec<IntActivation>> {
    check_range(0, input_codes, &graph.input_spec)?;
    let mut trace = Vec::with_capacity(graph.layers.len() + 1);
    trace.push(IntActivation { values: input_codes.to_vec(), spec: graph.input_spec });
    for (l, layer) in graph.layers.iter().enumerate() {
        let x = &trace.last().expect("seeded with input").values;
        if x.len() != layer.input_dim() {
            return Err(Error::DimMismatch { expected: layer.input_dim(), actual: x.len() });
        }
        let lo = -(1i64 << (layer.acc_bits - 1));
        let hi = (1i64 << (layer.acc_bits - 1)) - 1;
        let mut out = Vec::with_capacity(layer.output_dim());
        for (row, weights) in layer.int_weights.iter().enumerate() {
            let mut acc: i64 = 0;
            for (&w, &v) in weights.iter().zip(x) {
                acc = w
                    .checked_mul(v)
                    .and_then(|p| acc.checked_add(p))
                    .ok_or(Error::AccumulatorOverflow { layer: l, value: acc, bits: 64 })?;
            }
            if acc < lo || acc > hi {
                return Err(Error::AccumulatorOverflow { layer: l, value: acc, bits: layer.acc_bits });
            }
            out.push(layer.requantize(row, acc));
        }
        check_range(l + 1, &out, &layer.out_spec)?;
        trace.push(IntActivation { values: out, spec: layer.out_spec });
    }
    Ok(trace)
}

fn check_range(layer: usize, codes: &[i64], spec: &QuantSpec) -> Result<()> {
    let (min, max) = (spec.q_min(), spec.q_max());
    match codes.iter().find(|&&c| c < min || c > max) {
        Some(&code) => Err(Error::ActivationRange { layer, code, min, max }),
        None => Ok(()),
    }
}

/// Multiply-accumulates per inference: `sum(out * in)` over layers.
pub fn count_macs(graph: &IntegerGraph) -> u64 {
    graph.layers.iter().map(|l| (l.output_dim() * l.input_dim()) as u64).sum()
}

/// 64-bit digest of the graph's canonical JSON encoding.
pub fn checksum(graph: &IntegerGraph) -> u64 {
    let bytes = serde_json::to_vec(graph).expect("graphs always serialize");
    let digest = Sha256::digest(&bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}
