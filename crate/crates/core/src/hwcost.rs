//! PE/SIMD folding cost model for a streaming dataflow implementation of an
//! [`IntegerGraph`], plus the throughput-driven folding search.
//!
//! Numbers are abstract: cycles at a nominal clock and resource proxies
//! (MAC units, stored thresholds, weight bits), meant for ranking designs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowering::IntegerGraph;

pub const PAD_MULTIPLE: usize = 32;
pub const DEFAULT_CLOCK_HZ: f64 = 1e8;
/// Stream hand-off overhead per layer, in cycles.
pub const PIPELINE_CYCLES_PER_LAYER: u64 = 2;

pub fn pad(dim: usize) -> usize {
    dim.max(1).div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE
}

/// One matrix-vector layer, already padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub weight_bits: u32,
    pub out_bits: u32,
}

impl LayerShape {
    pub fn padded(input: usize, output: usize, weight_bits: u32, out_bits: u32) -> Self {
        LayerShape { input: pad(input), output: pad(output), weight_bits, out_bits }
    }
}

/// Padded layer shapes of a lowered graph.
pub fn pad_dims(graph: &IntegerGraph) -> Vec<LayerShape> {
    graph
        .layers
        .iter()
        .map(|l| LayerShape::padded(l.input_dim(), l.output_dim(), l.weight_spec.bits(), l.out_spec.bits()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFold {
    pub pe: usize,
    pub simd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldingConfig {
    pub layers: Vec<LayerFold>,
    pub clock_hz: f64,
}

impl FoldingConfig {
    /// pe = simd = 1 everywhere.
    pub fn minimal(n: usize) -> Self {
        FoldingConfig { layers: vec![LayerFold { pe: 1, simd: 1 }; n], clock_hz: DEFAULT_CLOCK_HZ }
    }

    pub fn full(shapes: &[LayerShape]) -> Self {
        FoldingConfig {
            layers: shapes.iter().map(|s| LayerFold { pe: s.output, simd: s.input }).collect(),
            clock_hz: DEFAULT_CLOCK_HZ,
        }
    }

    pub fn validate(&self, shapes: &[LayerShape]) -> Result<()> {
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(Error::InvalidFolding(format!("clock {} must be positive", self.clock_hz)));
        }
        if self.layers.len() != shapes.len() {
            return Err(Error::InvalidFolding(format!(
                "{} layer folds for {} layers",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (i, (f, s)) in self.layers.iter().zip(shapes).enumerate() {
            if f.pe == 0 || f.pe > s.output || s.output % f.pe != 0 {
                return Err(Error::InvalidFolding(format!("layer {i}: pe {} does not divide {}", f.pe, s.output)));
            }
            if f.simd == 0 || f.simd > s.input || s.input % f.simd != 0 {
                return Err(Error::InvalidFolding(format!("layer {i}: simd {} does not divide {}", f.simd, s.input)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Resources {
    pub mac_units: u64,
    pub threshold_words: u64,
    pub weight_bits: u64,
}

/// Upper limits on the resource proxies; `None` is unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceBudget {
    #[serde(default)]
    pub mac_units: Option<u64>,
    #[serde(default)]
    pub threshold_words: Option<u64>,
    #[serde(default)]
    pub weight_bits: Option<u64>,
}

impl ResourceBudget {
    pub fn admits(&self, r: &Resources) -> bool {
        self.mac_units.map_or(true, |m| r.mac_units <= m)
            && self.threshold_words.map_or(true, |m| r.threshold_words <= m)
            && self.weight_bits.map_or(true, |m| r.weight_bits <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layer_cycles: Vec<u64>,
    pub latency_cycles: u64,
    pub latency_seconds: f64,
    pub initiation_interval_cycles: u64,
    pub throughput_actions_per_s: f64,
    pub resources: Resources,
}

impl CostReport {
    pub const CSV_HEADER: &'static str =
        "layers,latency_cycles,latency_seconds,initiation_interval_cycles,throughput_actions_per_s,mac_units,threshold_words,weight_bits";

    pub fn csv_row(&self) -> String {
        let cycles: Vec<String> = self.layer_cycles.iter().map(u64::to_string).collect();
        format!(
            "{},{},{:?},{},{:?},{},{},{}",
            cycles.join(";"),
            self.latency_cycles,
            self.latency_seconds,
            self.initiation_interval_cycles,
            self.throughput_actions_per_s,
            self.resources.mac_units,
            self.resources.threshold_words,
            self.resources.weight_bits
        )
    }
}

fn layer_cycles(s: &LayerShape, f: &LayerFold) -> u64 {
    ((s.output / f.pe) * (s.input / f.simd)) as u64
}

/// Resources that do not depend on folding.
pub fn storage(shapes: &[LayerShape]) -> Resources {
    let mut r = Resources::default();
    for s in shapes {
        r.threshold_words += s.output as u64 * ((1u64 << s.out_bits) - 1);
        r.weight_bits += (s.output * s.input) as u64 * s.weight_bits as u64;
    }
    r
}

pub fn estimate(shapes: &[LayerShape], folding: &FoldingConfig) -> Result<CostReport> {
    folding.validate(shapes)?;
    let layer_cycles: Vec<u64> = shapes.iter().zip(&folding.layers).map(|(s, f)| layer_cycles(s, f)).collect();
    let latency_cycles = layer_cycles.iter().sum::<u64>() + PIPELINE_CYCLES_PER_LAYER * shapes.len() as u64;
    let ii = layer_cycles.iter().copied().max().unwrap_or(1);
    let mut resources = storage(shapes);
    resources.mac_units = folding.layers.iter().map(|f| (f.pe * f.simd) as u64).sum();
    Ok(CostReport {
        layer_cycles,
        latency_cycles,
        latency_seconds: latency_cycles as f64 / folding.clock_hz,
        initiation_interval_cycles: ii,
        throughput_actions_per_s: folding.clock_hz / ii as f64,
        resources,
    })
}

pub fn estimate_graph(graph: &IntegerGraph, folding: &FoldingConfig) -> Result<CostReport> {
    estimate(&pad_dims(graph), folding)
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Cheapest fold of one layer with at most `max_cycles` cycles.
/// Ties go to fewer cycles, then to the smaller `pe`.
fn fold_layer(s: &LayerShape, max_cycles: u64) -> Option<LayerFold> {
    let simds = divisors(s.input);
    divisors(s.output)
        .into_iter()
        .flat_map(|pe| simds.iter().map(move |&simd| LayerFold { pe, simd }))
        .filter(|f| layer_cycles(s, f) <= max_cycles)
        .min_by_key(|f| (f.pe * f.simd, layer_cycles(s, f), f.pe))
}

/// Folding with the fewest MAC units whose throughput reaches `target` and whose
/// resources fit `budget`.
///
/// Throughput depends only on the slowest layer, so each layer is folded
/// independently down to the cycle bound `clock / target`.
pub fn folding_search(
    shapes: &[LayerShape],
    target: f64,
    budget: &ResourceBudget,
    clock_hz: f64,
) -> Result<FoldingConfig> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidFolding(format!("target throughput {target} must be positive")));
    }
    if target > clock_hz {
        return Err(Error::InvalidFolding(format!(
            "infeasible: target {target} exceeds one action per cycle at {clock_hz} Hz"
        )));
    }
    let max_cycles = (clock_hz / target).floor() as u64;
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, s) in shapes.iter().enumerate() {
        let f = fold_layer(s, max_cycles)
            .ok_or_else(|| Error::InvalidFolding(format!("infeasible: layer {i} cannot reach {target}/s")))?;
        layers.push(f);
    }
    let folding = FoldingConfig { layers, clock_hz };
    let report = estimate(shapes, &folding)?;
    if report.throughput_actions_per_s < target {
        return Err(Error::InvalidFolding(format!("infeasible: throughput {} below {target}", report.throughput_actions_per_s)));
    }
    if !budget.admits(&report.resources) {
        return Err(Error::InvalidFolding(format!("infeasible: resources {:?} exceed budget", report.resources)));
    }
    Ok(folding)
}

/// Targets 10^3 ..= 10^7 actions/s.
pub fn sweep_targets() -> Vec<f64> {
    (3..=7).map(|e| 10f64.powi(e)).collect()
}

/// Highest target in the sweep that is feasible, with its folding and cost.
pub fn throughput_sweep(
    shapes: &[LayerShape],
    budget: &ResourceBudget,
    clock_hz: f64,
) -> Option<(f64, FoldingConfig, CostReport)> {
    sweep_targets().into_iter().rev().find_map(|t| {
        let f = folding_search(shapes, t, budget, clock_hz).ok()?;
        let r = estimate(shapes, &f).ok()?;
        Some((t, f, r))
    })
}

/// Padded shapes of the unshrunk reference architecture: two hidden layers of
/// `width` with `b_core`-bit weights and hidden activations, `b_io`-bit output layer.
pub fn reference_shapes(obs_dim: usize, action_dim: usize, width: usize, b_core: u32, b_io: u32) -> Vec<LayerShape> {
    vec![
        LayerShape::padded(obs_dim, width, b_core, b_core),
        LayerShape::padded(width, width, b_core, b_core),
        LayerShape::padded(width, action_dim, b_core, b_io),
    ]
}

pub fn reference_cost(
    obs_dim: usize,
    action_dim: usize,
    width: usize,
    b_core: u32,
    b_io: u32,
    folding: &FoldingConfig,
) -> Result<CostReport> {
    estimate(&reference_shapes(obs_dim, action_dim, width, b_core, b_io), folding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cube() -> Vec<LayerShape> {
        vec![LayerShape::padded(32, 32, 4, 4); 3]
    }

    #[test]
    fn padding() {
        assert_eq!(pad(3), 32);
        assert_eq!(pad(32), 32);
        assert_eq!(pad(33), 64);
    }

    #[test]
    fn full_parallelism_is_one_cycle_per_layer() {
        let shapes = reference_shapes(11, 3, 16, 3, 8);
        let r = estimate(&shapes, &FoldingConfig::full(&shapes)).unwrap();
        assert_eq!(r.layer_cycles, vec![1, 1, 1]);
        assert_eq!(r.latency_cycles, 3 * (1 + PIPELINE_CYCLES_PER_LAYER));
        assert_eq!(r.initiation_interval_cycles, 1);
        assert_eq!(r.throughput_actions_per_s, DEFAULT_CLOCK_HZ);
        assert!((5..100).contains(&r.latency_cycles));
    }

    #[test]
    fn halving_pe_doubles_cycles() {
        let shapes = cube();
        let mut f = FoldingConfig::full(&shapes);
        let base = estimate(&shapes, &f).unwrap();
        f.layers[1].pe = 16;
        let r = estimate(&shapes, &f).unwrap();
        assert_eq!(r.layer_cycles[1], 2 * base.layer_cycles[1]);
        assert_eq!(r.layer_cycles[0], base.layer_cycles[0]);
    }

    #[test]
    fn invalid_foldings_rejected() {
        let shapes = cube();
        let mut f = FoldingConfig::full(&shapes);
        f.layers[0].pe = 3;
        assert!(estimate(&shapes, &f).is_err());
        f.layers[0].pe = 64;
        assert!(estimate(&shapes, &f).is_err());
        assert!(estimate(&shapes, &FoldingConfig::minimal(2)).is_err());
    }

    #[test]
    fn slow_target_gives_minimal_folding() {
        let shapes = cube();
        let total: u64 = shapes.iter().map(|s| (s.input * s.output) as u64).sum();
        let target = DEFAULT_CLOCK_HZ / total as f64 / 2.0;
        let f = folding_search(&shapes, target, &ResourceBudget::default(), DEFAULT_CLOCK_HZ).unwrap();
        assert_eq!(f, FoldingConfig::minimal(3));
    }

    #[test]
    fn target_above_clock_is_infeasible() {
        assert!(folding_search(&cube(), 2e8, &ResourceBudget::default(), DEFAULT_CLOCK_HZ).is_err());
        assert!(folding_search(&cube(), 1e8, &ResourceBudget::default(), DEFAULT_CLOCK_HZ).is_ok());
    }

    #[test]
    fn budget_can_make_target_infeasible() {
        let budget = ResourceBudget { mac_units: Some(10), ..Default::default() };
        assert!(folding_search(&cube(), 1e7, &budget, DEFAULT_CLOCK_HZ).is_err());
        let storage_cap = ResourceBudget { weight_bits: Some(100), ..Default::default() };
        assert!(folding_search(&cube(), 1e3, &storage_cap, DEFAULT_CLOCK_HZ).is_err());
    }

    /// Exhaustive search over the full divisor lattice of all three layers.
    fn brute_force(shapes: &[LayerShape], target: f64) -> Option<u64> {
        let lattice: Vec<Vec<LayerFold>> = shapes
            .iter()
            .map(|s| {
                divisors(s.output)
                    .into_iter()
                    .flat_map(|pe| divisors(s.input).into_iter().map(move |simd| LayerFold { pe, simd }))
                    .collect()
            })
            .collect();
        let mut best: Option<u64> = None;
        for a in &lattice[0] {
            for b in &lattice[1] {
                for c in &lattice[2] {
                    let f = FoldingConfig { layers: vec![*a, *b, *c], clock_hz: DEFAULT_CLOCK_HZ };
                    let r = estimate(shapes, &f).unwrap();
                    if r.throughput_actions_per_s >= target {
                        best = Some(best.map_or(r.resources.mac_units, |m| m.min(r.resources.mac_units)));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn search_matches_exhaustive_enumeration() {
        let shapes = cube();
        for target in [1e3, 1e4, 1e5, 3e5, 1e6, 2.5e6, 1e7, 5e7, 1e8] {
            let found = folding_search(&shapes, target, &ResourceBudget::default(), DEFAULT_CLOCK_HZ).unwrap();
            let r = estimate(&shapes, &found).unwrap();
            assert!(r.throughput_actions_per_s >= target);
            assert_eq!(Some(r.resources.mac_units), brute_force(&shapes, target), "target {target}");
        }
    }

    #[test]
    fn threshold_words_of_reference() {
        let shapes = reference_shapes(3, 1, 256, 4, 8);
        let r = storage(&shapes);
        assert_eq!(r.threshold_words, 256 * 15 + 256 * 15 + 32 * 255);
        let five = storage(&reference_shapes(3, 1, 256, 5, 8));
        assert_eq!(five.threshold_words - 32 * 255, (256 * 15 * 2) * 31 / 15);
    }

    #[test]
    fn sweep_keeps_highest_feasible_target() {
        let shapes = cube();
        let (t, _, r) = throughput_sweep(&shapes, &ResourceBudget::default(), DEFAULT_CLOCK_HZ).unwrap();
        assert_eq!(t, 1e7);
        assert!(r.throughput_actions_per_s >= 1e7);
        let tight = ResourceBudget { mac_units: Some(3 * 32), ..Default::default() };
        let (t, _, r) = throughput_sweep(&shapes, &tight, DEFAULT_CLOCK_HZ).unwrap();
        assert!(r.resources.mac_units <= 96);
        assert!(t < 1e7);
    }

    proptest! {
        #[test]
        fn more_parallelism_never_hurts(pe_exp in 0u32..6, simd_exp in 0u32..6, layer in 0usize..3) {
            let shapes = cube();
            let mut f = FoldingConfig::minimal(3);
            f.layers[layer] = LayerFold { pe: 1 << pe_exp, simd: 1 << simd_exp };
            let base = estimate(&shapes, &f).unwrap();
            for bump in [LayerFold { pe: 2 << pe_exp, simd: 1 << simd_exp }, LayerFold { pe: 1 << pe_exp, simd: 2 << simd_exp }] {
                let mut g = f.clone();
                g.layers[layer] = bump;
                if let Ok(r) = estimate(&shapes, &g) {
                    prop_assert!(r.throughput_actions_per_s >= base.throughput_actions_per_s);
                    prop_assert!(r.latency_cycles <= base.latency_cycles);
                }
            }
        }

        #[test]
        fn threshold_words_double_plus_one_per_bit(b in 2u32..12) {
            let one = |bits| storage(&[LayerShape::padded(32, 32, 4, bits)]).threshold_words;
            prop_assert_eq!(one(b + 1), 2 * one(b) + 32);
        }

        #[test]
        fn search_result_satisfies_constraints(exp in 3.0f64..8.0, macs in 3u64..3000) {
            let target = 10f64.powf(exp);
            let budget = ResourceBudget { mac_units: Some(macs), ..Default::default() };
            if let Ok(f) = folding_search(&cube(), target, &budget, DEFAULT_CLOCK_HZ) {
                let r = estimate(&cube(), &f).unwrap();
                prop_assert!(r.throughput_actions_per_s >= target);
                prop_assert!(budget.admits(&r.resources));
            }
        }
    }
}
