//! Quantize/de-quantize arithmetic shared by the fake-quant and integer paths.
//!
//! A quantizer with bitwidth `b`, scale `s` and to-integer factor `q_s` maps a
//! real `x` to the code `clip(round(x / s * q_s), q_min, q_max)` and back to
//! `s / q_s * code`. Rounding is half-to-even everywhere so that training-time
//! fake quantization and deployed integer arithmetic agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible scale; dead channels and all-zero tensors floor here.
pub const SCALE_FLOOR: f64 = 1e-8;
/// Percentile of |x| tracked during activation-scale warm-up.
pub const WARMUP_PERCENTILE: f64 = 99.9;
/// EMA momentum of the warm-up statistic.
pub const WARMUP_MOMENTUM: f64 = 0.9;
/// Number of warm-up updates before activation scales are learned.
pub const WARMUP_STEPS: u32 = 300;

const MAX_BITS: u32 = 56;

/// Same result as `f64::round_ties_even`, without the libm call on targets lacking SSE4.1.
/// Adding and subtracting 2^52 rounds under the default ties-to-even mode.
#[inline]
pub fn round_half_even(v: f64) -> f64 {
    const TWO_52: f64 = 4_503_599_627_370_496.0;
    let a = v.abs();
    if a < TWO_52 {
        ((a + TWO_52) - TWO_52).copysign(v)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct QuantSpec {
    bits: u32,
    signed: bool,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    bits: u32,
    signed: bool,
    #[serde(with = "crate::real")]
    scale: f64,
}

impl TryFrom<RawSpec> for QuantSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        QuantSpec::new(raw.bits, raw.signed, raw.scale)
    }
}

impl From<QuantSpec> for RawSpec {
    fn from(q: QuantSpec) -> Self {
        RawSpec { bits: q.bits, signed: q.signed, scale: q.scale }
    }
}

impl QuantSpec {
    pub fn new(bits: u32, signed: bool, scale: f64) -> Result<Self> {
        if !(2..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidSpec(format!("bits must be in [2, {MAX_BITS}], got {bits}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidSpec(format!("scale must be positive and finite, got {scale}")));
        }
        Ok(QuantSpec { bits, signed, scale })
    }

    pub fn signed(bits: u32, scale: f64) -> Result<Self> {
        Self::new(bits, true, scale)
    }

    pub fn unsigned(bits: u32, scale: f64) -> Result<Self> {
        Self::new(bits, false, scale)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same bitwidth and signedness at a different scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.bits, self.signed, scale)
    }

    pub fn q_min(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.bits - 1))
        } else {
            0
        }
    }

    pub fn q_max(&self) -> i64 {
        if self.signed {
            (1i64 << (self.bits - 1)) - 1
        } else {
            (1i64 << self.bits) - 1
        }
    }

    /// `max(|q_min|, |q_max|)`.
    pub fn q_s(&self) -> i64 {
        if self.signed {
            1i64 << (self.bits - 1)
        } else {
            (1i64 << self.bits) - 1
        }
    }

    /// Number of representable codes, `2^bits`.
    pub fn levels(&self) -> u64 {
        1u64 << self.bits
    }

    /// Real value of one code step, `scale / q_s`.
    pub fn unit(&self) -> f64 {
        self.scale / self.q_s() as f64
    }

    /// Position of `x` on the unrounded integer axis, `x / scale * q_s`.
    #[inline]
    pub fn to_lattice(&self, x: f64) -> f64 {
        x / self.scale * self.q_s() as f64
    }

    #[inline]
    pub fn in_range(&self, x: f64) -> bool {
        let v = self.to_lattice(x);
        v >= self.q_min() as f64 && v <= self.q_max() as f64
    }

    /// Quantization without the finiteness check. NaN maps to 0.
    #[inline]
    pub fn code(&self, x: f64) -> i64 {
        let v = round_half_even(self.to_lattice(x));
        if v.is_nan() {
            return 0;
        }
        v.clamp(self.q_min() as f64, self.q_max() as f64) as i64
    }

    #[inline]
    pub fn dequantize(&self, code: i64) -> f64 {
        self.unit() * code as f64
    }

    #[inline]
    pub fn fake_quant(&self, x: f64) -> f64 {
        self.dequantize(self.code(x))
    }

    /// The straight-through surrogate: clipping without rounding.
    #[inline]
    pub fn clip_only(&self, x: f64) -> f64 {
        let v = self.to_lattice(x).clamp(self.q_min() as f64, self.q_max() as f64);
        self.unit() * v
    }
}

/// Gradient rule used by the backward pass through a quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteMode {
    /// Identity inside the clip range, zero outside.
    #[default]
    Clipped,
    /// Identity everywhere.
    PassThrough,
}

/// Whether the forward quantizer rounds. `Identity` evaluates the smooth
/// surrogate the straight-through estimator differentiates, which is what
/// finite-difference gradient checks compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfEven,
    Identity,
}

/// `clip(round_half_even(x / scale * q_s), q_min, q_max)`.
pub fn quantize_int(x: f64, spec: &QuantSpec) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { site: "quantize_int", value: x });
    }
    Ok(spec.code(x))
}

/// `scale / q_s * quantize_int(x)`.
pub fn qdq(x: f64, spec: &QuantSpec) -> Result<f64> {
    quantize_int(x, spec).map(|c| spec.dequantize(c))
}

/// Backward pass of QDQ with respect to its input.
pub fn qdq_backward(upstream_grad: f64, x: f64, spec: &QuantSpec) -> f64 {
    ste_grad(upstream_grad, x, spec, SteMode::Clipped)
}

#[inline]
pub fn ste_grad(upstream_grad: f64, x: f64, spec: &QuantSpec, mode: SteMode) -> f64 {
    match mode {
        SteMode::PassThrough => upstream_grad,
        SteMode::Clipped if spec.in_range(x) => upstream_grad,
        SteMode::Clipped => 0.0,
    }
}

/// Derivative of the QDQ output with respect to its scale, times `upstream_grad`.
///
/// Rounding is treated as identity for gradients, so inside the clip range the
/// derivative is `(round(v) - v) / q_s` with `v = x / s * q_s`; outside it is
/// the clipped code over `q_s`.
#[inline]
pub fn qdq_scale_grad(upstream_grad: f64, x: f64, spec: &QuantSpec, rounding: Rounding) -> f64 {
    let qs = spec.q_s() as f64;
    let v = spec.to_lattice(x);
    let (lo, hi) = (spec.q_min() as f64, spec.q_max() as f64);
    let d = if v < lo {
        lo / qs
    } else if v > hi {
        hi / qs
    } else {
        match rounding {
            Rounding::HalfEven => (round_half_even(v) - v) / qs,
            Rounding::Identity => 0.0,
        }
    };
    upstream_grad * d
}

/// Largest absolute entry, floored at [`SCALE_FLOOR`].
pub fn weight_scale<'a>(weights: impl IntoIterator<Item = &'a f64>) -> f64 {
    weights.into_iter().fold(0.0f64, |m, w| m.max(w.abs())).max(SCALE_FLOOR)
}

/// Linear-interpolation percentile (numpy's default) of `|values|`.
pub fn abs_percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyBatch("abs_percentile"));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if let Some(bad) = abs.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { site: "abs_percentile", value: *bad });
    }
    abs.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (abs.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(abs[lo] + (abs[hi] - abs[lo]) * frac)
}

/// Activation-scale state: statistics-driven during warm-up, learned afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleState {
    pub spec: QuantSpec,
    pub warmup_steps_remaining: u32,
    #[serde(with = "crate::real")]
    pub ema_statistic: f64,
    pub learnable: bool,
}

impl ScaleState {
    pub fn new(spec: QuantSpec) -> Self {
        ScaleState {
            spec,
            warmup_steps_remaining: WARMUP_STEPS,
            ema_statistic: 0.0,
            learnable: true,
        }
    }

    /// A scale that is fixed from the start (no warm-up, no learning).
    pub fn fixed(spec: QuantSpec) -> Self {
        ScaleState { spec, warmup_steps_remaining: 0, ema_statistic: spec.scale(), learnable: false }
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_steps_remaining > 0
    }

    /// Whether gradient updates may move the scale.
    pub fn trainable(&self) -> bool {
        self.learnable && !self.in_warmup()
    }

    /// One warm-up step: EMA of the high percentile of `|batch|`. The first
    /// nonzero statistic initializes the average.
    ///
    /// Outside warm-up this is a no-op.
    pub fn update_warmup(&mut self, batch: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("update_warmup"));
        }
        if !self.in_warmup() {
            return Ok(());
        }
        let stat = abs_percentile(batch, WARMUP_PERCENTILE)?;
        // an empty average is seeded with the first statistic instead of decaying from zero
        self.ema_statistic = if self.ema_statistic == 0.0 {
            stat
        } else {
            WARMUP_MOMENTUM * self.ema_statistic + (1.0 - WARMUP_MOMENTUM) * stat
        };
        self.spec = self.spec.with_scale(self.ema_statistic.max(SCALE_FLOOR))?;
        self.warmup_steps_remaining -= 1;
        Ok(())
    }

    /// Apply a new learned scale; ignored while warming up or when not learnable.
    pub fn set_learned_scale(&mut self, scale: f64) -> Result<()> {
        if self.trainable() {
            self.spec = self.spec.with_scale(scale.max(SCALE_FLOOR))?;
        }
        Ok(())
    }
}

/// Functional form of [`ScaleState::update_warmup`].
pub fn update_scale_warmup(state: &ScaleState, batch: &[f64]) -> Result<ScaleState> {
    let mut next = state.clone();
    next.update_warmup(batch)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn magic_rounding_matches_std() {
        let big = 4_503_599_627_370_495.5f64;
        for v in [0.5, 1.5, 2.5, -0.5, -2.5, 0.49999999999999994, big, -big, 1e300, f64::INFINITY, -0.0, 7.0] {
            assert_eq!(round_half_even(v).to_bits(), v.round_ties_even().to_bits(), "{v}");
        }
        assert!(round_half_even(f64::NAN).is_nan());
    }

    proptest! {
        #[test]
        fn magic_rounding_matches_std_everywhere(v in proptest::num::f64::ANY) {
            let (a, b) = (round_half_even(v), v.round_ties_even());
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    fn s2(scale: f64) -> QuantSpec {
        QuantSpec::signed(2, scale).unwrap()
    }

    #[test]
    fn bounds_follow_signedness() {
        let s = QuantSpec::signed(4, 1.0).unwrap();
        assert_eq!((s.q_min(), s.q_max(), s.q_s()), (-8, 7, 8));
        let u = QuantSpec::unsigned(4, 1.0).unwrap();
        assert_eq!((u.q_min(), u.q_max(), u.q_s()), (0, 15, 15));
        assert_eq!(u.levels(), 16);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(QuantSpec::signed(1, 1.0).is_err());
        assert!(QuantSpec::signed(4, 0.0).is_err());
        assert!(QuantSpec::signed(4, -1.0).is_err());
        assert!(QuantSpec::signed(4, f64::NAN).is_err());
        assert!(QuantSpec::signed(4, f64::INFINITY).is_err());
    }

    #[test]
    fn quantize_int_examples() {
        assert_eq!(quantize_int(0.0, &s2(1.0)).unwrap(), 0);
        assert_eq!(quantize_int(0.0, &QuantSpec::unsigned(7, 0.3).unwrap()).unwrap(), 0);
        // 0.6 * 2 = 1.2 -> 1
        assert_eq!(quantize_int(0.6, &s2(1.0)).unwrap(), 1);
        // -1.5 * 2 = -3 -> clip -2
        assert_eq!(quantize_int(-1.5, &s2(1.0)).unwrap(), -2);
        // 0.8333.. * 3 = 2.5 -> ties to even -> 2
        let u2 = QuantSpec::unsigned(2, 1.0).unwrap();
        assert_eq!(quantize_int(2.5 / 3.0, &u2).unwrap(), 2);
        assert!(quantize_int(f64::NAN, &u2).is_err());
        assert!(quantize_int(f64::NEG_INFINITY, &u2).is_err());
    }

    #[test]
    fn tie_breaking_matches_even_rounding_oracle() {
        // Ties sit exactly on representable halves for scale = q_s.
        let spec = QuantSpec::signed(8, 128.0).unwrap();
        for k in -100i64..100 {
            let x = k as f64 + 0.5;
            let even = if k.rem_euclid(2) == 0 { k } else { k + 1 };
            assert_eq!(spec.code(x), even, "x = {x}");
        }
    }

    #[test]
    fn qdq_examples() {
        assert_eq!(qdq(0.6, &s2(1.0)).unwrap(), 0.5);
        assert_eq!(qdq(0.9, &s2(1.0)).unwrap(), 0.5);
        let spec = QuantSpec::unsigned(3, 0.7).unwrap();
        for k in 0..=7 {
            let x = spec.dequantize(k);
            assert_eq!(qdq(x, &spec).unwrap(), x);
        }
    }

    #[test]
    fn qdq_backward_examples() {
        let spec = s2(1.0);
        assert_eq!(qdq_backward(1.0, 0.3, &spec), 1.0);
        assert_eq!(qdq_backward(0.7, 50.0, &spec), 0.0);
        assert_eq!(qdq_backward(0.0, 0.3, &spec), 0.0);
        assert_eq!(qdq_backward(0.0, -50.0, &spec), 0.0);
        assert_eq!(ste_grad(0.7, 50.0, &spec, SteMode::PassThrough), 0.7);
    }

    #[test]
    fn qdq_backward_dense_grid() {
        for bits in [2u32, 3, 4] {
            for signed in [true, false] {
                let spec = QuantSpec::new(bits, signed, 1.3).unwrap();
                let (lo, hi) = (spec.q_min() as f64, spec.q_max() as f64);
                let n = 4000;
                for i in 0..=n {
                    // lattice coordinate in [lo - 3, hi + 3]
                    let v = lo - 3.0 + (hi - lo + 6.0) * i as f64 / n as f64;
                    let x = v * spec.scale() / spec.q_s() as f64;
                    let g = qdq_backward(1.0, x, &spec);
                    let inside = v > lo + 1e-9 && v < hi - 1e-9;
                    let outside = v < lo - 1e-9 || v > hi + 1e-9;
                    if inside {
                        assert_eq!(g, 1.0, "bits {bits} v {v}");
                    } else if outside {
                        assert_eq!(g, 0.0, "bits {bits} v {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn warmup_examples() {
        let mut st = ScaleState::new(QuantSpec::unsigned(4, 1.0).unwrap());
        st.update_warmup(&[0.0; 16]).unwrap();
        assert_eq!(st.spec.scale(), SCALE_FLOOR);

        let mut st = ScaleState::new(QuantSpec::unsigned(4, 1.0).unwrap());
        st.ema_statistic = 1.0;
        // every |x| is 2, so any percentile is 2
        let next = update_scale_warmup(&st, &[2.0, -2.0, 2.0]).unwrap();
        assert!((next.ema_statistic - 1.1).abs() < 1e-12);
        assert!((next.spec.scale() - 1.1).abs() < 1e-12);
        assert_eq!(next.warmup_steps_remaining, WARMUP_STEPS - 1);

        assert!(st.update_warmup(&[]).is_err());
    }

    #[test]
    fn warmup_ends_after_300_updates_and_learning_begins() {
        let mut st = ScaleState::new(QuantSpec::unsigned(4, 1.0).unwrap());
        st.set_learned_scale(5.0).unwrap();
        assert_ne!(st.spec.scale(), 5.0, "gradient updates must not move the scale during warm-up");
        for _ in 0..300 {
            assert!(st.in_warmup());
            st.update_warmup(&[1.0, 2.0]).unwrap();
        }
        assert_eq!(st.warmup_steps_remaining, 0);
        assert!(st.trainable());
        let frozen_stat = st.spec.scale();
        st.update_warmup(&[100.0]).unwrap();
        assert_eq!(st.spec.scale(), frozen_stat);
        st.set_learned_scale(5.0).unwrap();
        assert_eq!(st.spec.scale(), 5.0);
    }

    #[test]
    fn percentile_interpolates_like_numpy() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        assert_eq!(abs_percentile(&xs, 50.0).unwrap(), 5.0);
        assert!((abs_percentile(&xs, 99.9).unwrap() - 9.99).abs() < 1e-12);
        assert_eq!(abs_percentile(&[-4.0], 99.9).unwrap(), 4.0);
    }

    #[test]
    fn weight_scale_examples() {
        assert_eq!(weight_scale(&[0.0, 0.0, 0.0, 0.0]), SCALE_FLOOR);
        assert_eq!(weight_scale(&[-3.0, 2.0, 1.0, 0.5]), 3.0);
        let w = [0.3, -1.7, 0.2];
        let scaled: Vec<f64> = w.iter().map(|x| x * 4.0).collect();
        assert_eq!(weight_scale(&scaled), 4.0 * weight_scale(&w));
    }

    #[test]
    fn scale_grad_in_surrogate_mode_vanishes_in_range() {
        let spec = QuantSpec::signed(4, 2.0).unwrap();
        assert_eq!(qdq_scale_grad(1.0, 0.3, &spec, Rounding::Identity), 0.0);
        assert_eq!(qdq_scale_grad(1.0, 10.0, &spec, Rounding::Identity), 7.0 / 8.0);
        assert_eq!(qdq_scale_grad(1.0, -10.0, &spec, Rounding::Identity), -1.0);
    }

    #[test]
    fn spec_json_round_trips_with_string_scale() {
        let spec = QuantSpec::signed(6, 0.1 + 0.2).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"bits":6,"signed":true,"scale":"0.30000000000000004"}"#);
        let back: QuantSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<QuantSpec>(r#"{"bits":1,"signed":true,"scale":"1"}"#).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = QuantSpec> {
        (2u32..=10, any::<bool>(), -6.0f64..6.0)
            .prop_map(|(b, s, ls)| QuantSpec::new(b, s, ls.exp()).unwrap())
    }

    proptest! {
        #[test]
        fn error_bounded_inside_clip_range(spec in arb_spec(), x in -500.0f64..500.0) {
            let lo = spec.scale() * spec.q_min() as f64 / spec.q_s() as f64;
            let hi = spec.scale() * spec.q_max() as f64 / spec.q_s() as f64;
            let err = (qdq(x, &spec).unwrap() - x.clamp(lo, hi)).abs();
            prop_assert!(err <= spec.unit() / 2.0 + 1e-12 * spec.scale().max(x.abs()));
        }

        #[test]
        fn qdq_is_idempotent(spec in arb_spec(), x in -500.0f64..500.0) {
            let once = qdq(x, &spec).unwrap();
            prop_assert_eq!(qdq(once, &spec).unwrap(), once);
        }

        #[test]
        fn quantize_is_monotone(spec in arb_spec(), a in -500.0f64..500.0, b in -500.0f64..500.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_int(lo, &spec).unwrap() <= quantize_int(hi, &spec).unwrap());
        }

        #[test]
        fn unsigned_never_clips_nonnegative_at_lower_bound(
            bits in 2u32..=8, ls in -6.0f64..6.0, x in 0.0f64..1e3
        ) {
            let spec = QuantSpec::unsigned(bits, ls.exp()).unwrap();
            prop_assert!(spec.to_lattice(x) >= spec.q_min() as f64);
            prop_assert!(quantize_int(x, &spec).unwrap() >= 0);
        }
    }
}
