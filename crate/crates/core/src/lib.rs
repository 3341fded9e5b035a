//! Quantization-aware policy networks and their integer-only deployment.
//!
//! The crate is organised bottom-up:
//!
//! - [`quant`]: quantize/de-quantize math, straight-through gradients and scale management
//! - [`mlp`], [`adam`], [`normalizer`]: plain float networks, the optimizer and input standardization
//! - [`policy`]: the fake-quant policy MLP with a manual backward pass
//! - [`lowering`]: compilation of a frozen policy into an [`IntegerGraph`]
//! - [`intrt`]: the integer-only interpreter for lowered graphs
//! - [`hwcost`]: the PE/SIMD folding cost model and throughput-driven folding search

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod hwcost;
pub mod intrt;
pub mod lowering;
pub mod mlp;
pub mod normalizer;
pub mod policy;
pub mod quant;
pub mod real;

pub use error::{Error, Result};
pub use hwcost::{CostReport, FoldingConfig, LayerFold, LayerShape, ResourceBudget};
pub use intrt::{run_integer, IntActivation};
pub use lowering::{lower, IntLayer, IntegerGraph};
pub use normalizer::Normalizer;
pub use policy::{PolicyNet, QuantConfig};
pub use quant::{QuantSpec, ScaleState, SteMode};
