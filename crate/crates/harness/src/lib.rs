//! Experiment orchestration for quantization-aware policies: scope sweeps,
//! staged model selection, noise robustness and run-directory manifests.

pub mod manifest;
pub mod noise;
pub mod parity;
pub mod runner;
pub mod scope;
pub mod select;
pub mod sweep;

pub use noise::{noise_eval, NoiseModel, NoiseRow};
pub use parity::{parity, Summary};
pub use runner::{RunKey, RunResult, Runner, EVAL_SEED};
pub use scope::Scope;
pub use select::{select_model, SelectionResult};
pub use sweep::{sweep_scopes, SweepReport};

use std::fmt::Write;

use qpolicy_rl::CurvePoint;

pub const CURVE_HEADER: &str = "step,seed,mean_return,std_return";

pub fn curve_csv(seed: u64, curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in curve {
        writeln!(out, "{},{},{:?},{:?}", p.step, seed, p.mean_return, p.std_return).unwrap();
    }
    out
}
