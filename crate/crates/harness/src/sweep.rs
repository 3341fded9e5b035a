//! Bitwidth sensitivity sweep over the four scopes.

use std::fmt::Write;

use serde::Serialize;

use crate::runner::Runner;
use crate::scope::Scope;

pub const SWEEP_HEADER: &str = "scope,bits,seed,mean_return,std_return,status";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// `fp32` for the baseline rows.
    pub scope: String,
    pub bits: u32,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = String::new();
        if !header_comment.is_empty() {
            writeln!(out, "# {header_comment}").unwrap();
        }
        writeln!(out, "{SWEEP_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(out, "{},{},{},{:?},{:?},{}", r.scope, r.bits, r.seed, r.mean_return, r.std_return, r.status).unwrap();
        }
        out
    }
}

fn row(runner: &mut Runner, scope: String, bits: u32, quant: Option<qpolicy_core::QuantConfig>, hidden: usize, seed: u64) -> SweepRow {
    match runner.run(quant, hidden, seed) {
        Ok(r) => SweepRow { scope, bits, seed, mean_return: r.eval.mean, std_return: r.eval.std, status: "ok".into() },
        Err(e) => SweepRow {
            scope,
            bits,
            seed,
            mean_return: f64::NAN,
            std_return: f64::NAN,
            status: format!("error: {}", e.to_string().replace(',', ";")),
        },
    }
}

/// FP32 baseline rows first, then every scope and bitwidth. Failed runs are
/// recorded with status `error: ...` and the sweep continues.
pub fn sweep_scopes(runner: &mut Runner, scopes: &[Scope], bits_list: &[u32], hidden: usize, seeds: &[u64]) -> SweepReport {
    let mut rows = Vec::new();
    for &seed in seeds {
        rows.push(row(runner, "fp32".into(), 32, None, hidden, seed));
    }
    for &scope in scopes {
        for &bits in bits_list {
            for &seed in seeds {
                rows.push(row(runner, scope.to_string(), bits, Some(scope.quant(bits)), hidden, seed));
            }
        }
    }
    SweepReport { rows }
}
