//! Three-stage model selection: core bitwidth, then hidden width, then input bitwidth.

use qpolicy_core::{lower, QuantConfig};
use qpolicy_rl::{evaluate, RlError};
use serde::Serialize;

use crate::parity::{parity, Summary};
use crate::runner::{Runner, EVAL_SEED};

pub const OUTPUT_BITS: u32 = 8;
pub const SEARCH_BITS: std::ops::RangeInclusive<u32> = 2..=7;
pub const WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Core,
    Width,
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub stage: Stage,
    pub hidden: usize,
    pub b_core: u32,
    pub b_in: u32,
    pub summary: Summary,
    pub parity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub hidden: usize,
    pub b_core: u32,
    pub b_in: u32,
    pub b_out: u32,
    /// Stages where no reduced setting matched and the maximal one was kept.
    pub no_reduction: Vec<Stage>,
    pub baseline: Summary,
    pub selected: Summary,
    /// The selected models lowered to integer graphs and re-evaluated.
    pub deployed: Summary,
    pub deployed_parity: bool,
    pub trials: Vec<Trial>,
}

impl SelectionResult {
    pub fn quant(&self) -> QuantConfig {
        QuantConfig::core(self.b_core, self.b_in, self.b_out)
    }
}

fn trial(runner: &mut Runner, stage: Stage, hidden: usize, b_core: u32, b_in: u32, seeds: &[u64], baseline: &Summary) -> Result<Trial, RlError> {
    let quant = QuantConfig::core(b_core, b_in, OUTPUT_BITS);
    let (summary, _) = runner.summary(Some(quant), hidden, seeds)?;
    let parity = parity(&summary, baseline);
    if runner.verbose {
        eprintln!("  {stage:?} h={hidden} core={b_core} in={b_in}: {:.1} (parity {parity})", summary.mean);
    }
    Ok(Trial { stage, hidden, b_core, b_in, summary, parity })
}

/// Smallest-first search at each stage, stopping at the first setting with parity.
pub fn select_model(runner: &mut Runner, seeds: &[u64], base_width: usize) -> Result<SelectionResult, RlError> {
    let (baseline, _) = runner.summary(None, base_width, seeds)?;
    let mut trials = Vec::new();
    let mut no_reduction = Vec::new();

    let mut b_core = 8;
    for b in SEARCH_BITS {
        let t = trial(runner, Stage::Core, base_width, b, 8, seeds, &baseline)?;
        let hit = t.parity;
        trials.push(t);
        if hit {
            b_core = b;
            break;
        }
    }
    if b_core == 8 {
        no_reduction.push(Stage::Core);
    }

    let mut hidden = base_width;
    for &h in WIDTHS.iter().filter(|&&h| h < base_width) {
        let t = trial(runner, Stage::Width, h, b_core, 8, seeds, &baseline)?;
        let hit = t.parity;
        trials.push(t);
        if hit {
            hidden = h;
            break;
        }
    }
    if hidden == base_width {
        no_reduction.push(Stage::Width);
    }

    let mut b_in = 8;
    for b in SEARCH_BITS {
        let t = trial(runner, Stage::Input, hidden, b_core, b, seeds, &baseline)?;
        let hit = t.parity;
        trials.push(t);
        if hit {
            b_in = b;
            break;
        }
    }
    if b_in == 8 {
        no_reduction.push(Stage::Input);
    }

    let quant = QuantConfig::core(b_core, b_in, OUTPUT_BITS);
    let (selected, runs) = runner.summary(Some(quant), hidden, seeds)?;
    let mut deployed_means = Vec::with_capacity(runs.len());
    for r in &runs {
        let graph = lower(&r.policy)?;
        deployed_means.push(evaluate(&graph, runner.env.as_ref(), runner.eval_episodes, EVAL_SEED)?.mean);
    }
    let deployed = Summary::from_means(deployed_means);
    let deployed_parity = parity(&deployed, &baseline);
    Ok(SelectionResult { hidden, b_core, b_in, b_out: OUTPUT_BITS, no_reduction, baseline, selected, deployed, deployed_parity, trials })
}
