//! Aggregation over seeds and the FP32 parity criterion.

use qpolicy_rl::eval::mean_std;
use qpolicy_rl::EvalReport;
use serde::{Deserialize, Serialize};

/// Per-seed mean returns of one configuration and their mean / population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn from_means(per_seed: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        Summary { per_seed, mean, std }
    }

    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        Summary::from_means(reports.into_iter().map(|r| r.mean).collect())
    }
}

/// Within one baseline standard deviation below the baseline mean, or anywhere above.
pub fn parity(candidate: &Summary, baseline: &Summary) -> bool {
    candidate.mean >= baseline.mean - baseline.std
}

/// Strict band membership, for reporting.
pub fn in_band(candidate: &Summary, baseline: &Summary) -> bool {
    (candidate.mean - baseline.mean).abs() <= baseline.std
}
