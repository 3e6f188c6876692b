//! Evaluation and diagnostics.

pub mod bleu;
pub mod bootstrap;
pub mod ibm1;
pub mod metrics;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

pub use bleu::{bleu, model_bleu};
pub use bootstrap::paired_bootstrap;
pub use ibm1::{train_ibm1, Alignment, AlignmentModel};
pub use metrics::{attribute_ratio_per_bin, coverage, frequency_rank, gsnr, margin, uncertainty};

/// Flat summary of one evaluated model or subset. Absent fields were not
/// computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frequency_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uncertainty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gsnr: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub attribute_ratio_per_bin: Vec<f64>,
}

impl MetricsReport {
    /// Checks the documented value ranges of every present field.
    pub fn in_range(&self) -> bool {
        let within = |v: Option<f64>, lo: f64, hi: f64| v.is_none_or(|x| (lo..=hi).contains(&x));
        within(self.bleu, 0.0, 100.0)
            && within(self.bootstrap_p, 0.0, 1.0)
            && within(self.coverage, 0.0, 1.0)
            && within(self.margin, -1.0, 1.0)
            && within(self.uncertainty, 0.0, f64::INFINITY)
            && within(self.gsnr, 0.0, f64::INFINITY)
            && within(self.frequency_rank, 1.0, f64::INFINITY)
            && self.attribute_ratio_per_bin.iter().all(|r| (0.0..=1.0).contains(r))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).at(path)
    }
}
