// SPDX-License-Identifier: MIT OR Apache-2.0

//! Behavioural probe suites scored directly on the reward model.

use serde::{Deserialize, Serialize};

/// Two completions of one prompt that differ only along `dimension`.
///
/// `variant_a` is the neutral (or aligned) side, `variant_b` the biased
/// (or misaligned) side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePair {
    pub prompt: String,
    pub variant_a: String,
    pub variant_b: String,
    pub dimension: String,
}

impl ProbePair {
    pub fn new(dimension: &str, prompt: &str, variant_a: &str, variant_b: &str) -> Self {
        Self {
            prompt: prompt.to_string(),
            variant_a: variant_a.to_string(),
            variant_b: variant_b.to_string(),
            dimension: dimension.to_string(),
        }
    }
}

pub mod cascade;
pub mod distortion;
pub mod hacking;

pub use cascade::{cascade_detect, cascade_from_deltas, cross_validate_with_hacking, CascadeReport, CrossValidation};
pub use distortion::{agentic_amplification, distortion_index, DistortionReport, ProbeResult};
pub use hacking::{bias_test, hacking_scan, hacking_scan_default, BiasTestResult, HackingReport, Verdict};
