// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat JSON run summaries.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::RewardModelBundle;
use crate::io::fingerprint;

pub const RUN_SUMMARY_SCHEMA: &str = "reward-lens/run-summary/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub fingerprint: String,
    pub n_layers: usize,
    pub d_model: usize,
    pub head_kind: String,
}

impl ModelInfo {
    pub fn of(bundle: &RewardModelBundle) -> Self {
        Self {
            fingerprint: fingerprint(bundle),
            n_layers: bundle.n_layers(),
            d_model: bundle.d_model(),
            head_kind: bundle.config().head_kind.to_string(),
        }
    }
}

/// Envelope written by every CLI command. Contains nothing that varies
/// between identical invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the command's arguments as JSON.
    pub config_hash: String,
    pub model: Option<ModelInfo>,
    pub warnings: Vec<String>,
    pub report: serde_json::Value,
}

impl RunSummary {
    pub fn new(
        command: &str,
        seed: u64,
        args: &serde_json::Value,
        model: Option<ModelInfo>,
        warnings: Vec<String>,
        report: serde_json::Value,
    ) -> Self {
        Self {
            schema: RUN_SUMMARY_SCHEMA.to_string(),
            command: command.to_string(),
            seed,
            config_hash: config_hash(args),
            model,
            warnings,
            report,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

pub fn config_hash(args: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(args).expect("arguments serialise"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
