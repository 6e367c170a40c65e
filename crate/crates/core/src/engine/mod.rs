// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal pre-norm decoder-only transformer with a reward head.

mod config;
mod forward;
mod tokenizer;
mod toy;
mod weights;

use serde::{Deserialize, Serialize};

pub use config::{FinalNorm, HeadKind, TransformerConfig};
pub use forward::{
    final_token_positions, ActivationCache, ForwardHook, FullSequenceCache, NoHook, PairScore,
    Sublayer,
};
pub use tokenizer::{Tokenizer, BOS, BOS_ID, SEP, SEP_ID};
pub use toy::{build_planted_model, build_seeded_model, PlantSpec, PlantedModel, WEIGHT_SCALE};
pub use weights::{
    Attention, Block, Mlp, ModelAdapter, MultiObjectiveAdapter, Norm, RewardModelBundle,
    ScalarHeadAdapter,
};

/// A prompt with a preferred and a dispreferred completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub preferred: String,
    pub dispreferred: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
}

impl PreferencePair {
    pub fn new(prompt: &str, preferred: &str, dispreferred: &str) -> Self {
        Self {
            prompt: prompt.to_string(),
            preferred: preferred.to_string(),
            dispreferred: dispreferred.to_string(),
            dimension: None,
        }
    }

    pub fn with_dimension(mut self, dimension: &str) -> Self {
        self.dimension = Some(dimension.to_string());
        self
    }
}
