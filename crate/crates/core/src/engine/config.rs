// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the reward head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Scalar,
    /// `K` per-objective rows; the aggregate direction is their mean.
    MultiObjective(usize),
}

impl HeadKind {
    pub fn rows(self) -> usize {
        match self {
            HeadKind::Scalar => 1,
            HeadKind::MultiObjective(k) => k,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Scalar => f.write_str("scalar"),
            HeadKind::MultiObjective(k) => write!(f, "multi_objective:{k}"),
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scalar" {
            return Ok(HeadKind::Scalar);
        }
        if let Some(k) = s.strip_prefix("multi_objective:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::UnknownHeadKind(s.to_string()))?;
            if k == 0 {
                return Err(Error::UnknownHeadKind(s.to_string()));
            }
            return Ok(HeadKind::MultiObjective(k));
        }
        Err(Error::UnknownHeadKind(s.to_string()))
    }
}

/// Normalisation applied to the final residual before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalNorm {
    LayerNorm,
    /// No final normalisation; used by the planted toy models so that the
    /// head reads the residual stream directly.
    Identity,
}

impl fmt::Display for FinalNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinalNorm::LayerNorm => "layer_norm",
            FinalNorm::Identity => "identity",
        })
    }
}

impl FromStr for FinalNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer_norm" => Ok(FinalNorm::LayerNorm),
            "identity" => Ok(FinalNorm::Identity),
            _ => Err(Error::Format(format!("unknown final_norm `{s}`"))),
        }
    }
}

/// Architectural sizes of a pre-norm decoder-only reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub head_kind: HeadKind,
    pub final_norm: FinalNorm,
    pub norm_eps: f64,
    pub rope_base: f64,
}

impl TransformerConfig {
    /// Config with `d_head = d_model / n_heads`, `d_mlp = 4 * d_model`, a
    /// scalar head and a layer-normed output.
    pub fn new(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_mlp: 4 * d_model,
            vocab_size,
            max_seq: 128,
            head_kind: HeadKind::Scalar,
            final_norm: FinalNorm::LayerNorm,
            norm_eps: 1e-5,
            rope_base: 10_000.0,
        }
    }

    pub fn with_head(mut self, head_kind: HeadKind) -> Self {
        self.head_kind = head_kind;
        self
    }

    pub fn with_final_norm(mut self, final_norm: FinalNorm) -> Self {
        self.final_norm = final_norm;
        self
    }

    pub fn with_max_seq(mut self, max_seq: usize) -> Self {
        self.max_seq = max_seq;
        self
    }

    pub fn with_d_mlp(mut self, d_mlp: usize) -> Self {
        self.d_mlp = d_mlp;
        self
    }

    /// Number of component slots: embedding plus attention and MLP per layer.
    pub fn n_components(&self) -> usize {
        2 * self.n_layers + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 {
            return Err(Error::ShapeMismatch("n_layers must be >= 1".into()));
        }
        if self.n_heads == 0 || self.d_head == 0 || self.d_model != self.n_heads * self.d_head {
            return Err(Error::ShapeMismatch(format!(
                "d_model {} != n_heads {} * d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "d_head {} must be even for rotary embeddings",
                self.d_head
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::ShapeMismatch("vocab_size must be >= 2".into()));
        }
        if self.d_mlp == 0 {
            return Err(Error::ShapeMismatch("d_mlp must be >= 1".into()));
        }
        if self.max_seq < 2 {
            return Err(Error::ShapeMismatch("max_seq must be >= 2".into()));
        }
        if let HeadKind::MultiObjective(0) = self.head_kind {
            return Err(Error::UnknownHeadKind("multi_objective:0".into()));
        }
        if !(self.norm_eps > 0.0) || !(self.rope_base > 0.0) {
            return Err(Error::Format("norm_eps and rope_base must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_kind_round_trips_through_text() {
        for h in [HeadKind::Scalar, HeadKind::MultiObjective(19)] {
            assert_eq!(h.to_string().parse::<HeadKind>().unwrap(), h);
        }
        assert!(matches!(
            "mixture".parse::<HeadKind>(),
            Err(Error::UnknownHeadKind(_))
        ));
    }

    #[test]
    fn validate_catches_head_split() {
        let mut cfg = TransformerConfig::new(2, 32, 4, 64);
        cfg.validate().unwrap();
        cfg.d_head = 6;
        assert!(matches!(cfg.validate(), Err(Error::ShapeMismatch(_))));
    }
}
