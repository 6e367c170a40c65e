// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weights of one reward model and the adapter contract over them.

use crate::engine::config::{FinalNorm, HeadKind, TransformerConfig};
use crate::engine::forward::ActivationCache;
use crate::engine::tokenizer::Tokenizer;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Gain and bias of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Norm {
    pub fn unit(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

/// Multi-head causal self-attention; all projections are `d × d`, applied
/// as `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

/// Two-layer ReLU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

/// One pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

/// Weights, config and tokenizer of one reward model.
///
/// Owns the reward direction `w_r` and bias `b_r`. For multi-objective heads
/// these are the means of the per-objective rows and biases.
#[derive(Debug, Clone)]
pub struct RewardModelBundle {
    config: TransformerConfig,
    tokenizer: Tokenizer,
    pub(crate) embed: Matrix,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm: Option<Norm>,
    pub(crate) head_weight: Matrix,
    pub(crate) head_bias: Vec<f64>,
    reward_direction: Vec<f64>,
    reward_bias: f64,
}

impl RewardModelBundle {
    /// Assemble a bundle, checking every shape against `config`.
    pub fn from_parts(
        config: TransformerConfig,
        tokenizer: Tokenizer,
        embed: Matrix,
        blocks: Vec<Block>,
        final_norm: Option<Norm>,
        head_weight: Matrix,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let shape = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "{what}: got {got:?}, expected {want:?}"
                )))
            }
        };
        let len = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "{what}: got length {got}, expected {want}"
                )))
            }
        };
        if tokenizer.len() != config.vocab_size {
            return Err(Error::ShapeMismatch(format!(
                "vocabulary has {} entries, config says {}",
                tokenizer.len(),
                config.vocab_size
            )));
        }
        shape("embed", embed.shape(), (config.vocab_size, d))?;
        len("blocks", blocks.len(), config.n_layers)?;
        for (i, b) in blocks.iter().enumerate() {
            for (name, n) in [("ln1", &b.ln1), ("ln2", &b.ln2)] {
                len(&format!("blocks.{i}.{name}.gain"), n.gain.len(), d)?;
                len(&format!("blocks.{i}.{name}.bias"), n.bias.len(), d)?;
            }
            for (name, w) in [
                ("wq", &b.attn.wq),
                ("wk", &b.attn.wk),
                ("wv", &b.attn.wv),
                ("wo", &b.attn.wo),
            ] {
                shape(&format!("blocks.{i}.attn.{name}"), w.shape(), (d, d))?;
            }
            shape(&format!("blocks.{i}.mlp.w_in"), b.mlp.w_in.shape(), (d, config.d_mlp))?;
            len(&format!("blocks.{i}.mlp.b_in"), b.mlp.b_in.len(), config.d_mlp)?;
            shape(&format!("blocks.{i}.mlp.w_out"), b.mlp.w_out.shape(), (config.d_mlp, d))?;
            len(&format!("blocks.{i}.mlp.b_out"), b.mlp.b_out.len(), d)?;
        }
        match (config.final_norm, &final_norm) {
            (FinalNorm::LayerNorm, Some(n)) => {
                len("final_norm.gain", n.gain.len(), d)?;
                len("final_norm.bias", n.bias.len(), d)?;
            }
            (FinalNorm::Identity, None) => {}
            (kind, _) => {
                return Err(Error::ShapeMismatch(format!(
                    "final norm parameters inconsistent with final_norm = {kind}"
                )))
            }
        }
        let k = config.head_kind.rows();
        shape("head.weight", head_weight.shape(), (k, d))?;
        len("head.bias", head_bias.len(), k)?;

        let (reward_direction, reward_bias) = mean_head(&head_weight, &head_bias);
        Ok(Self {
            config,
            tokenizer,
            embed,
            blocks,
            final_norm,
            head_weight,
            head_bias,
            reward_direction,
            reward_bias,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// `w_r`.
    pub fn reward_direction(&self) -> &[f64] {
        &self.reward_direction
    }

    /// `b_r`.
    pub fn reward_bias(&self) -> f64 {
        self.reward_bias
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn final_norm(&self) -> Option<&Norm> {
        self.final_norm.as_ref()
    }

    pub fn head_weight(&self) -> &Matrix {
        &self.head_weight
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    /// The adapter matching this bundle's head kind.
    pub fn adapter(&self) -> &'static dyn ModelAdapter {
        match self.config.head_kind {
            HeadKind::Scalar => &ScalarHeadAdapter,
            HeadKind::MultiObjective(_) => &MultiObjectiveAdapter,
        }
    }

    /// Copy with the head (weights and biases) negated.
    pub fn with_negated_head(&self) -> Self {
        let mut head_weight = self.head_weight.clone();
        head_weight.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        let head_bias: Vec<f64> = self.head_bias.iter().map(|b| -b).collect();
        let (reward_direction, reward_bias) = mean_head(&head_weight, &head_bias);
        Self {
            head_weight,
            head_bias,
            reward_direction,
            reward_bias,
            ..self.clone()
        }
    }
}

fn mean_head(weight: &Matrix, bias: &[f64]) -> (Vec<f64>, f64) {
    let k = weight.rows();
    if k == 1 {
        return (weight.row(0).to_vec(), bias[0]);
    }
    let mut w = vec![0.0; weight.cols()];
    for r in weight.iter_rows() {
        crate::numerics::axpy(&mut w, 1.0, r);
    }
    w.iter_mut().for_each(|v| *v /= k as f64);
    (w, bias.iter().sum::<f64>() / k as f64)
}

// ---------------------------------------------------------------------------
// Adapter contract
// ---------------------------------------------------------------------------

/// The accessors a model family must provide for every analysis to run on
/// it.
pub trait ModelAdapter: Send + Sync {
    fn name(&self) -> &'static str;

    /// `(w_r, b_r)`, with `w_r` of length `d_model`.
    fn reward_head_params(&self, model: &RewardModelBundle) -> (Vec<f64>, f64);

    fn layers<'a>(&self, model: &'a RewardModelBundle) -> &'a [Block] {
        model.blocks()
    }

    fn n_layers(&self, model: &RewardModelBundle) -> usize {
        model.config().n_layers
    }

    fn n_heads(&self, model: &RewardModelBundle) -> usize {
        model.config().n_heads
    }

    fn attn_module<'a>(&self, model: &'a RewardModelBundle, layer: usize) -> Option<&'a Attention> {
        model.blocks().get(layer).map(|b| &b.attn)
    }

    fn mlp_module<'a>(&self, model: &'a RewardModelBundle, layer: usize) -> Option<&'a Mlp> {
        model.blocks().get(layer).map(|b| &b.mlp)
    }

    /// Full-sequence residual after block `layer`; needs a full-sequence cache.
    fn extract_layer_output<'a>(&self, cache: &'a ActivationCache, layer: usize) -> Option<&'a Matrix> {
        cache.full().and_then(|f| f.residual.get(layer + 1))
    }

    fn extract_attn_output<'a>(&self, cache: &'a ActivationCache, layer: usize) -> Option<&'a Matrix> {
        cache.full().and_then(|f| f.attn_out.get(layer))
    }

    fn extract_mlp_output<'a>(&self, cache: &'a ActivationCache, layer: usize) -> Option<&'a Matrix> {
        cache.full().and_then(|f| f.mlp_out.get(layer))
    }

    fn embedding<'a>(&self, model: &'a RewardModelBundle) -> &'a Matrix {
        model.embedding()
    }

    /// Final scalar reward of a forward pass.
    fn extract_reward(&self, cache: &ActivationCache) -> f64 {
        cache.reward
    }

    /// Per-objective rows (`K × d_model`) for multi-objective heads.
    fn per_objective_directions<'a>(&self, _model: &'a RewardModelBundle) -> Option<&'a Matrix> {
        None
    }
}

/// Single-row score head.
#[derive(Debug, Clone, Copy)]
pub struct ScalarHeadAdapter;

impl ModelAdapter for ScalarHeadAdapter {
    fn name(&self) -> &'static str {
        "scalar"
    }

    fn reward_head_params(&self, model: &RewardModelBundle) -> (Vec<f64>, f64) {
        (model.head_weight.row(0).to_vec(), model.head_bias[0])
    }
}

/// `K`-row regression head; the aggregate direction is the row mean.
#[derive(Debug, Clone, Copy)]
pub struct MultiObjectiveAdapter;

impl ModelAdapter for MultiObjectiveAdapter {
    fn name(&self) -> &'static str {
        "multi_objective"
    }

    fn reward_head_params(&self, model: &RewardModelBundle) -> (Vec<f64>, f64) {
        mean_head(&model.head_weight, &model.head_bias)
    }

    fn per_objective_directions<'a>(&self, model: &'a RewardModelBundle) -> Option<&'a Matrix> {
        Some(&model.head_weight)
    }
}
