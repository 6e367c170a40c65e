// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cached forward passes and the hook points patching and steering use.
//!
//! The residual stream is purely additive: after block `ℓ`,
//! `h[ℓ] = h[ℓ-1] + attn[ℓ] + mlp[ℓ]`, with `h[-1]` the token embedding.
//! The final layer norm is applied only on the way into the head.

use serde::{Deserialize, Serialize};

use crate::engine::weights::{Attention, Mlp, Norm, RewardModelBundle};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, layer_norm, softmax_in_place, Matrix};

/// Which half of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublayer {
    Attn,
    Mlp,
}

impl Sublayer {
    pub fn as_str(self) -> &'static str {
        match self {
            Sublayer::Attn => "attn",
            Sublayer::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for Sublayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn" => Ok(Sublayer::Attn),
            "mlp" => Ok(Sublayer::Mlp),
            _ => Err(Error::Argument(format!("unknown sublayer `{s}` (attn|mlp)"))),
        }
    }
}

/// Intervention points in a forward pass. Both default to no-ops.
///
/// `on_sublayer` sees the full-sequence output of a sublayer before it is
/// added to the stream. `on_residual` sees the stream after the embedding
/// (`layer = -1`) and after every block.
pub trait ForwardHook {
    fn on_sublayer(&mut self, _layer: usize, _sublayer: Sublayer, _output: &mut Matrix) {}

    fn on_residual(&mut self, _layer: isize, _stream: &mut Matrix) {}
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl ForwardHook for NoHook {}

/// Full-sequence (`T × d`) tensors, captured on request.
#[derive(Debug, Clone)]
pub struct FullSequenceCache {
    /// `L + 1` entries; index 0 is the embedding output.
    pub residual: Vec<Matrix>,
    pub attn_out: Vec<Matrix>,
    pub mlp_out: Vec<Matrix>,
}

/// Final-token activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    tokens: Vec<u32>,
    final_token_position: usize,
    residual: Vec<Vec<f64>>,
    attn_out: Vec<Vec<f64>>,
    mlp_out: Vec<Vec<f64>>,
    full: Option<FullSequenceCache>,
    pub(crate) reward: f64,
    head_outputs: Vec<f64>,
}

impl ActivationCache {
    pub fn n_layers(&self) -> usize {
        self.attn_out.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn final_token_position(&self) -> usize {
        self.final_token_position
    }

    /// Final-token residual after block `layer`; `-1` is the embedding.
    pub fn residual(&self, layer: isize) -> &[f64] {
        assert!(layer >= -1 && layer < self.n_layers() as isize, "layer {layer} out of range");
        &self.residual[(layer + 1) as usize]
    }

    pub fn attn_out(&self, layer: usize) -> &[f64] {
        &self.attn_out[layer]
    }

    pub fn mlp_out(&self, layer: usize) -> &[f64] {
        &self.mlp_out[layer]
    }

    pub fn sublayer_out(&self, layer: usize, sublayer: Sublayer) -> &[f64] {
        match sublayer {
            Sublayer::Attn => self.attn_out(layer),
            Sublayer::Mlp => self.mlp_out(layer),
        }
    }

    pub fn final_residual(&self) -> &[f64] {
        self.residual.last().expect("at least the embedding slot")
    }

    pub fn full(&self) -> Option<&FullSequenceCache> {
        self.full.as_ref()
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    /// Raw head outputs: one value for a scalar head, `K` for a
    /// multi-objective head.
    pub fn head_outputs(&self) -> &[f64] {
        &self.head_outputs
    }
}

/// Preferred/dispreferred rewards of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub preferred: f64,
    pub dispreferred: f64,
    pub differential: f64,
}

/// `(sum(mask) - 1)` clamped to `[0, T - 1]`, per right-padded row.
pub fn final_token_positions(masks: &[Vec<u8>]) -> Vec<usize> {
    masks
        .iter()
        .map(|m| {
            let t = m.len().max(1);
            let s = m.iter().map(|&v| v as i64).sum::<i64>() - 1;
            s.clamp(0, t as i64 - 1) as usize
        })
        .collect()
}

impl RewardModelBundle {
    pub fn encode(&self, prompt: &str, response: &str) -> Result<Vec<u32>> {
        self.tokenizer().encode_pair(prompt, response)
    }

    /// Scalar reward `w_rᵀ LN(h_final) + b_r`.
    pub fn score(&self, prompt: &str, response: &str) -> Result<f64> {
        let tokens = self.encode(prompt, response)?;
        Ok(self.forward_tokens(&tokens, false, &mut NoHook)?.reward)
    }

    pub fn score_pair(&self, prompt: &str, preferred: &str, dispreferred: &str) -> Result<PairScore> {
        let p = self.score(prompt, preferred)?;
        let d = self.score(prompt, dispreferred)?;
        Ok(PairScore {
            preferred: p,
            dispreferred: d,
            differential: p - d,
        })
    }

    pub fn forward_with_cache(
        &self,
        prompt: &str,
        response: &str,
        cache_full_sequences: bool,
    ) -> Result<(f64, ActivationCache)> {
        let tokens = self.encode(prompt, response)?;
        let cache = self.forward_tokens(&tokens, cache_full_sequences, &mut NoHook)?;
        Ok((cache.reward, cache))
    }

    /// Forward a right-padded id row; the final token is located from the
    /// attention mask.
    pub fn forward_from_inputs(
        &self,
        input_ids: &[u32],
        attention_mask: &[u8],
        cache_full_sequences: bool,
    ) -> Result<ActivationCache> {
        if input_ids.len() != attention_mask.len() || input_ids.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids with a mask of length {}",
                input_ids.len(),
                attention_mask.len()
            )));
        }
        let last = final_token_positions(&[attention_mask.to_vec()])[0];
        // Causal attention: positions after the final token cannot reach it.
        self.forward_tokens(&input_ids[..=last], cache_full_sequences, &mut NoHook)
    }

    /// `w_rᵀ h + b_r`, with no final layer norm.
    pub fn project_onto_reward(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.d_model() {
            return Err(Error::ShapeMismatch(format!(
                "hidden state of length {}, d_model is {}",
                h.len(),
                self.d_model()
            )));
        }
        Ok(dot(self.reward_direction(), h) + self.reward_bias())
    }

    /// Core forward pass over explicit token ids.
    pub fn forward_tokens(
        &self,
        tokens: &[u32],
        cache_full_sequences: bool,
        hook: &mut dyn ForwardHook,
    ) -> Result<ActivationCache> {
        let cfg = self.config();
        if tokens.is_empty() {
            return Err(Error::Argument("empty token sequence".into()));
        }
        if tokens.len() > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: cfg.max_seq,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        let t_len = tokens.len();
        let last = t_len - 1;
        let d = cfg.d_model;
        let n_layers = cfg.n_layers;

        let mut h = Matrix::zeros(t_len, d);
        for (pos, &tok) in tokens.iter().enumerate() {
            h.row_mut(pos).copy_from_slice(self.embed.row(tok as usize));
        }
        hook.on_residual(-1, &mut h);

        let mut residual = Vec::with_capacity(n_layers + 1);
        let mut attn_cache = Vec::with_capacity(n_layers);
        let mut mlp_cache = Vec::with_capacity(n_layers);
        let mut full = cache_full_sequences.then(|| FullSequenceCache {
            residual: Vec::with_capacity(n_layers + 1),
            attn_out: Vec::with_capacity(n_layers),
            mlp_out: Vec::with_capacity(n_layers),
        });
        residual.push(h.row(last).to_vec());
        if let Some(f) = full.as_mut() {
            f.residual.push(h.clone());
        }

        let rope = Rope::new(t_len, cfg.d_head, cfg.rope_base);
        for (layer, block) in self.blocks.iter().enumerate() {
            let x = norm_rows(&h, &block.ln1, cfg.norm_eps);
            let mut a = attention(&block.attn, &x, cfg.n_heads, cfg.d_head, &rope);
            hook.on_sublayer(layer, crate::engine::Sublayer::Attn, &mut a);
            add_in_place(&mut h, &a);

            let x = norm_rows(&h, &block.ln2, cfg.norm_eps);
            let mut m = mlp(&block.mlp, &x);
            hook.on_sublayer(layer, crate::engine::Sublayer::Mlp, &mut m);
            add_in_place(&mut h, &m);

            hook.on_residual(layer as isize, &mut h);

            residual.push(h.row(last).to_vec());
            attn_cache.push(a.row(last).to_vec());
            mlp_cache.push(m.row(last).to_vec());
            if let Some(f) = full.as_mut() {
                f.residual.push(h.clone());
                f.attn_out.push(a);
                f.mlp_out.push(m);
            }
        }

        let h_final = h.row(last);
        let normed = match &self.final_norm {
            Some(n) => layer_norm(h_final, &n.gain, &n.bias, cfg.norm_eps),
            None => h_final.to_vec(),
        };
        let head_outputs: Vec<f64> = self
            .head_weight
            .iter_rows()
            .zip(&self.head_bias)
            .map(|(w, b)| dot(w, &normed) + b)
            .collect();
        let reward = dot(self.reward_direction(), &normed) + self.reward_bias();
        if !reward.is_finite() {
            return Err(Error::NonFinite("non-finite reward".into()));
        }

        Ok(ActivationCache {
            tokens: tokens.to_vec(),
            final_token_position: last,
            residual,
            attn_out: attn_cache,
            mlp_out: mlp_cache,
            full,
            reward,
            head_outputs,
        })
    }

    /// Reward readout from an arbitrary final residual, through the final
    /// norm as in production.
    pub fn head_reward(&self, h_final: &[f64]) -> f64 {
        let normed = match &self.final_norm {
            Some(n) => layer_norm(h_final, &n.gain, &n.bias, self.config().norm_eps),
            None => h_final.to_vec(),
        };
        dot(self.reward_direction(), &normed) + self.reward_bias()
    }
}

fn add_in_place(h: &mut Matrix, delta: &Matrix) {
    for (a, b) in h.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *a += b;
    }
}

fn norm_rows(h: &Matrix, n: &Norm, eps: f64) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        out.row_mut(i)
            .copy_from_slice(&layer_norm(h.row(i), &n.gain, &n.bias, eps));
    }
    out
}

/// Rotary position tables: `cos/sin[pos][pair]`.
struct Rope {
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl Rope {
    fn new(t_len: usize, d_head: usize, base: f64) -> Self {
        let pairs = d_head / 2;
        let freqs: Vec<f64> = (0..pairs)
            .map(|i| base.powf(-(2.0 * i as f64) / d_head as f64))
            .collect();
        let (mut cos, mut sin) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len));
        for pos in 0..t_len {
            cos.push(freqs.iter().map(|f| (pos as f64 * f).cos()).collect());
            sin.push(freqs.iter().map(|f| (pos as f64 * f).sin()).collect());
        }
        Self { cos, sin }
    }

    fn apply(&self, pos: usize, x: &mut [f64]) {
        for (i, (c, s)) in self.cos[pos].iter().zip(&self.sin[pos]).enumerate() {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            x[2 * i] = a * c - b * s;
            x[2 * i + 1] = a * s + b * c;
        }
    }
}

fn attention(attn: &Attention, x: &Matrix, n_heads: usize, d_head: usize, rope: &Rope) -> Matrix {
    let t_len = x.rows();
    let mut q = x.matmul(&attn.wq);
    let mut k = x.matmul(&attn.wk);
    let v = x.matmul(&attn.wv);
    for pos in 0..t_len {
        for head in 0..n_heads {
            let span = head * d_head..(head + 1) * d_head;
            rope.apply(pos, &mut q.row_mut(pos)[span.clone()]);
            rope.apply(pos, &mut k.row_mut(pos)[span]);
        }
    }
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut mixed = Matrix::zeros(t_len, x.cols());
    let mut scores = Vec::with_capacity(t_len);
    for head in 0..n_heads {
        let span = head * d_head..(head + 1) * d_head;
        for t in 0..t_len {
            let qt = &q.row(t)[span.clone()];
            scores.clear();
            scores.extend((0..=t).map(|j| dot(qt, &k.row(j)[span.clone()]) * scale));
            softmax_in_place(&mut scores);
            let out = &mut mixed.row_mut(t)[span.clone()];
            for (j, &p) in scores.iter().enumerate() {
                axpy(out, p, &v.row(j)[span.clone()]);
            }
        }
    }
    mixed.matmul(&attn.wo)
}

fn mlp(m: &Mlp, x: &Matrix) -> Matrix {
    let mut hidden = x.matmul(&m.w_in);
    for i in 0..hidden.rows() {
        for (v, b) in hidden.row_mut(i).iter_mut().zip(&m.b_in) {
            *v = (*v + b).max(0.0);
        }
    }
    let mut out = hidden.matmul(&m.w_out);
    for i in 0..out.rows() {
        for (v, b) in out.row_mut(i).iter_mut().zip(&m.b_out) {
            *v += b;
        }
    }
    out
}
