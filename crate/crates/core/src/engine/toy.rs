// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic toy models.
//!
//! [`build_seeded_model`] draws every weight from a seeded ChaCha8 stream.
//! [`build_planted_model`] builds a model whose only nonzero sublayer is a
//! known circuit, so its reward has a closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::config::{FinalNorm, HeadKind, TransformerConfig};
use crate::engine::forward::Sublayer;
use crate::engine::tokenizer::Tokenizer;
use crate::engine::weights::{Attention, Block, Mlp, Norm, RewardModelBundle};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, layer_norm, norm, Matrix};

/// Weight standard deviation relative to `1/sqrt(d_model)`.
pub const WEIGHT_SCALE: f64 = 0.02;

struct Gen {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Gen {
    fn new(seed: u64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("positive std"),
        }
    }

    /// One draw, rounded to `f32` so the value survives a save/load cycle.
    fn draw(&mut self) -> f64 {
        self.normal.sample(&mut self.rng) as f32 as f64
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw()).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, self.vec(rows * cols)).expect("sized")
    }
}

fn default_tokenizer(vocab_size: usize) -> Tokenizer {
    let words = crate::data::default_vocabulary();
    Tokenizer::with_words(words.iter().map(String::as_str), vocab_size)
}

/// Pseudo-random model: every weight and bias is `N(0, (0.02/sqrt(d))²)`
/// from ChaCha8 seeded with `seed`, rounded to `f32`; norm gains are 1 and
/// norm biases 0. The vocabulary is the bundled default word list.
pub fn build_seeded_model(config: &TransformerConfig, seed: u64) -> Result<RewardModelBundle> {
    config.validate()?;
    let d = config.d_model;
    let dm = config.d_mlp;
    let mut g = Gen::new(seed, WEIGHT_SCALE / (d as f64).sqrt());

    let embed = g.matrix(config.vocab_size, d);
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1: Norm::unit(d),
            attn: Attention {
                wq: g.matrix(d, d),
                wk: g.matrix(d, d),
                wv: g.matrix(d, d),
                wo: g.matrix(d, d),
            },
            ln2: Norm::unit(d),
            mlp: Mlp {
                w_in: g.matrix(d, dm),
                b_in: g.vec(dm),
                w_out: g.matrix(dm, d),
                b_out: g.vec(d),
            },
        })
        .collect();
    let final_norm = match config.final_norm {
        FinalNorm::LayerNorm => Some(Norm::unit(d)),
        FinalNorm::Identity => None,
    };
    let k = config.head_kind.rows();
    let head_weight = g.matrix(k, d);
    let head_bias = g.vec(k);
    RewardModelBundle::from_parts(
        config.clone(),
        default_tokenizer(config.vocab_size),
        embed,
        blocks,
        final_norm,
        head_weight,
        head_bias,
    )
}

/// Description of the single circuit planted by [`build_planted_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    pub layer: usize,
    pub sublayer: Sublayer,
    /// Written direction `u`; `None` means `w_r / |w_r|`.
    pub direction: Option<Vec<f64>>,
    pub trigger_token: u32,
    pub gain: f64,
    /// Weight of a random mixture of embedding rows folded into `w_r`.
    /// At 0, `w_r` is orthogonal to every embedding.
    pub embed_alignment: f64,
    pub seed: u64,
}

impl PlantSpec {
    pub fn mlp(layer: usize, trigger_token: u32, gain: f64) -> Self {
        Self {
            layer,
            sublayer: Sublayer::Mlp,
            direction: None,
            trigger_token,
            gain,
            embed_alignment: 0.0,
            seed: 0,
        }
    }
}

/// A planted model together with the direction it writes.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub bundle: RewardModelBundle,
    pub spec: PlantSpec,
    /// The resolved `u`.
    pub direction: Vec<f64>,
}

impl PlantedModel {
    /// `w_rᵀ u`.
    pub fn reward_gain(&self) -> f64 {
        dot(self.bundle.reward_direction(), &self.direction)
    }

    /// Closed-form reward of a token sequence.
    ///
    /// MLP plant: `w_rᵀ(E[final] + c·u·1[final = t*]) + b_r`.
    /// Attention plant: `w_rᵀ(E[final] + c·u·n(t*)/T) + b_r`, where `n(t*)`
    /// counts trigger occurrences among the `T` tokens.
    pub fn closed_form_reward(&self, tokens: &[u32]) -> f64 {
        let final_tok = *tokens.last().expect("non-empty");
        let mut h = self.bundle.embedding().row(final_tok as usize).to_vec();
        let weight = match self.spec.sublayer {
            Sublayer::Mlp => f64::from(u8::from(final_tok == self.spec.trigger_token)),
            Sublayer::Attn => {
                tokens.iter().filter(|&&t| t == self.spec.trigger_token).count() as f64
                    / tokens.len() as f64
            }
        };
        axpy(&mut h, self.spec.gain * weight, &self.direction);
        dot(self.bundle.reward_direction(), &h) + self.bundle.reward_bias()
    }
}

/// Gram-Schmidt `v` against `basis` (assumed orthonormal) and normalise.
fn orthonormalise(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            axpy(&mut v, -c, b);
        }
    }
    let n = norm(&v);
    (n > 1e-8).then(|| v.iter().map(|x| x / n).collect())
}

/// Model whose sublayers all output exactly zero except one planted circuit.
///
/// Embedding rows are orthonormal and orthogonal to the all-ones vector and
/// to a base reward direction, which requires `vocab_size <= d_model - 2`.
/// The final norm is the identity, so the head reads the stream directly.
///
/// * MLP plant at layer `ℓ*`: one ReLU unit reads `E[t*]` and writes `c·u`,
///   so the stream gains `c·u` exactly when the current token is `t*`.
/// * Attention plant at layer `ℓ*`: uniform attention (zero query/key)
///   averages an indicator of `t*`, writing `c·u·n(t*)/T` at the final
///   token.
pub fn build_planted_model(config: &TransformerConfig, spec: PlantSpec) -> Result<PlantedModel> {
    let config = config.clone().with_final_norm(FinalNorm::Identity);
    config.validate()?;
    if config.head_kind != HeadKind::Scalar {
        return Err(Error::Argument("planted models use a scalar head".into()));
    }
    let d = config.d_model;
    let v = config.vocab_size;
    if v + 2 > d {
        return Err(Error::Argument(format!(
            "planted models need vocab_size <= d_model - 2 (got {v} and {d})"
        )));
    }
    if spec.layer >= config.n_layers {
        return Err(Error::Argument(format!(
            "plant layer {} >= n_layers {}",
            spec.layer, config.n_layers
        )));
    }
    if spec.trigger_token as usize >= v {
        return Err(Error::UnknownToken(format!("trigger id {}", spec.trigger_token)));
    }
    if let Some(u) = &spec.direction {
        if u.len() != d {
            return Err(Error::ShapeMismatch(format!("plant direction of length {}", u.len())));
        }
    }

    let mut g = Gen::new(spec.seed, 1.0);
    let ones = vec![1.0 / (d as f64).sqrt(); d];
    let mut basis = vec![ones];
    let w_perp = loop {
        if let Some(w) = orthonormalise(g.vec(d), &basis) {
            break w;
        }
    };
    basis.push(w_perp.clone());
    let mut rows = Vec::with_capacity(v);
    while rows.len() < v {
        if let Some(e) = orthonormalise(g.vec(d), &basis) {
            basis.push(e.clone());
            rows.push(e);
        }
    }
    let mut w_r = w_perp;
    if spec.embed_alignment != 0.0 {
        for e in &rows {
            let coef = g.draw();
            axpy(&mut w_r, spec.embed_alignment * coef, e);
        }
    }
    let b_r = 0.1 * g.draw();
    let embed = Matrix::from_rows(&rows)?;

    let zero_block = || Block {
        ln1: Norm::unit(d),
        attn: Attention {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        },
        ln2: Norm::unit(d),
        mlp: Mlp {
            w_in: Matrix::zeros(d, config.d_mlp),
            b_in: vec![0.0; config.d_mlp],
            w_out: Matrix::zeros(config.d_mlp, d),
            b_out: vec![0.0; d],
        },
    };
    let mut blocks: Vec<Block> = (0..config.n_layers).map(|_| zero_block()).collect();

    let u = match &spec.direction {
        Some(u) => u.clone(),
        None => {
            let n = norm(&w_r);
            w_r.iter().map(|x| x / n).collect()
        }
    };
    let trigger = embed.row(spec.trigger_token as usize).to_vec();
    // Upstream sublayers are zero, so the planted layer's norm sees E[t*].
    let normed = layer_norm(&trigger, &vec![1.0; d], &vec![0.0; d], config.norm_eps);
    let response = dot(&normed, &trigger);
    let block = &mut blocks[spec.layer];
    match spec.sublayer {
        Sublayer::Mlp => {
            let threshold = 0.5 * response;
            for i in 0..d {
                block.mlp.w_in[(i, 0)] = trigger[i];
            }
            block.mlp.b_in[0] = -threshold;
            let active = response + (-threshold);
            for (w, ui) in block.mlp.w_out.row_mut(0).iter_mut().zip(&u) {
                *w = spec.gain * ui / active;
            }
        }
        Sublayer::Attn => {
            for i in 0..d {
                block.attn.wv[(i, 0)] = trigger[i];
            }
            for (w, ui) in block.attn.wo.row_mut(0).iter_mut().zip(&u) {
                *w = spec.gain * ui / response;
            }
        }
    }

    let tokenizer = default_tokenizer(v);
    let bundle = RewardModelBundle::from_parts(
        config,
        tokenizer,
        embed,
        blocks,
        None,
        Matrix::from_vec(1, d, w_r)?,
        vec![b_r],
    )?;
    Ok(PlantedModel {
        bundle,
        spec,
        direction: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TransformerConfig {
        TransformerConfig::new(3, 32, 4, 24)
    }

    #[test]
    fn planted_embeddings_are_orthonormal_and_centered() {
        let p = build_planted_model(&cfg(), PlantSpec::mlp(1, 5, 2.0)).unwrap();
        let e = p.bundle.embedding();
        for i in 0..e.rows() {
            assert!((norm(e.row(i)) - 1.0).abs() < 1e-12);
            assert!(e.row(i).iter().sum::<f64>().abs() < 1e-12);
            for j in 0..i {
                assert!(dot(e.row(i), e.row(j)).abs() < 1e-12);
            }
            assert!(dot(e.row(i), p.bundle.reward_direction()).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_rejects_bad_specs() {
        assert!(build_planted_model(&cfg(), PlantSpec::mlp(3, 0, 1.0)).is_err());
        assert!(matches!(
            build_planted_model(&cfg(), PlantSpec::mlp(0, 99, 1.0)),
            Err(Error::UnknownToken(_))
        ));
        let wide = TransformerConfig::new(2, 32, 4, 31);
        assert!(build_planted_model(&wide, PlantSpec::mlp(0, 0, 1.0)).is_err());
    }

    #[test]
    fn seeded_weights_are_f32_exact() {
        let m = build_seeded_model(&cfg(), 3).unwrap();
        assert!(m
            .embedding()
            .as_slice()
            .iter()
            .all(|&x| (x as f32) as f64 == x));
    }

    #[test]
    fn planted_mlp_matches_closed_form_for_every_final_token() {
        let p = build_planted_model(&cfg(), PlantSpec::mlp(1, 5, 5.0)).unwrap();
        for t in 0..24u32 {
            let tokens = [0, 7, 1, t];
            let got = p.bundle.forward_tokens(&tokens, false, &mut crate::engine::NoHook).unwrap();
            assert!((got.reward() - p.closed_form_reward(&tokens)).abs() < 1e-9, "token {t}");
        }
        let w = norm(p.bundle.reward_direction());
        let on = p.closed_form_reward(&[0, 1, 5]);
        let off = p.closed_form_reward(&[0, 1, 6]);
        assert!((on - off - 5.0 * w).abs() < 1e-9);
    }

    #[test]
    fn planted_attention_counts_the_trigger() {
        let spec = PlantSpec {
            sublayer: Sublayer::Attn,
            embed_alignment: 0.3,
            ..PlantSpec::mlp(2, 4, 3.0)
        };
        let p = build_planted_model(&cfg(), spec).unwrap();
        for tokens in [vec![0u32, 4, 1, 9], vec![0, 4, 4, 1, 4, 2], vec![0, 1, 3]] {
            let got = p.bundle.forward_tokens(&tokens, false, &mut crate::engine::NoHook).unwrap();
            assert!((got.reward() - p.closed_form_reward(&tokens)).abs() < 1e-9);
        }
    }
}
