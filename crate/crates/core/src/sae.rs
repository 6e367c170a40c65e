// SPDX-License-Identifier: MIT OR Apache-2.0

//! TopK sparse autoencoder over residual-stream activations.
//!
//! ```text
//! z = (x - b_dec) W_enc + b_enc
//! f = ReLU(TopK(z, k))
//! x̂ = f W_dec + b_dec
//! ```
//!
//! Rows of `W_dec` are the feature directions `d_i`; they are renormalised
//! to unit length after every optimiser step.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::RewardModelBundle;
use crate::error::{Error, Result};
use crate::io::blob::{self, Tensor};
use crate::io::shard::{shard_path, write_shard, ActivationShard};
use crate::numerics::{dot, norm, topk_indices, Matrix};

/// Weight of the decoder-norm penalty `Σ (|d_i| - 1)²`.
pub const NORM_PENALTY: f64 = 0.01;
/// Rows kept per feature by [`analyze_features`].
pub const TOP_ACTIVATIONS: usize = 10;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam first and second moments, one flat buffer per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: SaeGrads,
    pub v: SaeGrads,
}

/// Gradients (or any per-parameter buffers), flattened row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SaeGrads {
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_dec: Vec<f64>,
}

impl SaeGrads {
    fn zeros(d: usize, f: usize) -> Self {
        Self {
            w_enc: vec![0.0; d * f],
            b_enc: vec![0.0; f],
            w_dec: vec![0.0; f * d],
            b_dec: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKSae {
    /// `d × F`.
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    /// `F × d`.
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
    pub k: usize,
    pub adam: AdamMoments,
    pub step: u64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeForward {
    pub z: Vec<f64>,
    /// Features kept by TopK with positive pre-activation.
    pub active: Vec<usize>,
    pub f: Vec<f64>,
    pub x_hat: Vec<f64>,
}

impl TopKSae {
    /// Random unit decoder rows, tied encoder (`W_enc = W_decᵀ`), zero
    /// biases.
    pub fn new(d: usize, n_features: usize, k: usize, seed: u64) -> Result<Self> {
        if d == 0 || n_features == 0 || k == 0 || k > n_features {
            return Err(Error::Argument(format!(
                "need d >= 1 and 1 <= k <= F (got d = {d}, F = {n_features}, k = {k})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec = Matrix::zeros(n_features, d);
        for i in 0..n_features {
            let row = w_dec.row_mut(i);
            loop {
                row.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                let n = norm(row);
                if n > 1e-8 {
                    row.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        Self::from_parts(w_dec.transpose(), vec![0.0; n_features], w_dec, vec![0.0; d], k)
    }

    pub fn from_parts(w_enc: Matrix, b_enc: Vec<f64>, w_dec: Matrix, b_dec: Vec<f64>, k: usize) -> Result<Self> {
        let (d, f) = w_enc.shape();
        if w_dec.shape() != (f, d) || b_enc.len() != f || b_dec.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "SAE parts: W_enc {:?}, b_enc {}, W_dec {:?}, b_dec {}",
                w_enc.shape(),
                b_enc.len(),
                w_dec.shape(),
                b_dec.len()
            )));
        }
        if k == 0 || k > f {
            return Err(Error::Argument(format!("k = {k} outside 1..={f}")));
        }
        Ok(Self {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            k,
            adam: AdamMoments {
                m: SaeGrads::zeros(d, f),
                v: SaeGrads::zeros(d, f),
            },
            step: 0,
        })
    }

    /// Set `b_dec` to the column mean of `data`.
    pub fn init_decoder_bias(&mut self, data: &Matrix) -> Result<()> {
        if data.cols() != self.d() || data.rows() == 0 {
            return Err(Error::ShapeMismatch("activations do not match the SAE width".into()));
        }
        let n = data.rows() as f64;
        self.b_dec = (0..self.d()).map(|j| data.column(j).iter().sum::<f64>() / n).collect();
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn n_features(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn feature_direction(&self, i: usize) -> &[f64] {
        self.w_dec.row(i)
    }

    pub fn forward(&self, x: &[f64]) -> SaeForward {
        assert_eq!(x.len(), self.d(), "input length must equal d");
        let centred: Vec<f64> = x.iter().zip(&self.b_dec).map(|(a, b)| a - b).collect();
        let mut z = self.w_enc.vec_mul(&centred);
        z.iter_mut().zip(&self.b_enc).for_each(|(v, b)| *v += b);
        let mut f = vec![0.0; z.len()];
        let mut active = Vec::with_capacity(self.k);
        for i in topk_indices(&z, self.k).expect("1 <= k <= F") {
            if z[i] > 0.0 {
                f[i] = z[i];
                active.push(i);
            }
        }
        let mut x_hat = self.b_dec.clone();
        for &i in &active {
            crate::numerics::axpy(&mut x_hat, f[i], self.w_dec.row(i));
        }
        SaeForward { z, active, f, x_hat }
    }

    /// `Σ (|d_i| - 1)²`.
    fn norm_penalty(&self) -> f64 {
        self.w_dec.iter_rows().map(|r| (norm(r) - 1.0).powi(2)).sum()
    }

    /// Mean squared reconstruction error plus the decoder-norm penalty.
    pub fn loss(&self, batch: &[&[f64]]) -> f64 {
        let recon: f64 = batch
            .iter()
            .map(|x| {
                let fw = self.forward(x);
                fw.x_hat.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        recon / batch.len() as f64 + NORM_PENALTY * self.norm_penalty()
    }

    /// Loss and its analytic gradient. The TopK mask is held fixed, which
    /// is exact away from ties at the k-th pre-activation.
    pub fn gradients(&self, batch: &[&[f64]]) -> (f64, SaeGrads) {
        let (d, nf) = (self.d(), self.n_features());
        let mut g = SaeGrads::zeros(d, nf);
        let scale = 2.0 / batch.len() as f64;
        let mut recon = 0.0;
        for x in batch {
            let fw = self.forward(x);
            let err: Vec<f64> = fw.x_hat.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            recon += dot(&err, &err);
            let gx: Vec<f64> = err.iter().map(|e| scale * e).collect();
            let centred: Vec<f64> = x.iter().zip(&self.b_dec).map(|(a, b)| a - b).collect();
            // Direct path through x̂ = f W_dec + b_dec.
            g.b_dec.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
            let mut d_centred = vec![0.0; d];
            for &i in &fw.active {
                let row = self.w_dec.row(i);
                for (gw, gv) in g.w_dec[i * d..(i + 1) * d].iter_mut().zip(&gx) {
                    *gw += fw.f[i] * gv;
                }
                let dz = dot(row, &gx);
                g.b_enc[i] += dz;
                for j in 0..d {
                    g.w_enc[j * nf + i] += centred[j] * dz;
                    d_centred[j] += self.w_enc[(j, i)] * dz;
                }
            }
            // b_dec also enters through the encoder input x - b_dec.
            g.b_dec.iter_mut().zip(&d_centred).for_each(|(a, b)| *a -= b);
        }
        for i in 0..nf {
            let row = self.w_dec.row(i);
            let n = norm(row);
            if n > 0.0 {
                let c = NORM_PENALTY * 2.0 * (n - 1.0) / n;
                for (gw, w) in g.w_dec[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *gw += c * w;
                }
            }
        }
        (recon / batch.len() as f64 + NORM_PENALTY * self.norm_penalty(), g)
    }

    /// One Adam step at learning rate `lr`, then decoder renormalisation.
    /// Returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[&[f64]], lr: f64) -> Result<f64> {
        let (loss, g) = self.gradients(batch);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("SAE loss {loss} at step {}", self.step)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        };
        let AdamMoments { m, v } = &mut self.adam;
        update(self.w_enc.as_mut_slice(), &g.w_enc, &mut m.w_enc, &mut v.w_enc);
        update(&mut self.b_enc, &g.b_enc, &mut m.b_enc, &mut v.b_enc);
        update(self.w_dec.as_mut_slice(), &g.w_dec, &mut m.w_dec, &mut v.w_dec);
        update(&mut self.b_dec, &g.b_dec, &mut m.b_dec, &mut v.b_dec);
        self.renormalise_decoder();
        Ok(loss)
    }

    pub fn renormalise_decoder(&mut self) {
        for i in 0..self.w_dec.rows() {
            let row = self.w_dec.row_mut(i);
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let (d, f) = (self.d(), self.n_features());
        let mut out = vec![
            Tensor::new("sae.w_enc", vec![d, f], self.w_enc.as_slice().to_vec()),
            Tensor::new("sae.b_enc", vec![f], self.b_enc.clone()),
            Tensor::new("sae.w_dec", vec![f, d], self.w_dec.as_slice().to_vec()),
            Tensor::new("sae.b_dec", vec![d], self.b_dec.clone()),
            Tensor::new("sae.k", vec![1], vec![self.k as f64]),
            Tensor::new("sae.step", vec![1], vec![self.step as f64]),
        ];
        for (tag, buf) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            out.push(Tensor::new(format!("adam.{tag}.w_enc"), vec![d, f], buf.w_enc.clone()));
            out.push(Tensor::new(format!("adam.{tag}.b_enc"), vec![f], buf.b_enc.clone()));
            out.push(Tensor::new(format!("adam.{tag}.w_dec"), vec![f, d], buf.w_dec.clone()));
            out.push(Tensor::new(format!("adam.{tag}.b_dec"), vec![d], buf.b_dec.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        blob::write(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut map = blob::index(blob::read(path)?)?;
        let mut take = |name: &str| {
            map.remove(name)
                .ok_or_else(|| Error::CorruptBlob(format!("missing tensor `{name}`")))
        };
        let w_enc = take("sae.w_enc")?;
        if w_enc.dims.len() != 2 {
            return Err(Error::CorruptBlob("sae.w_enc must be rank 2".into()));
        }
        let (d, f) = (w_enc.dims[0], w_enc.dims[1]);
        let w_dec = take("sae.w_dec")?;
        let mut sae = Self::from_parts(
            Matrix::from_vec(d, f, w_enc.data)?,
            take("sae.b_enc")?.data,
            Matrix::from_vec(f, d, w_dec.data)?,
            take("sae.b_dec")?.data,
            take("sae.k")?.data[0] as usize,
        )?;
        sae.step = take("sae.step")?.data[0] as u64;
        let mut moments = |tag: &str| -> Result<SaeGrads> {
            Ok(SaeGrads {
                w_enc: take(&format!("adam.{tag}.w_enc"))?.data,
                b_enc: take(&format!("adam.{tag}.b_enc"))?.data,
                w_dec: take(&format!("adam.{tag}.w_dec"))?.data,
                b_dec: take(&format!("adam.{tag}.b_dec"))?.data,
            })
        };
        let m = moments("m")?;
        let v = moments("v")?;
        let zeros = SaeGrads::zeros(d, f);
        for (a, b) in [(&m, &zeros), (&v, &zeros)] {
            if a.w_enc.len() != b.w_enc.len()
                || a.b_enc.len() != b.b_enc.len()
                || a.w_dec.len() != b.w_dec.len()
                || a.b_dec.len() != b.b_dec.len()
            {
                return Err(Error::ShapeMismatch("optimizer moments do not match the SAE".into()));
            }
        }
        sae.adam = AdamMoments { m, v };
        Ok(sae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// Cosine-annealed learning rate `½ lr₀ (1 + cos(π t / T))`.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

/// Minibatch Adam over the rows of `data`. Returns the per-step loss.
pub fn train(sae: &mut TopKSae, data: &Matrix, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.cols() != sae.d() {
        return Err(Error::ShapeMismatch(format!(
            "activations of width {} for an SAE with d = {}",
            data.cols(),
            sae.d()
        )));
    }
    if data.rows() == 0 {
        return Err(Error::Argument("no activations to train on".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let n = data.rows();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(total);
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data.row(i)).collect();
            trace.push(sae.train_step(&batch, cosine_lr(cfg.lr, t, total))?);
            t += 1;
        }
    }
    Ok(trace)
}

/// Stack shard rows into one matrix.
pub fn stack_shards(shards: &[ActivationShard]) -> Result<Matrix> {
    let d = shards
        .first()
        .ok_or_else(|| Error::Argument("no activation shards".into()))?
        .d();
    let mut data = Vec::new();
    for s in shards {
        if s.d() != d {
            return Err(Error::ShapeMismatch(format!("shards of width {d} and {}", s.d())));
        }
        data.extend_from_slice(s.rows.as_slice());
    }
    Matrix::from_vec(data.len() / d, d, data)
}

/// Final-token `residual[layer]` for each corpus item, written as shards of
/// at most `rows_per_shard` rows. Returns the shard paths.
pub fn collect_activations(
    bundle: &RewardModelBundle,
    corpus: &[(String, String)],
    layer: isize,
    dir: &Path,
    rows_per_shard: usize,
) -> Result<Vec<PathBuf>> {
    let n_layers = bundle.n_layers() as isize;
    if layer < -1 || layer >= n_layers {
        return Err(Error::Argument(format!("layer {layer} outside -1..{}", n_layers - 1)));
    }
    if rows_per_shard == 0 {
        return Err(Error::Argument("rows per shard must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (i, chunk) in corpus.chunks(rows_per_shard).enumerate() {
        use rayon::prelude::*;
        let rows = chunk
            .par_iter()
            .map(|(p, r)| {
                bundle
                    .forward_with_cache(p, r, false)
                    .map(|(_, c)| c.residual(layer).to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let shard = ActivationShard {
            layer,
            rows: Matrix::from_rows(&rows)?,
        };
        let path = shard_path(dir, i);
        write_shard(&path, &shard)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub index: usize,
    /// `w_rᵀ d_i`.
    pub reward_alignment: f64,
    pub mean_activation: f64,
    pub activation_frequency: f64,
    pub top_activating_indices: Vec<usize>,
    pub top_activating_values: Vec<f64>,
}

/// Reward alignment and activation statistics of every feature over the
/// rows of `data`.
pub fn analyze_features(sae: &TopKSae, data: &Matrix, w_r: &[f64]) -> Result<Vec<FeatureInfo>> {
    if data.rows() == 0 {
        return Err(Error::Argument("no activations to analyse".into()));
    }
    if data.cols() != sae.d() || w_r.len() != sae.d() {
        return Err(Error::ShapeMismatch("activations or w_r do not match the SAE width".into()));
    }
    let nf = sae.n_features();
    let mut sums = vec![0.0; nf];
    let mut counts = vec![0usize; nf];
    let mut tops: Vec<Vec<(f64, usize)>> = vec![Vec::new(); nf];
    for (row_idx, x) in data.iter_rows().enumerate() {
        let fw = sae.forward(x);
        for &i in &fw.active {
            sums[i] += fw.f[i];
            counts[i] += 1;
            let top = &mut tops[i];
            top.push((fw.f[i], row_idx));
            if top.len() > 4 * TOP_ACTIVATIONS {
                sort_top(top);
                top.truncate(TOP_ACTIVATIONS);
            }
        }
    }
    let n = data.rows() as f64;
    Ok((0..nf)
        .map(|i| {
            let top = &mut tops[i];
            sort_top(top);
            top.truncate(TOP_ACTIVATIONS);
            FeatureInfo {
                index: i,
                reward_alignment: dot(w_r, sae.feature_direction(i)),
                mean_activation: sums[i] / n,
                activation_frequency: counts[i] as f64 / n,
                top_activating_indices: top.iter().map(|t| t.1).collect(),
                top_activating_values: top.iter().map(|t| t.0).collect(),
            }
        })
        .collect())
}

fn sort_top(top: &mut [(f64, usize)]) {
    top.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
}

/// Features sorted by `|reward_alignment|`, largest first.
pub fn top_reward_features(features: &[FeatureInfo], k: usize) -> Vec<FeatureInfo> {
    let mut v = features.to_vec();
    v.sort_by(|a, b| {
        b.reward_alignment
            .abs()
            .total_cmp(&a.reward_alignment.abs())
            .then(a.index.cmp(&b.index))
    });
    v.truncate(k);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTerm {
    pub index: usize,
    pub activation: f64,
    pub reward_alignment: f64,
    /// `f_i · w_rᵀ d_i`.
    pub term: f64,
}

/// Split of `w_rᵀ x + b_r` into active-feature terms, the decoder bias,
/// the head bias and the reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDecomposition {
    pub feature_terms: Vec<FeatureTerm>,
    /// `w_rᵀ b_dec`.
    pub decoder_bias_term: f64,
    pub reward_bias: f64,
    /// `w_rᵀ (x - x̂)`.
    pub reconstruction_error_term: f64,
    /// `w_rᵀ x + b_r`.
    pub reward: f64,
}

impl RewardDecomposition {
    /// Sum of every term; equals `reward` up to rounding.
    pub fn total(&self) -> f64 {
        self.feature_terms.iter().map(|t| t.term).sum::<f64>()
            + self.decoder_bias_term
            + self.reward_bias
            + self.reconstruction_error_term
    }
}

pub fn decompose_reward_for_input(sae: &TopKSae, x: &[f64], w_r: &[f64], b_r: f64) -> Result<RewardDecomposition> {
    if x.len() != sae.d() || w_r.len() != sae.d() {
        return Err(Error::ShapeMismatch("input or w_r do not match the SAE width".into()));
    }
    let fw = sae.forward(x);
    let feature_terms = fw
        .active
        .iter()
        .map(|&i| {
            let a = dot(w_r, sae.feature_direction(i));
            FeatureTerm {
                index: i,
                activation: fw.f[i],
                reward_alignment: a,
                term: fw.f[i] * a,
            }
        })
        .collect();
    let err: Vec<f64> = x.iter().zip(&fw.x_hat).map(|(a, b)| a - b).collect();
    Ok(RewardDecomposition {
        feature_terms,
        decoder_bias_term: dot(w_r, &sae.b_dec),
        reward_bias: b_r,
        reconstruction_error_term: dot(w_r, &err),
        reward: dot(w_r, x) + b_r,
    })
}
