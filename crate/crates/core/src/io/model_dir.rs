// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model directory: `config.txt` (key = value lines, including the
//! vocabulary) plus `tensors.bin` in the tensor blob format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::{
    Attention, Block, FinalNorm, HeadKind, Mlp, Norm, RewardModelBundle, Tokenizer,
    TransformerConfig,
};
use crate::error::{Error, Result};
use crate::io::blob::{self, Tensor};
use crate::numerics::Matrix;

pub const CONFIG_FILE: &str = "config.txt";
pub const TENSORS_FILE: &str = "tensors.bin";
const FORMAT_TAG: &str = "reward-lens-model/1";

pub fn config_text(bundle: &RewardModelBundle) -> String {
    let c = bundle.config();
    let mut s = String::new();
    let _ = writeln!(s, "format = {FORMAT_TAG}");
    let _ = writeln!(s, "n_layers = {}", c.n_layers);
    let _ = writeln!(s, "d_model = {}", c.d_model);
    let _ = writeln!(s, "n_heads = {}", c.n_heads);
    let _ = writeln!(s, "d_head = {}", c.d_head);
    let _ = writeln!(s, "d_mlp = {}", c.d_mlp);
    let _ = writeln!(s, "vocab_size = {}", c.vocab_size);
    let _ = writeln!(s, "max_seq = {}", c.max_seq);
    let _ = writeln!(s, "head_kind = {}", c.head_kind);
    let _ = writeln!(s, "final_norm = {}", c.final_norm);
    let _ = writeln!(s, "norm_eps = {:e}", c.norm_eps);
    let _ = writeln!(s, "rope_base = {}", c.rope_base);
    let _ = writeln!(s, "vocab = {}", bundle.tokenizer().tokens().join(" "));
    s
}

fn parse_config(text: &str) -> Result<(TransformerConfig, Tokenizer)> {
    let mut kv: HashMap<&str, &str> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line {}: expected `key = value`", lineno + 1)))?;
        if kv.insert(k.trim(), v.trim()).is_some() {
            return Err(Error::Format(format!("config key `{}` repeated", k.trim())));
        }
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Format(format!("config is missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("config `{k}` is not an integer")))
    };
    let real = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("config `{k}` is not a number")))
    };
    if get("format")? != FORMAT_TAG {
        return Err(Error::Format(format!("unsupported model format `{}`", get("format")?)));
    }
    let known = [
        "format", "n_layers", "d_model", "n_heads", "d_head", "d_mlp", "vocab_size", "max_seq",
        "head_kind", "final_norm", "norm_eps", "rope_base", "vocab",
    ];
    if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
        return Err(Error::Format(format!("unknown config key `{k}`")));
    }
    let config = TransformerConfig {
        n_layers: num("n_layers")?,
        d_model: num("d_model")?,
        n_heads: num("n_heads")?,
        d_head: num("d_head")?,
        d_mlp: num("d_mlp")?,
        vocab_size: num("vocab_size")?,
        max_seq: num("max_seq")?,
        head_kind: get("head_kind")?.parse::<HeadKind>()?,
        final_norm: get("final_norm")?.parse::<FinalNorm>()?,
        norm_eps: real("norm_eps")?,
        rope_base: real("rope_base")?,
    };
    config.validate()?;
    let tokenizer = Tokenizer::new(get("vocab")?.split_whitespace().map(String::from).collect())?;
    Ok((config, tokenizer))
}

/// Tensors in canonical order.
pub fn to_tensors(bundle: &RewardModelBundle) -> Vec<Tensor> {
    let mut out = Vec::new();
    let mat = |name: String, m: &Matrix| Tensor::new(name, vec![m.rows(), m.cols()], m.as_slice().to_vec());
    let vec1 = |name: String, v: &[f64]| Tensor::new(name, vec![v.len()], v.to_vec());
    out.push(mat("embed.weight".into(), bundle.embedding()));
    for (i, b) in bundle.blocks().iter().enumerate() {
        out.push(vec1(format!("blocks.{i}.ln1.gain"), &b.ln1.gain));
        out.push(vec1(format!("blocks.{i}.ln1.bias"), &b.ln1.bias));
        out.push(mat(format!("blocks.{i}.attn.wq"), &b.attn.wq));
        out.push(mat(format!("blocks.{i}.attn.wk"), &b.attn.wk));
        out.push(mat(format!("blocks.{i}.attn.wv"), &b.attn.wv));
        out.push(mat(format!("blocks.{i}.attn.wo"), &b.attn.wo));
        out.push(vec1(format!("blocks.{i}.ln2.gain"), &b.ln2.gain));
        out.push(vec1(format!("blocks.{i}.ln2.bias"), &b.ln2.bias));
        out.push(mat(format!("blocks.{i}.mlp.w_in"), &b.mlp.w_in));
        out.push(vec1(format!("blocks.{i}.mlp.b_in"), &b.mlp.b_in));
        out.push(mat(format!("blocks.{i}.mlp.w_out"), &b.mlp.w_out));
        out.push(vec1(format!("blocks.{i}.mlp.b_out"), &b.mlp.b_out));
    }
    if let Some(n) = bundle.final_norm() {
        out.push(vec1("final_norm.gain".into(), &n.gain));
        out.push(vec1("final_norm.bias".into(), &n.bias));
    }
    out.push(mat("head.weight".into(), bundle.head_weight()));
    out.push(vec1("head.bias".into(), bundle.head_bias()));
    out
}

pub fn save_model(bundle: &RewardModelBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    super::atomic_write(&dir.join(CONFIG_FILE), config_text(bundle).as_bytes())?;
    blob::write(&dir.join(TENSORS_FILE), &to_tensors(bundle))
}

pub fn load_model(dir: &Path) -> Result<RewardModelBundle> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let (config, tokenizer) = parse_config(&text)?;
    let tensors = blob::index(blob::read(&dir.join(TENSORS_FILE))?)?;
    from_tensors(config, tokenizer, tensors)
}

fn from_tensors(
    config: TransformerConfig,
    tokenizer: Tokenizer,
    mut tensors: HashMap<String, Tensor>,
) -> Result<RewardModelBundle> {
    let mut take = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::CorruptBlob(format!("missing tensor `{name}`")))?;
        if t.dims != dims {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` has dims {:?}, expected {dims:?}",
                t.dims
            )));
        }
        Ok(t.data)
    };
    let d = config.d_model;
    let dm = config.d_mlp;
    let mat = |rows: usize, cols: usize, data: Vec<f64>| Matrix::from_vec(rows, cols, data);

    let embed = mat(config.vocab_size, d, take("embed.weight", &[config.vocab_size, d])?)?;
    let mut blocks = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let ln1 = Norm {
            gain: take(&format!("blocks.{i}.ln1.gain"), &[d])?,
            bias: take(&format!("blocks.{i}.ln1.bias"), &[d])?,
        };
        let attn = Attention {
            wq: mat(d, d, take(&format!("blocks.{i}.attn.wq"), &[d, d])?)?,
            wk: mat(d, d, take(&format!("blocks.{i}.attn.wk"), &[d, d])?)?,
            wv: mat(d, d, take(&format!("blocks.{i}.attn.wv"), &[d, d])?)?,
            wo: mat(d, d, take(&format!("blocks.{i}.attn.wo"), &[d, d])?)?,
        };
        let ln2 = Norm {
            gain: take(&format!("blocks.{i}.ln2.gain"), &[d])?,
            bias: take(&format!("blocks.{i}.ln2.bias"), &[d])?,
        };
        let mlp = Mlp {
            w_in: mat(d, dm, take(&format!("blocks.{i}.mlp.w_in"), &[d, dm])?)?,
            b_in: take(&format!("blocks.{i}.mlp.b_in"), &[dm])?,
            w_out: mat(dm, d, take(&format!("blocks.{i}.mlp.w_out"), &[dm, d])?)?,
            b_out: take(&format!("blocks.{i}.mlp.b_out"), &[d])?,
        };
        blocks.push(Block { ln1, attn, ln2, mlp });
    }
    let final_norm = match config.final_norm {
        FinalNorm::LayerNorm => Some(Norm {
            gain: take("final_norm.gain", &[d])?,
            bias: take("final_norm.bias", &[d])?,
        }),
        FinalNorm::Identity => None,
    };
    let k = config.head_kind.rows();
    let head_weight = mat(k, d, take("head.weight", &[k, d])?)?;
    let head_bias = take("head.bias", &[k])?;
    if let Some(extra) = tensors.keys().min() {
        return Err(Error::CorruptBlob(format!("unexpected tensor `{extra}`")));
    }
    RewardModelBundle::from_parts(config, tokenizer, embed, blocks, final_norm, head_weight, head_bias)
}

/// SHA-256 over the config text and tensor bytes, hex encoded.
pub fn fingerprint(bundle: &RewardModelBundle) -> String {
    let mut h = Sha256::new();
    h.update(config_text(bundle).as_bytes());
    h.update(blob::encode(&to_tensors(bundle)));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
