// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

pub mod sae_fixtures;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reward_lens::engine::{
    build_planted_model, build_seeded_model, PlantSpec, PlantedModel, PreferencePair, RewardModelBundle,
    TransformerConfig,
};

pub fn seeded(n_layers: usize, seed: u64) -> RewardModelBundle {
    build_seeded_model(&TransformerConfig::new(n_layers, 32, 4, 64), seed).unwrap()
}

/// Word tokens of a model (the two specials are skipped).
pub fn words(bundle: &RewardModelBundle) -> Vec<String> {
    bundle.tokenizer().tokens()[2..].to_vec()
}

fn sentence(rng: &mut ChaCha8Rng, words: &[String], lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| words[rng.gen_range(0..words.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_pairs(bundle: &RewardModelBundle, n: usize, seed: u64) -> Vec<PreferencePair> {
    let w = words(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = sentence(&mut rng, &w, 1, 4);
            let a = sentence(&mut rng, &w, 1, 6);
            let b = sentence(&mut rng, &w, 1, 6);
            PreferencePair::new(&p, &a, &b)
        })
        .collect()
}

pub const PLANT_LAYERS: usize = 3;
pub const PLANT_TRIGGER: u32 = 5;

pub fn planted_with(n_layers: usize, layer: usize, gain: f64) -> PlantedModel {
    let cfg = TransformerConfig::new(n_layers, 32, 4, 24);
    build_planted_model(&cfg, PlantSpec::mlp(layer, PLANT_TRIGGER, gain)).unwrap()
}

pub fn planted() -> PlantedModel {
    planted_with(PLANT_LAYERS, 1, 2.0)
}

pub fn word(bundle: &RewardModelBundle, id: u32) -> String {
    bundle.tokenizer().token(id).unwrap().to_string()
}

/// Pair whose preferred completion ends on the trigger and whose
/// dispreferred one ends on another word, same length.
pub fn trigger_pair(m: &PlantedModel) -> PreferencePair {
    let b = &m.bundle;
    let t = word(b, m.spec.trigger_token);
    let other = word(b, m.spec.trigger_token + 1);
    let x = word(b, 2);
    let y = word(b, 3);
    PreferencePair::new(&x, &format!("{y} {t}"), &format!("{y} {other}"))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}
