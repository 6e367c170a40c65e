// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::sae_fixtures::{gaussian, random_sae, recovered_fraction, synthetic_dictionary, worst_gradient_error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reward_lens::numerics::{dot, norm, Matrix};
use reward_lens::sae::{analyze_features, decompose_reward_for_input, train, TopKSae, TrainConfig};

#[test]
fn recovers_planted_dictionary() {
    let (dict, data) = synthetic_dictionary(32, 48, 3, 8192, 5);
    let mut sae = TopKSae::new(32, 64, 3, 11).unwrap();
    sae.init_decoder_bias(&data).unwrap();
    let cfg = TrainConfig { epochs: 60, lr: 2e-3, batch_size: 256, seed: 0 };
    let trace = train(&mut sae, &data, &cfg).unwrap();
    assert!(trace.last().unwrap() < &trace[0]);
    let frac = recovered_fraction(&sae, &dict);
    assert!(frac >= 0.9, "recovered {frac}");
}

#[test]
fn single_sample_is_fit_exactly() {
    let x = Matrix::from_rows(&[vec![0.4, -1.2, 0.7, 2.0, 0.1]]).unwrap();
    let mut sae = TopKSae::new(5, 1, 1, 2).unwrap();
    let cfg = TrainConfig { epochs: 3000, lr: 1e-2, batch_size: 256, seed: 0 };
    let trace = train(&mut sae, &x, &cfg).unwrap();
    let final_loss = sae.loss(&[x.row(0)]);
    assert!(final_loss < 1e-4, "loss {final_loss} (first {})", trace[0]);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let sae = random_sae(5, 6, 2, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut rng, 5, 1.0)).collect();
    let worst = worst_gradient_error(&sae, &rows, 1e-6);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn decomposition_identity_holds_for_random_states() {
    for seed in 0..100u64 {
        let sae = random_sae(8, 12, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = gaussian(&mut rng, 8, 1.0);
        let w = gaussian(&mut rng, 8, 1.0);
        let dec = decompose_reward_for_input(&sae, &x, &w, 0.25).unwrap();
        assert!((dec.total() - (dot(&w, &x) + 0.25)).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn perfect_reconstruction_has_no_error_term() {
    let w_dec = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let sae = TopKSae::from_parts(w_dec.transpose(), vec![0.0; 2], w_dec, vec![0.5, 0.5], 2).unwrap();
    let x = [1.5, 2.5];
    let w = [2.0, -1.0];
    let dec = decompose_reward_for_input(&sae, &x, &w, 0.1).unwrap();
    assert_eq!(dec.reconstruction_error_term, 0.0);
    let terms: f64 = dec.feature_terms.iter().map(|t| t.term).sum();
    assert!((terms + dec.decoder_bias_term + 0.1 - (dot(&w, &x) + 0.1)).abs() < 1e-12);
}

#[test]
fn inactive_input_is_bias_plus_error() {
    let mut sae = random_sae(4, 5, 2, 3);
    sae.b_enc = vec![-100.0; 5];
    let x = [0.3, 0.1, -0.2, 0.9];
    let w = [1.0, 2.0, 3.0, 4.0];
    let dec = decompose_reward_for_input(&sae, &x, &w, 0.0).unwrap();
    assert!(dec.feature_terms.is_empty());
    let expect = dec.decoder_bias_term + dec.reconstruction_error_term;
    assert!((expect - dot(&w, &x)).abs() < 1e-12);
}

#[test]
fn feature_aligned_with_reward_direction_has_max_alignment() {
    let mut sae = random_sae(6, 5, 2, 4);
    sae.renormalise_decoder();
    let w = [0.5, -1.0, 2.0, 0.0, 1.0, -0.5];
    let wn = norm(&w);
    sae.w_dec.row_mut(3).iter_mut().zip(&w).for_each(|(d, v)| *d = v / wn);
    let data = Matrix::from_rows(&[vec![0.1; 6], vec![-0.3; 6]]).unwrap();
    let feats = analyze_features(&sae, &data, &w).unwrap();
    let best = feats
        .iter()
        .max_by(|a, b| a.reward_alignment.total_cmp(&b.reward_alignment))
        .unwrap();
    assert_eq!(best.index, 3);
    assert!((best.reward_alignment - wn).abs() < 1e-12);
}

#[test]
fn never_active_feature_reports_zero() {
    let mut sae = random_sae(4, 5, 2, 5);
    sae.b_enc[2] = -1e6;
    let data = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 0.0]]).unwrap();
    let feats = analyze_features(&sae, &data, &[1.0; 4]).unwrap();
    assert_eq!(feats[2].activation_frequency, 0.0);
    assert!(feats[2].top_activating_indices.is_empty());
}

#[test]
fn frequencies_match_a_second_pass() {
    let sae = random_sae(6, 10, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| gaussian(&mut rng, 6, 1.0)).collect();
    let data = Matrix::from_rows(&rows).unwrap();
    let feats = analyze_features(&sae, &data, &[0.0; 6]).unwrap();
    for (i, f) in feats.iter().enumerate() {
        let count = rows.iter().filter(|x| sae.forward(x).f[i] > 0.0).count();
        assert_eq!(f.activation_frequency, count as f64 / 200.0);
        let vals = &f.top_activating_values;
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        assert!(vals.len() <= 10);
    }
}

proptest! {
    #[test]
    fn at_most_k_features_fire(seed in 0u64..500, k in 1usize..6) {
        let sae = random_sae(5, 6, k, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let x = gaussian(&mut rng, 5, 2.0);
        let fw = sae.forward(&x);
        prop_assert!(fw.f.iter().filter(|&&v| v != 0.0).count() <= k);
        prop_assert!(fw.f.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn training_is_bitwise_reproducible(seed in 0u64..20) {
        let (_, data) = synthetic_dictionary(6, 8, 2, 64, seed);
        let cfg = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 16, seed };
        let mut a = TopKSae::new(6, 8, 2, seed).unwrap();
        let mut b = a.clone();
        let ta = train(&mut a, &data, &cfg).unwrap();
        let tb = train(&mut b, &data, &cfg).unwrap();
        prop_assert_eq!(ta, tb);
        prop_assert_eq!(a, b);
    }
}
