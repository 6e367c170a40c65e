// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reward_lens::numerics::{cosine, norm, Matrix};
use reward_lens::sae::TopKSae;

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d, 1.0);
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Rows `x = Σ c_j g_j + b` over `k` distinct atoms of a random unit
/// dictionary, `c_j ~ U(0.5, 1.5)`.
pub fn synthetic_dictionary(d: usize, n_true: usize, k: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict: Vec<Vec<f64>> = (0..n_true).map(|_| unit(&mut rng, d)).collect();
    let bias = gaussian(&mut rng, d, 0.1);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = bias.clone();
        for j in rand::seq::index::sample(&mut rng, n_true, k).iter() {
            let c: f64 = rng.gen_range(0.5..1.5);
            x.iter_mut().zip(&dict[j]).for_each(|(xi, gi)| *xi += c * gi);
        }
        rows.push(x);
    }
    (dict, Matrix::from_rows(&rows).unwrap())
}

/// Greedy: each true atom counts once if some decoder row has |cos| > 0.9.
pub fn recovered_fraction(sae: &TopKSae, dict: &[Vec<f64>]) -> f64 {
    let mut used = vec![false; sae.n_features()];
    let mut hits = 0;
    for g in dict {
        let best = (0..sae.n_features())
            .filter(|&i| !used[i])
            .map(|i| (i, cosine(g, sae.feature_direction(i)).unwrap().abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, c)) = best {
            if c > 0.9 {
                used[i] = true;
                hits += 1;
            }
        }
    }
    hits as f64 / dict.len() as f64
}

pub fn random_sae(d: usize, f: usize, k: usize, seed: u64) -> TopKSae {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_enc = Matrix::from_vec(d, f, gaussian(&mut rng, d * f, 0.5)).unwrap();
    let w_dec = Matrix::from_vec(f, d, gaussian(&mut rng, f * d, 0.5)).unwrap();
    let b_enc = gaussian(&mut rng, f, 0.1);
    let b_dec = gaussian(&mut rng, d, 0.3);
    TopKSae::from_parts(w_enc, b_enc, w_dec, b_dec, k).unwrap()
}

/// Worst relative gap between analytic gradients and central differences
/// with step `h`, over every parameter.
pub fn worst_gradient_error(sae: &TopKSae, rows: &[Vec<f64>], h: f64) -> f64 {
    let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let (_, g) = sae.gradients(&batch);
    let mut worst: f64 = 0.0;
    let mut check = |analytic: &[f64], perturb: &dyn Fn(&mut TopKSae, usize, f64)| {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = sae.clone();
            perturb(&mut plus, i, h);
            let mut minus = sae.clone();
            perturb(&mut minus, i, -h);
            let numeric = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    };
    check(&g.w_enc, &|s, i, e| s.w_enc.as_mut_slice()[i] += e);
    check(&g.b_enc, &|s, i, e| s.b_enc[i] += e);
    check(&g.w_dec, &|s, i, e| s.w_dec.as_mut_slice()[i] += e);
    check(&g.b_dec, &|s, i, e| s.b_dec[i] += e);
    worst
}
