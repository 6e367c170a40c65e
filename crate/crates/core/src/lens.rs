// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reward Lens: the residual stream after every block, projected onto
//! `w_r` without the final layer norm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ActivationCache, PreferencePair, RewardModelBundle};
use crate::error::Result;

/// Final differentials smaller than this are treated as zero.
pub const EPSILON_0: f64 = 1e-6;

/// Lens trajectories for one pair (or one completion).
///
/// Every per-layer vector has `L + 1` entries, aligned with `layers`
/// (`-1` is the embedding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLensResult {
    pub layers: Vec<isize>,
    pub lens_preferred: Vec<f64>,
    /// Empty for a single-trajectory trace.
    pub lens_dispreferred: Vec<f64>,
    /// Empty for a single-trajectory trace.
    pub differential: Vec<f64>,
    /// `differential[ℓ] - differential[ℓ-1]` for `ℓ = 0..L-1`.
    pub marginal_contributions: Vec<f64>,
    pub reward_preferred: f64,
    pub reward_dispreferred: Option<f64>,
    pub crystallisation_layer: Option<isize>,
    /// `(ℓ + 1) / (L + 1)` of the crystallisation layer.
    pub crystallisation_depth: Option<f64>,
}

impl RewardLensResult {
    pub fn n_layers(&self) -> usize {
        self.layers.len() - 1
    }
}

fn lens_values(bundle: &RewardModelBundle, cache: &ActivationCache) -> Result<Vec<f64>> {
    (-1..cache.n_layers() as isize)
        .map(|l| bundle.project_onto_reward(cache.residual(l)))
        .collect()
}

fn layer_axis(n_layers: usize) -> Vec<isize> {
    (-1..n_layers as isize).collect()
}

/// Lens trajectories of both completions, their differential and the
/// crystallisation point.
pub fn trace(bundle: &RewardModelBundle, pair: &PreferencePair) -> Result<RewardLensResult> {
    let (r_pref, c_pref) = bundle.forward_with_cache(&pair.prompt, &pair.preferred, false)?;
    let (r_disp, c_disp) = bundle.forward_with_cache(&pair.prompt, &pair.dispreferred, false)?;
    let lens_preferred = lens_values(bundle, &c_pref)?;
    let lens_dispreferred = lens_values(bundle, &c_disp)?;
    let differential: Vec<f64> = lens_preferred
        .iter()
        .zip(&lens_dispreferred)
        .map(|(a, b)| a - b)
        .collect();
    let marginal_contributions = differential.windows(2).map(|w| w[1] - w[0]).collect();
    let crystallisation_layer = crystallisation_layer(&differential);
    let n_layers = bundle.n_layers();
    Ok(RewardLensResult {
        layers: layer_axis(n_layers),
        lens_preferred,
        lens_dispreferred,
        differential,
        marginal_contributions,
        reward_preferred: r_pref,
        reward_dispreferred: Some(r_disp),
        crystallisation_layer,
        crystallisation_depth: crystallisation_layer.map(|l| depth(l, n_layers)),
    })
}

/// Lens trajectory of a single completion.
pub fn trace_single(
    bundle: &RewardModelBundle,
    prompt: &str,
    response: &str,
) -> Result<RewardLensResult> {
    let (reward, cache) = bundle.forward_with_cache(prompt, response, false)?;
    Ok(RewardLensResult {
        layers: layer_axis(bundle.n_layers()),
        lens_preferred: lens_values(bundle, &cache)?,
        lens_dispreferred: Vec::new(),
        differential: Vec::new(),
        marginal_contributions: Vec::new(),
        reward_preferred: reward,
        reward_dispreferred: None,
        crystallisation_layer: None,
        crystallisation_depth: None,
    })
}

/// [`trace`] over many pairs in parallel; output order follows input order.
pub fn trace_many(bundle: &RewardModelBundle, pairs: &[PreferencePair]) -> Result<Vec<RewardLensResult>> {
    pairs.par_iter().map(|p| trace(bundle, p)).collect()
}

/// Fractional depth of block `layer` in an `n_layers` model.
pub fn depth(layer: isize, n_layers: usize) -> f64 {
    (layer + 1) as f64 / (n_layers + 1) as f64
}

/// First block `ℓ >= 0` whose differential has the final sign and at least
/// half the final magnitude. `differential[0]` is the embedding entry and
/// is not a candidate. `None` when the final differential is below
/// [`EPSILON_0`].
pub fn crystallisation_layer(differential: &[f64]) -> Option<isize> {
    let last = *differential.last()?;
    if last.abs() < EPSILON_0 {
        return None;
    }
    differential
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, &v)| v.signum() == last.signum() && v.abs() >= 0.5 * last.abs())
        .map(|(i, _)| i as isize - 1)
}

/// Crystallisation depth of a computed result.
pub fn crystallisation_depth(result: &RewardLensResult) -> Option<f64> {
    crystallisation_layer(&result.differential).map(|l| depth(l, result.n_layers()))
}
