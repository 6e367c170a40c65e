// SPDX-License-Identifier: MIT OR Apache-2.0

//! Divergence-aware patching: how far off the clean activation
//! distribution each patch lands, and whether that matters.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::component_name;
use crate::engine::{PreferencePair, RewardModelBundle, Sublayer};
use crate::error::{Error, Result};
use crate::io::blob::{self, Tensor};
use crate::lens::EPSILON_0;
use crate::numerics::{mahalanobis, GaussianEstimate, Matrix};
use crate::patching::{empty_result, sublayer_components, PatchMode, PatchingResult, PreparedPatch, SpliceRule};

pub const DEFAULT_THRESHOLD: f64 = 2.0;
/// Patches whose effect is below this fraction of the original
/// differential are harmless.
pub const HARMLESS_FRACTION: f64 = 0.1;
pub const RELIABILITY_FLOOR: f64 = 0.7;

/// Per-sublayer Gaussian over clean final-token outputs.
#[derive(Debug, Clone)]
pub struct DistributionEstimator {
    /// `2L` estimates in schema order (`attn_L0, mlp_L0, ...`).
    pub estimates: Vec<GaussianEstimate>,
}

/// Smallest corpus accepted for a `d`-dimensional fit.
pub fn min_corpus_size(d: usize) -> usize {
    (d / 4).max(2)
}

impl DistributionEstimator {
    pub fn n_layers(&self) -> usize {
        self.estimates.len() / 2
    }

    pub fn get(&self, layer: usize, sublayer: Sublayer) -> &GaussianEstimate {
        &self.estimates[2 * layer + usize::from(sublayer == Sublayer::Mlp)]
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for ((l, s), g) in sublayer_components(self.n_layers()).into_iter().zip(&self.estimates) {
            let name = component_name(l, s);
            let d = g.dim();
            out.push(Tensor::new(format!("{name}.mean"), vec![d], g.mean.clone()));
            out.push(Tensor::new(
                format!("{name}.covariance"),
                vec![d, d],
                g.covariance.as_slice().to_vec(),
            ));
            out.push(Tensor::new(format!("{name}.regularisation"), vec![1], vec![g.regularisation]));
            out.push(Tensor::new(format!("{name}.sample_count"), vec![1], vec![g.sample_count as f64]));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        blob::write(path, &self.to_tensors())
    }

    /// Inverse of [`save`](Self::save). Values pass through `f32`, so the
    /// reloaded estimate is close to, not identical with, the original.
    pub fn load(path: &Path) -> Result<Self> {
        let mut map = blob::index(blob::read(path)?)?;
        let mut estimates = Vec::new();
        for l in 0.. {
            let mut found = false;
            for s in [Sublayer::Attn, Sublayer::Mlp] {
                let name = component_name(l, s);
                let Some(mean) = map.remove(&format!("{name}.mean")) else {
                    continue;
                };
                found = true;
                let mut take = |suffix: &str| {
                    map.remove(&format!("{name}.{suffix}"))
                        .ok_or_else(|| Error::CorruptBlob(format!("missing `{name}.{suffix}`")))
                };
                let d = mean.data.len();
                let cov = take("covariance")?;
                let reg = take("regularisation")?;
                let count = take("sample_count")?;
                estimates.push(GaussianEstimate::new(
                    mean.data,
                    Matrix::from_vec(d, d, cov.data)?,
                    reg.data[0],
                    count.data[0] as usize,
                )?);
            }
            if !found {
                break;
            }
        }
        if estimates.is_empty() || estimates.len() % 2 != 0 {
            return Err(Error::CorruptBlob("incomplete estimator".into()));
        }
        if let Some(extra) = map.keys().min() {
            return Err(Error::CorruptBlob(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self { estimates })
    }
}

/// Fit one Gaussian per sublayer from clean forwards over `corpus`
/// (`(prompt, response)` items).
pub fn fit_distribution(
    bundle: &RewardModelBundle,
    corpus: &[(String, String)],
) -> Result<DistributionEstimator> {
    let need = min_corpus_size(bundle.d_model());
    if corpus.len() < need {
        return Err(Error::CorpusTooSmall {
            got: corpus.len(),
            need,
        });
    }
    let caches = corpus
        .par_iter()
        .map(|(p, r)| bundle.forward_with_cache(p, r, false).map(|(_, c)| c))
        .collect::<Result<Vec<_>>>()?;
    let estimates = sublayer_components(bundle.n_layers())
        .into_iter()
        .map(|(l, s)| {
            let rows: Vec<Vec<f64>> = caches.iter().map(|c| c.sublayer_out(l, s).to_vec()).collect();
            GaussianEstimate::fit(&Matrix::from_rows(&rows)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistributionEstimator { estimates })
}

/// Both completions of every pair, as a fitting corpus.
pub fn corpus_from_pairs(pairs: &[PreferencePair]) -> Vec<(String, String)> {
    pairs
        .iter()
        .flat_map(|p| {
            [
                (p.prompt.clone(), p.preferred.clone()),
                (p.prompt.clone(), p.dispreferred.clone()),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceType {
    Harmless,
    Pernicious,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub component: String,
    /// Mahalanobis distance of the patched final-token output.
    pub divergence_score: f64,
    pub is_divergent: bool,
    pub divergence_type: DivergenceType,
    /// Heuristic: `min(1, score / 2·threshold)` when divergent,
    /// `1 - score / threshold` otherwise.
    pub confidence: f64,
}

/// Classify one patched component.
///
/// With `|original_differential| < EPSILON_0` the relative rule has no
/// scale, and the cutoff becomes `0.1 · EPSILON_0` in absolute reward
/// units.
pub fn classify_divergence(
    component: &str,
    score: f64,
    threshold: f64,
    effect: f64,
    original_differential: f64,
) -> DivergenceInfo {
    let is_divergent = score > threshold;
    let cutoff = if original_differential.abs() < EPSILON_0 {
        HARMLESS_FRACTION * EPSILON_0
    } else {
        HARMLESS_FRACTION * original_differential.abs()
    };
    let divergence_type = match (is_divergent, effect.abs() < cutoff) {
        (false, _) => DivergenceType::None,
        (true, true) => DivergenceType::Harmless,
        (true, false) => DivergenceType::Pernicious,
    };
    let confidence = if is_divergent {
        (score / (2.0 * threshold)).min(1.0)
    } else {
        1.0 - score / threshold
    };
    DivergenceInfo {
        component: component.to_string(),
        divergence_score: score,
        is_divergent,
        divergence_type,
        confidence,
    }
}

/// `1 - n_pernicious / n_components`.
pub fn reliability(infos: &[DivergenceInfo]) -> f64 {
    if infos.is_empty() {
        return 1.0;
    }
    let n = infos
        .iter()
        .filter(|i| i.divergence_type == DivergenceType::Pernicious)
        .count();
    1.0 - n as f64 / infos.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceAwarePatchingResult {
    #[serde(flatten)]
    pub patching: PatchingResult,
    pub threshold: f64,
    pub divergence_info: Vec<DivergenceInfo>,
    pub has_pernicious_divergence: bool,
    pub reliability_score: f64,
    pub flagged_low_reliability: bool,
    pub divergent_components: Vec<String>,
    /// Components whose patched activation was pulled back to the
    /// threshold shell (constrained patching only).
    pub constrained_components: Vec<String>,
    /// The relative harmless rule was replaced by the absolute fallback.
    pub degenerate_differential: bool,
}

/// Assemble a result from per-component effects and scores.
pub fn assemble(
    patching: PatchingResult,
    scores: &[f64],
    threshold: f64,
    constrained_components: Vec<String>,
) -> DivergenceAwarePatchingResult {
    let infos: Vec<DivergenceInfo> = patching
        .component_names
        .iter()
        .zip(&patching.patch_effects)
        .zip(scores)
        .map(|((name, &e), &s)| classify_divergence(name, s, threshold, e, patching.original_differential))
        .collect();
    let reliability_score = reliability(&infos);
    DivergenceAwarePatchingResult {
        threshold,
        has_pernicious_divergence: infos.iter().any(|i| i.divergence_type == DivergenceType::Pernicious),
        reliability_score,
        flagged_low_reliability: reliability_score < RELIABILITY_FLOOR,
        divergent_components: infos
            .iter()
            .filter(|i| i.is_divergent)
            .map(|i| i.component.clone())
            .collect(),
        degenerate_differential: patching.original_differential.abs() < EPSILON_0,
        divergence_info: infos,
        constrained_components,
        patching,
    }
}

fn check_estimator(bundle: &RewardModelBundle, est: &DistributionEstimator) -> Result<()> {
    if est.n_layers() != bundle.n_layers() || est.estimates.iter().any(|g| g.dim() != bundle.d_model()) {
        return Err(Error::ShapeMismatch(
            "estimator was fitted on a different architecture".into(),
        ));
    }
    Ok(())
}

fn run(
    bundle: &RewardModelBundle,
    est: &DistributionEstimator,
    pair: &PreferencePair,
    mode: PatchMode,
    rule: SpliceRule,
    threshold: f64,
    constrain: bool,
) -> Result<DivergenceAwarePatchingResult> {
    check_estimator(bundle, est)?;
    if !(threshold > 0.0) {
        return Err(Error::Argument("divergence threshold must be positive".into()));
    }
    let prepared = PreparedPatch::new(bundle, pair, mode, rule)?;
    let comps = sublayer_components(bundle.n_layers());
    let runs = comps
        .par_iter()
        .map(|&(l, s)| -> Result<(f64, f64, bool)> {
            let g = est.get(l, s);
            let (patched, row) = if constrain {
                let shrink = |row: &mut [f64]| {
                    let score = mahalanobis(row, g).unwrap_or(0.0);
                    if score > threshold {
                        let scale = threshold / score;
                        for (v, m) in row.iter_mut().zip(&g.mean) {
                            *v = m + (*v - m) * scale;
                        }
                    }
                };
                prepared.run(bundle, l, s, Some(&shrink))?
            } else {
                prepared.run(bundle, l, s, None)?
            };
            let score = mahalanobis(&row, g)?;
            let unconstrained = if constrain {
                let (_, raw) = prepared.run(bundle, l, s, None)?;
                mahalanobis(&raw, g)? > threshold
            } else {
                false
            };
            Ok((prepared.clean_target_reward - patched, score, unconstrained))
        })
        .collect::<Result<Vec<_>>>()?;
    let effects: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let scores: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let constrained = comps
        .iter()
        .zip(&runs)
        .filter(|(_, r)| r.2)
        .map(|(&(l, s), _)| component_name(l, s))
        .collect();
    let patching = empty_result(bundle.n_layers(), mode, rule, &prepared, effects);
    Ok(assemble(patching, &scores, threshold, constrained))
}

/// Patch every sublayer and score each patched activation against the
/// clean distribution.
pub fn patch_with_divergence_check(
    bundle: &RewardModelBundle,
    estimator: &DistributionEstimator,
    pair: &PreferencePair,
    mode: PatchMode,
    rule: SpliceRule,
    threshold: f64,
) -> Result<DivergenceAwarePatchingResult> {
    run(bundle, estimator, pair, mode, rule, threshold, false)
}

/// As [`patch_with_divergence_check`], but a patched final-token output
/// scoring above `threshold` is moved radially toward the mean until it
/// scores exactly `threshold`, before the forward continues.
pub fn constrained_patch(
    bundle: &RewardModelBundle,
    estimator: &DistributionEstimator,
    pair: &PreferencePair,
    mode: PatchMode,
    rule: SpliceRule,
    threshold: f64,
) -> Result<DivergenceAwarePatchingResult> {
    run(bundle, estimator, pair, mode, rule, threshold, true)
}
