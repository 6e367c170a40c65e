// SPDX-License-Identifier: MIT OR Apache-2.0

//! Directions in the residual stream: reward-term conflicts and concept
//! vectors.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ForwardHook, PreferencePair, RewardModelBundle};
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, norm, normalized, regression_slope, Matrix};
use crate::probes::distortion::Severity;

pub const ALIGNED_ABOVE: f64 = 0.5;
pub const ORTHOGONAL_BELOW: f64 = 0.2;
pub const CONFLICT_BELOW: f64 = -0.3;
pub const DEFAULT_ALIGNMENT_THRESHOLD: f64 = 0.2;
pub const DEFAULT_ALPHAS: [f64; 6] = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relationship {
    Aligned,
    Orthogonal,
    InConflict,
    WeaklyAligned,
    WeaklyOpposed,
}

pub fn classify_pair(cos: f64) -> Relationship {
    if cos > ALIGNED_ABOVE {
        Relationship::Aligned
    } else if cos.abs() < ORTHOGONAL_BELOW {
        Relationship::Orthogonal
    } else if cos < CONFLICT_BELOW {
        Relationship::InConflict
    } else if cos >= ORTHOGONAL_BELOW {
        Relationship::WeaklyAligned
    } else {
        Relationship::WeaklyOpposed
    }
}

fn check_layer(bundle: &RewardModelBundle, layer: Option<isize>) -> Result<isize> {
    let n = bundle.n_layers() as isize;
    let l = layer.unwrap_or(n - 1);
    if !(-1..n).contains(&l) {
        return Err(Error::Argument(format!("layer {l} outside -1..{}", n - 1)));
    }
    Ok(l)
}

/// Mean final-token residuals of the preferred and dispreferred sides.
fn side_means(bundle: &RewardModelBundle, pairs: &[PreferencePair], layer: isize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = pairs
        .par_iter()
        .map(|p| {
            let (_, a) = bundle.forward_with_cache(&p.prompt, &p.preferred, false)?;
            let (_, b) = bundle.forward_with_cache(&p.prompt, &p.dispreferred, false)?;
            Ok((a.residual(layer).to_vec(), b.residual(layer).to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let d = bundle.d_model();
    let n = rows.len() as f64;
    let (mut pos, mut neg) = (vec![0.0; d], vec![0.0; d]);
    for (a, b) in &rows {
        pos.iter_mut().zip(a).for_each(|(s, v)| *s += v / n);
        neg.iter_mut().zip(b).for_each(|(s, v)| *s += v / n);
    }
    Ok((pos, neg))
}

fn contrastive_direction(
    bundle: &RewardModelBundle,
    name: &str,
    pairs: &[PreferencePair],
    layer: isize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    if pairs.is_empty() {
        return Err(Error::Argument(format!("`{name}` has no pairs")));
    }
    let (pos, neg) = side_means(bundle, pairs, layer)?;
    let delta: Vec<f64> = pos.iter().zip(&neg).map(|(a, b)| a - b).collect();
    let sep = norm(&delta);
    if sep == 0.0 {
        return Err(Error::DegenerateInput(format!("`{name}` has a zero mean activation delta")));
    }
    Ok((normalized(&delta)?, pos, neg, sep))
}

/// Unit direction per term: the normalised mean of `h_pref - h_dispref` at
/// the final token after `layer` (default: the last block).
pub fn learn_term_directions(
    bundle: &RewardModelBundle,
    term_pairs: &IndexMap<String, Vec<PreferencePair>>,
    layer: Option<isize>,
) -> Result<IndexMap<String, Vec<f64>>> {
    let layer = check_layer(bundle, layer)?;
    term_pairs
        .iter()
        .map(|(name, pairs)| Ok((name.clone(), contrastive_direction(bundle, name, pairs, layer)?.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub a: String,
    pub b: String,
    pub cosine: f64,
    pub relationship: Relationship,
    pub severity: Option<Severity>,
    pub recommendation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Risk {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub term_names: Vec<String>,
    pub term_directions: Vec<Vec<f64>>,
    pub similarity_matrix: Vec<Vec<f64>>,
    pub relationship_matrix: Vec<Vec<Relationship>>,
    pub pairwise_analysis: Vec<PairAnalysis>,
    pub in_conflict_pairs: Vec<(String, String)>,
    /// Fraction of term pairs in conflict.
    pub overall_conflict_score: f64,
    /// `high` iff any pair is in conflict.
    pub monitorability_risk: Risk,
}

fn pair_advice(rel: Relationship, cos: f64, a: &str, b: &str) -> (Option<Severity>, String) {
    match rel {
        Relationship::InConflict if cos < -0.6 => (
            Some(Severity::High),
            format!("`{a}` and `{b}` pull in opposite directions; gains on one cost the other"),
        ),
        Relationship::InConflict => (
            Some(Severity::Medium),
            format!("`{a}` and `{b}` partly conflict; check their trade-off"),
        ),
        Relationship::WeaklyOpposed => (Some(Severity::Low), format!("`{a}` and `{b}` are weakly opposed")),
        Relationship::Aligned => (None, format!("`{a}` and `{b}` reinforce each other")),
        Relationship::WeaklyAligned => (None, format!("`{a}` and `{b}` are weakly aligned")),
        Relationship::Orthogonal => (None, format!("`{a}` and `{b}` are independent")),
    }
}

/// Pairwise cosine classification of term directions (normalised here).
pub fn analyze_conflicts(names: &[String], directions: &[Vec<f64>]) -> Result<ConflictReport> {
    let n = names.len();
    if n < 2 || directions.len() != n {
        return Err(Error::Argument(format!(
            "conflict analysis needs at least 2 named terms (got {n} names, {} directions)",
            directions.len()
        )));
    }
    let dirs = directions.iter().map(|d| normalized(d)).collect::<Result<Vec<_>>>()?;
    let mut sim = vec![vec![1.0; n]; n];
    let mut rel = vec![vec![Relationship::Aligned; n]; n];
    let mut pairs = Vec::new();
    let mut conflicts = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let c = cosine(&dirs[i], &dirs[j])?;
            let r = classify_pair(c);
            sim[i][j] = c;
            sim[j][i] = c;
            rel[i][j] = r;
            rel[j][i] = r;
            let (severity, recommendation) = pair_advice(r, c, &names[i], &names[j]);
            if r == Relationship::InConflict {
                conflicts.push((names[i].clone(), names[j].clone()));
            }
            pairs.push(PairAnalysis {
                a: names[i].clone(),
                b: names[j].clone(),
                cosine: c,
                relationship: r,
                severity,
                recommendation,
            });
        }
    }
    let score = conflicts.len() as f64 / pairs.len() as f64;
    Ok(ConflictReport {
        term_names: names.to_vec(),
        term_directions: dirs,
        similarity_matrix: sim,
        relationship_matrix: rel,
        pairwise_analysis: pairs,
        monitorability_risk: if conflicts.is_empty() { Risk::Low } else { Risk::High },
        in_conflict_pairs: conflicts,
        overall_conflict_score: score,
    })
}

/// Conflict analysis of a multi-objective head's rows. Names default to
/// `objective_{k}`.
pub fn analyze_multi_objective(bundle: &RewardModelBundle, objective_names: Option<&[String]>) -> Result<ConflictReport> {
    let m: &Matrix = bundle
        .adapter()
        .per_objective_directions(bundle)
        .ok_or_else(|| Error::Argument("model has a scalar head; no per-objective directions".into()))?;
    let names: Vec<String> = match objective_names {
        Some(n) if n.len() == m.rows() => n.to_vec(),
        Some(n) => {
            return Err(Error::ShapeMismatch(format!("{} names for {} objectives", n.len(), m.rows())));
        }
        None => (0..m.rows()).map(|k| format!("objective_{k}")).collect(),
    };
    let dirs: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
    analyze_conflicts(&names, &dirs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HackingRisk {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptInfo {
    pub name: String,
    pub direction: Vec<f64>,
    /// `v_cᵀ w_r / |w_r|`.
    pub reward_alignment: f64,
    /// Mean of `v_cᵀ h` over the concept side.
    pub mean_activation_positive: f64,
    /// Mean of `v_cᵀ h` over the opposite side.
    pub mean_activation_negative: f64,
    /// Norm of the unnormalised mean delta.
    pub separability: f64,
    pub is_reward_aligned: bool,
    pub hacking_risk: HackingRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptOptions {
    /// Default: the last block.
    pub layer: Option<isize>,
    pub alignment_threshold: f64,
    /// Concepts whose reward alignment counts as a hacking risk.
    pub hackable: Vec<String>,
}

impl Default for ConceptOptions {
    fn default() -> Self {
        Self {
            layer: None,
            alignment_threshold: DEFAULT_ALIGNMENT_THRESHOLD,
            hackable: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptAlignmentReport {
    pub layer: isize,
    pub alignment_threshold: f64,
    pub concepts: Vec<ConceptInfo>,
}

/// `high` for an aligned hackable concept, `medium` for any other aligned
/// concept.
pub fn hacking_risk(is_aligned: bool, hackable: bool) -> HackingRisk {
    match (is_aligned, hackable) {
        (true, true) => HackingRisk::High,
        (true, false) => HackingRisk::Medium,
        _ => HackingRisk::Low,
    }
}

/// Concept info for a known direction and side means.
pub fn concept_info(
    name: &str,
    direction: Vec<f64>,
    reward_direction: &[f64],
    positive_mean: &[f64],
    negative_mean: &[f64],
    separability: f64,
    opts: &ConceptOptions,
) -> Result<ConceptInfo> {
    let w_hat = normalized(reward_direction)?;
    let reward_alignment = dot(&direction, &w_hat).clamp(-1.0, 1.0);
    let is_reward_aligned = reward_alignment.abs() > opts.alignment_threshold;
    Ok(ConceptInfo {
        name: name.to_string(),
        mean_activation_positive: dot(&direction, positive_mean),
        mean_activation_negative: dot(&direction, negative_mean),
        direction,
        reward_alignment,
        separability,
        is_reward_aligned,
        hacking_risk: hacking_risk(is_reward_aligned, opts.hackable.iter().any(|h| h == name)),
    })
}

pub fn extract_concepts(
    bundle: &RewardModelBundle,
    concept_pairs: &IndexMap<String, Vec<PreferencePair>>,
    opts: &ConceptOptions,
) -> Result<ConceptAlignmentReport> {
    let layer = check_layer(bundle, opts.layer)?;
    let concepts = concept_pairs
        .iter()
        .map(|(name, pairs)| {
            let (v, pos, neg, sep) = contrastive_direction(bundle, name, pairs, layer)?;
            concept_info(name, v, bundle.reward_direction(), &pos, &neg, sep, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptAlignmentReport {
        layer,
        alignment_threshold: opts.alignment_threshold,
        concepts,
    })
}

/// Adds `alpha·v` to the final-token stream after one block.
struct ResidualNudge<'a> {
    layer: isize,
    v: &'a [f64],
    alpha: f64,
}

impl ForwardHook for ResidualNudge<'_> {
    fn on_residual(&mut self, layer: isize, stream: &mut Matrix) {
        if layer == self.layer {
            let last = stream.rows() - 1;
            crate::numerics::axpy(stream.row_mut(last), self.alpha, self.v);
        }
    }
}

/// Production reward and lens readout (`w_rᵀ h_final + b_r`, no final norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readouts {
    pub reward: f64,
    pub lens: f64,
}

pub fn intervene_readouts(
    bundle: &RewardModelBundle,
    prompt: &str,
    response: &str,
    v: &[f64],
    strength: f64,
    layer: isize,
) -> Result<Readouts> {
    let layer = check_layer(bundle, Some(layer))?;
    if v.len() != bundle.d_model() {
        return Err(Error::ShapeMismatch(format!(
            "concept vector of length {}, d_model is {}",
            v.len(),
            bundle.d_model()
        )));
    }
    let tokens = bundle.encode(prompt, response)?;
    let mut hook = ResidualNudge { layer, v, alpha: strength };
    let cache = bundle.forward_tokens(&tokens, false, &mut hook)?;
    Ok(Readouts {
        reward: cache.reward(),
        lens: bundle.project_onto_reward(cache.final_residual())?,
    })
}

/// Reward after adding `strength·v` to the final-token residual after
/// `layer`.
pub fn intervene_on_concept(
    bundle: &RewardModelBundle,
    prompt: &str,
    response: &str,
    v: &[f64],
    strength: f64,
    layer: isize,
) -> Result<f64> {
    Ok(intervene_readouts(bundle, prompt, response, v, strength, layer)?.reward)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponse {
    pub concept: String,
    pub layer: isize,
    pub alphas: Vec<f64>,
    pub baseline_reward: f64,
    pub rewards: Vec<f64>,
    pub deltas: Vec<f64>,
    pub causal_slope: f64,
    /// `max |δ - slope·α|`.
    pub linearity_residual: f64,
    pub baseline_lens: f64,
    pub lens_rewards: Vec<f64>,
    pub lens_deltas: Vec<f64>,
    pub lens_causal_slope: f64,
    pub lens_linearity_residual: f64,
}

fn linearity_residual(alphas: &[f64], deltas: &[f64], slope: f64) -> f64 {
    alphas.iter().zip(deltas).map(|(a, d)| (d - slope * a).abs()).fold(0.0, f64::max)
}

pub fn dose_response(
    bundle: &RewardModelBundle,
    prompt: &str,
    response: &str,
    concept: &str,
    v: &[f64],
    layer: isize,
    alphas: &[f64],
) -> Result<DoseResponse> {
    if alphas.len() < 2 {
        return Err(Error::Argument("dose-response needs at least 2 alphas".into()));
    }
    let base = intervene_readouts(bundle, prompt, response, v, 0.0, layer)?;
    let out = alphas
        .par_iter()
        .map(|&a| intervene_readouts(bundle, prompt, response, v, a, layer))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = out.iter().map(|r| r.reward).collect();
    let lens_rewards: Vec<f64> = out.iter().map(|r| r.lens).collect();
    let deltas: Vec<f64> = rewards.iter().map(|r| r - base.reward).collect();
    let lens_deltas: Vec<f64> = lens_rewards.iter().map(|r| r - base.lens).collect();
    let slope = regression_slope(alphas, &deltas)?;
    let lens_slope = regression_slope(alphas, &lens_deltas)?;
    Ok(DoseResponse {
        concept: concept.to_string(),
        layer,
        alphas: alphas.to_vec(),
        baseline_reward: base.reward,
        linearity_residual: linearity_residual(alphas, &deltas, slope),
        rewards,
        deltas,
        causal_slope: slope,
        baseline_lens: base.lens,
        lens_linearity_residual: linearity_residual(alphas, &lens_deltas, lens_slope),
        lens_rewards,
        lens_deltas,
        lens_causal_slope: lens_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_examples() {
        assert_eq!(classify_pair(0.9), Relationship::Aligned);
        assert_eq!(classify_pair(0.5), Relationship::WeaklyAligned);
        assert_eq!(classify_pair(0.0), Relationship::Orthogonal);
        assert_eq!(classify_pair(0.2), Relationship::WeaklyAligned);
        assert_eq!(classify_pair(-0.2), Relationship::WeaklyOpposed);
        assert_eq!(classify_pair(-0.25), Relationship::WeaklyOpposed);
        assert_eq!(classify_pair(-0.3), Relationship::WeaklyOpposed);
        assert_eq!(classify_pair(-0.31), Relationship::InConflict);
    }

    #[test]
    fn identical_terms_are_aligned() {
        let names = vec!["a".to_string(), "b".to_string()];
        let r = analyze_conflicts(&names, &[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(r.similarity_matrix[0][1], 1.0);
        assert_eq!(r.overall_conflict_score, 0.0);
        assert_eq!(r.monitorability_risk, Risk::Low);
        let r = analyze_conflicts(&names, &[vec![1.0, 0.0], vec![-1.0, 0.1]]).unwrap();
        assert_eq!(r.in_conflict_pairs.len(), 1);
        assert_eq!(r.monitorability_risk, Risk::High);
        assert!(analyze_conflicts(&names[..1], &[vec![1.0]]).is_err());
    }

    #[test]
    fn risk_table() {
        assert_eq!(hacking_risk(true, true), HackingRisk::High);
        assert_eq!(hacking_risk(true, false), HackingRisk::Medium);
        assert_eq!(hacking_risk(false, true), HackingRisk::Low);
    }
}
