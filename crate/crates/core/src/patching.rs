// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching over every attention and MLP sublayer.
//!
//! A patched forward replaces one sublayer's full-sequence output on the
//! target completion: rows `0..T_shared` come from the source completion,
//! later rows keep the target's own values. The effect is
//! `r_target_clean - r_target_patched`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{component_name, ComponentResult, ComponentType};
use crate::engine::{ForwardHook, PreferencePair, RewardModelBundle, Sublayer};
use crate::error::{Error, Result};
use crate::lens::EPSILON_0;
use crate::numerics::{spearman, Matrix, Spearman};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMode {
    /// Dispreferred activations into the preferred run.
    Noising,
    /// Preferred activations into the dispreferred run.
    Denoising,
    /// Zeros into the preferred run.
    Zero,
}

impl fmt::Display for PatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchMode::Noising => "noising",
            PatchMode::Denoising => "denoising",
            PatchMode::Zero => "zero",
        })
    }
}

impl FromStr for PatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noising" => Ok(PatchMode::Noising),
            "denoising" => Ok(PatchMode::Denoising),
            "zero" => Ok(PatchMode::Zero),
            _ => Err(Error::Argument(format!("unknown patch mode `{s}` (noising|denoising|zero)"))),
        }
    }
}

/// How many leading rows of the source are spliced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceRule {
    /// Longest common prefix of the two token-id sequences.
    ///
    /// Under causal attention every activation on that prefix is already
    /// identical in source and target, so noising and denoising effects
    /// are exactly zero with this rule.
    #[default]
    SharedTokenPrefix,
    /// `min(T_source, T_target)`: the source is truncated to the target's
    /// length and copied position by position.
    Positional,
}

impl fmt::Display for SpliceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpliceRule::SharedTokenPrefix => "shared_token_prefix",
            SpliceRule::Positional => "positional",
        })
    }
}

impl FromStr for SpliceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared_token_prefix" | "prefix" => Ok(SpliceRule::SharedTokenPrefix),
            "positional" => Ok(SpliceRule::Positional),
            _ => Err(Error::Argument(format!(
                "unknown splice rule `{s}` (shared_token_prefix|positional)"
            ))),
        }
    }
}

pub fn shared_prefix_len(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchingResult {
    /// The `2L` sublayer components (no embedding).
    pub component_names: Vec<String>,
    pub component_types: Vec<ComponentType>,
    pub layer_indices: Vec<isize>,
    pub patch_effects: Vec<f64>,
    pub original_differential: f64,
    pub mode: PatchMode,
    pub splice_rule: SpliceRule,
    pub shared_positions: usize,
    /// `patch_effects / original_differential`; absent when
    /// `|original_differential| < EPSILON_0`.
    pub normalized_effects: Option<Vec<f64>>,
    /// Zero ablation writes activations the model never produces.
    pub out_of_distribution: bool,
}

/// The target run and the source activations it is patched with.
pub(crate) struct PreparedPatch {
    pub target_tokens: Vec<u32>,
    pub source: Option<SourceActivations>,
    pub t_shared: usize,
    pub clean_target_reward: f64,
    pub original_differential: f64,
}

pub(crate) struct SourceActivations {
    pub attn: Vec<Matrix>,
    pub mlp: Vec<Matrix>,
}

impl PreparedPatch {
    pub fn new(
        bundle: &RewardModelBundle,
        pair: &PreferencePair,
        mode: PatchMode,
        rule: SpliceRule,
    ) -> Result<Self> {
        let pref = bundle.encode(&pair.prompt, &pair.preferred)?;
        let disp = bundle.encode(&pair.prompt, &pair.dispreferred)?;
        let (target, source) = match mode {
            PatchMode::Noising | PatchMode::Zero => (pref.clone(), disp.clone()),
            PatchMode::Denoising => (disp.clone(), pref.clone()),
        };
        let clean_target = bundle.forward_tokens(&target, false, &mut crate::engine::NoHook)?;
        let clean_source = bundle.forward_tokens(&source, mode != PatchMode::Zero, &mut crate::engine::NoHook)?;
        let (r_pref, r_disp) = match mode {
            PatchMode::Denoising => (clean_source.reward(), clean_target.reward()),
            _ => (clean_target.reward(), clean_source.reward()),
        };
        let t_shared = match mode {
            PatchMode::Zero => target.len(),
            _ => match rule {
                SpliceRule::SharedTokenPrefix => shared_prefix_len(&target, &source),
                SpliceRule::Positional => target.len().min(source.len()),
            },
        };
        let source = clean_source.full().map(|f| SourceActivations {
            attn: f.attn_out.clone(),
            mlp: f.mlp_out.clone(),
        });
        Ok(Self {
            target_tokens: target,
            source: if mode == PatchMode::Zero { None } else { source },
            t_shared,
            clean_target_reward: clean_target.reward(),
            original_differential: r_pref - r_disp,
        })
    }

    /// Reward of the patched target run and the patched final-token
    /// sublayer output. `adjust` may rewrite that final-token row before
    /// the forward continues.
    pub fn run(
        &self,
        bundle: &RewardModelBundle,
        layer: usize,
        sublayer: Sublayer,
        adjust: Option<&(dyn Fn(&mut [f64]) + Sync)>,
    ) -> Result<(f64, Vec<f64>)> {
        if layer >= bundle.n_layers() {
            return Err(Error::Argument(format!(
                "layer {layer} out of range for a {}-layer model",
                bundle.n_layers()
            )));
        }
        let source = self.source.as_ref().map(|s| match sublayer {
            Sublayer::Attn => &s.attn[layer],
            Sublayer::Mlp => &s.mlp[layer],
        });
        let mut hook = SpliceHook {
            layer,
            sublayer,
            source,
            t_shared: self.t_shared,
            adjust,
            captured: None,
        };
        let cache = bundle.forward_tokens(&self.target_tokens, false, &mut hook)?;
        let row = hook.captured.expect("hook fires on every forward");
        Ok((cache.reward(), row))
    }

    pub fn effect(&self, bundle: &RewardModelBundle, layer: usize, sublayer: Sublayer) -> Result<f64> {
        let (patched, _) = self.run(bundle, layer, sublayer, None)?;
        Ok(self.clean_target_reward - patched)
    }
}

struct SpliceHook<'a> {
    layer: usize,
    sublayer: Sublayer,
    source: Option<&'a Matrix>,
    t_shared: usize,
    adjust: Option<&'a (dyn Fn(&mut [f64]) + Sync)>,
    captured: Option<Vec<f64>>,
}

impl ForwardHook for SpliceHook<'_> {
    fn on_sublayer(&mut self, layer: usize, sublayer: Sublayer, output: &mut Matrix) {
        if layer != self.layer || sublayer != self.sublayer {
            return;
        }
        let rows = self.t_shared.min(output.rows());
        match self.source {
            Some(src) => {
                for i in 0..rows {
                    output.row_mut(i).copy_from_slice(src.row(i));
                }
            }
            None => {
                for i in 0..rows {
                    output.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let last = output.rows() - 1;
        if let Some(f) = self.adjust {
            f(output.row_mut(last));
        }
        self.captured = Some(output.row(last).to_vec());
    }
}

/// Effect of patching one sublayer.
pub fn patch_single_component(
    bundle: &RewardModelBundle,
    pair: &PreferencePair,
    layer: usize,
    sublayer: Sublayer,
    mode: PatchMode,
    rule: SpliceRule,
) -> Result<f64> {
    PreparedPatch::new(bundle, pair, mode, rule)?.effect(bundle, layer, sublayer)
}

/// `(layer, sublayer)` for the `2L` patchable components, in schema order.
pub fn sublayer_components(n_layers: usize) -> Vec<(usize, Sublayer)> {
    (0..n_layers)
        .flat_map(|l| [(l, Sublayer::Attn), (l, Sublayer::Mlp)])
        .collect()
}

pub(crate) fn normalize(effects: &[f64], original_differential: f64) -> Option<Vec<f64>> {
    (original_differential.abs() >= EPSILON_0)
        .then(|| effects.iter().map(|e| e / original_differential).collect())
}

pub(crate) fn empty_result(
    n_layers: usize,
    mode: PatchMode,
    rule: SpliceRule,
    prepared: &PreparedPatch,
    effects: Vec<f64>,
) -> PatchingResult {
    let comps = sublayer_components(n_layers);
    PatchingResult {
        component_names: comps.iter().map(|&(l, s)| component_name(l, s)).collect(),
        component_types: comps.iter().map(|&(_, s)| s.into()).collect(),
        layer_indices: comps.iter().map(|&(l, _)| l as isize).collect(),
        normalized_effects: normalize(&effects, prepared.original_differential),
        patch_effects: effects,
        original_differential: prepared.original_differential,
        mode,
        splice_rule: rule,
        shared_positions: prepared.t_shared,
        out_of_distribution: mode == PatchMode::Zero,
    }
}

/// Patch every sublayer in turn, one re-forward each.
pub fn patch_all_components(
    bundle: &RewardModelBundle,
    pair: &PreferencePair,
    mode: PatchMode,
    rule: SpliceRule,
) -> Result<PatchingResult> {
    let prepared = PreparedPatch::new(bundle, pair, mode, rule)?;
    let effects = sublayer_components(bundle.n_layers())
        .par_iter()
        .map(|&(l, s)| prepared.effect(bundle, l, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(empty_result(bundle.n_layers(), mode, rule, &prepared, effects))
}

/// Spearman correlation of `|attribution|` and `|patch effect|` over the
/// `2L` sublayers; the embedding is left out.
pub fn faithfulness(attr: &ComponentResult, patch: &PatchingResult) -> Result<Spearman> {
    if attr.component_names.get(1..) != Some(&patch.component_names[..]) {
        return Err(Error::ShapeMismatch(
            "attribution and patching results use different component schemas".into(),
        ));
    }
    let a: Vec<f64> = attr.differential_contributions[1..].iter().map(|v| v.abs()).collect();
    let p: Vec<f64> = patch.patch_effects.iter().map(|v| v.abs()).collect();
    spearman(&a, &p)
}
