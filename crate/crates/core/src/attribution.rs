// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-component split of the reward along `w_r`.
//!
//! Contributions are taken against the pre-final-norm stream, so
//! `Σ contributions + b_r` equals `w_rᵀ h_final + b_r`, which differs from
//! the model's reward by whatever the final layer norm does.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ActivationCache, PreferencePair, RewardModelBundle, Sublayer};
use crate::error::{Error, Result};
use crate::numerics::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentType {
    Embed,
    Attn,
    Mlp,
}

impl From<Sublayer> for ComponentType {
    fn from(s: Sublayer) -> Self {
        match s {
            Sublayer::Attn => ComponentType::Attn,
            Sublayer::Mlp => ComponentType::Mlp,
        }
    }
}

/// `embed, attn_L0, mlp_L0, ..., mlp_L{L-1}` with their types and layers
/// (`-1` for the embedding).
pub fn component_schema(n_layers: usize) -> (Vec<String>, Vec<ComponentType>, Vec<isize>) {
    let mut names = vec!["embed".to_string()];
    let mut types = vec![ComponentType::Embed];
    let mut layers = vec![-1];
    for l in 0..n_layers {
        for s in [Sublayer::Attn, Sublayer::Mlp] {
            names.push(component_name(l, s));
            types.push(s.into());
            layers.push(l as isize);
        }
    }
    (names, types, layers)
}

pub fn component_name(layer: usize, sublayer: Sublayer) -> String {
    format!("{}_L{layer}", sublayer.as_str())
}

/// Parse `attn_L3` / `mlp_L0`.
pub fn parse_component(name: &str) -> Result<(usize, Sublayer)> {
    let bad = || Error::Argument(format!("bad component name `{name}` (expected attn_L<n> or mlp_L<n>)"));
    let (kind, layer) = name.split_once("_L").ok_or_else(bad)?;
    Ok((layer.parse().map_err(|_| bad())?, Sublayer::from_str(kind)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component_names: Vec<String>,
    pub component_types: Vec<ComponentType>,
    pub layer_indices: Vec<isize>,
    pub contributions_preferred: Vec<f64>,
    pub contributions_dispreferred: Vec<f64>,
    pub differential_contributions: Vec<f64>,
    /// Model rewards, through the final norm.
    pub total_reward_preferred: f64,
    pub total_reward_dispreferred: f64,
    /// `w_rᵀ h_final + b_r` on the pre-norm stream.
    pub head_projection_preferred: f64,
    pub head_projection_dispreferred: f64,
    pub bias: f64,
}

/// Which field [`ComponentResult::top_k`] ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    Differential,
    Preferred,
    Dispreferred,
}

impl FromStr for RankBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "differential" => Ok(RankBy::Differential),
            "preferred" => Ok(RankBy::Preferred),
            "dispreferred" => Ok(RankBy::Dispreferred),
            _ => Err(Error::Argument(format!("unknown ranking field `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedComponent {
    pub index: usize,
    pub name: String,
    pub value: f64,
}

impl ComponentResult {
    pub fn n_layers(&self) -> usize {
        (self.component_names.len() - 1) / 2
    }

    fn field(&self, by: RankBy) -> &[f64] {
        match by {
            RankBy::Differential => &self.differential_contributions,
            RankBy::Preferred => &self.contributions_preferred,
            RankBy::Dispreferred => &self.contributions_dispreferred,
        }
    }

    /// Flat indices sorted by `|field|` descending, ties to the lower index.
    pub fn ranking(&self, by: RankBy) -> Vec<usize> {
        let v = self.field(by);
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
        idx
    }

    pub fn top_k(&self, k: usize, by: RankBy) -> Result<Vec<RankedComponent>> {
        let n = self.component_names.len();
        if k == 0 || k > n {
            return Err(Error::Argument(format!("k = {k} outside 1..={n}")));
        }
        let v = self.field(by);
        Ok(self
            .ranking(by)
            .into_iter()
            .take(k)
            .map(|i| RankedComponent {
                index: i,
                name: self.component_names[i].clone(),
                value: v[i],
            })
            .collect())
    }

    /// Flat indices of every component of one type.
    pub fn by_type(&self, kind: ComponentType) -> Vec<usize> {
        (0..self.component_types.len())
            .filter(|&i| self.component_types[i] == kind)
            .collect()
    }

    /// Differential contributions as a `2 × (L + 1)` grid: row 0 holds the
    /// embedding followed by attention layers, row 1 holds 0 followed by
    /// MLP layers.
    pub fn heatmap(&self) -> Vec<Vec<f64>> {
        let l = self.n_layers();
        let d = &self.differential_contributions;
        let mut attn = vec![d[0]];
        let mut mlp = vec![0.0];
        for i in 0..l {
            attn.push(d[1 + 2 * i]);
            mlp.push(d[2 + 2 * i]);
        }
        vec![attn, mlp]
    }
}

/// `[w_rᵀ h[-1], w_rᵀ attn[0], w_rᵀ mlp[0], ...]`.
pub fn contributions(bundle: &RewardModelBundle, cache: &ActivationCache) -> Vec<f64> {
    let w = bundle.reward_direction();
    let mut out = Vec::with_capacity(2 * cache.n_layers() + 1);
    out.push(dot(w, cache.residual(-1)));
    for l in 0..cache.n_layers() {
        out.push(dot(w, cache.attn_out(l)));
        out.push(dot(w, cache.mlp_out(l)));
    }
    out
}

pub fn attribute(bundle: &RewardModelBundle, pair: &PreferencePair) -> Result<ComponentResult> {
    let (r_pref, c_pref) = bundle.forward_with_cache(&pair.prompt, &pair.preferred, false)?;
    let (r_disp, c_disp) = bundle.forward_with_cache(&pair.prompt, &pair.dispreferred, false)?;
    let pref = contributions(bundle, &c_pref);
    let disp = contributions(bundle, &c_disp);
    let (names, types, layers) = component_schema(bundle.n_layers());
    Ok(ComponentResult {
        component_names: names,
        component_types: types,
        layer_indices: layers,
        differential_contributions: pref.iter().zip(&disp).map(|(a, b)| a - b).collect(),
        contributions_preferred: pref,
        contributions_dispreferred: disp,
        total_reward_preferred: r_pref,
        total_reward_dispreferred: r_disp,
        head_projection_preferred: bundle.project_onto_reward(c_pref.final_residual())?,
        head_projection_dispreferred: bundle.project_onto_reward(c_disp.final_residual())?,
        bias: bundle.reward_bias(),
    })
}

pub fn attribute_many(bundle: &RewardModelBundle, pairs: &[PreferencePair]) -> Result<Vec<ComponentResult>> {
    pairs.par_iter().map(|p| attribute(bundle, p)).collect()
}

/// How many results have each component in their top-`k` by
/// `|differential|`.
pub fn top_k_frequency(results: &[ComponentResult], k: usize) -> Result<Vec<usize>> {
    let first = results
        .first()
        .ok_or_else(|| Error::Argument("top-k frequency of an empty result list".into()))?;
    let n = first.component_names.len();
    let mut counts = vec![0usize; n];
    for r in results {
        if r.component_names != first.component_names {
            return Err(Error::ShapeMismatch(
                "results with different component schemas".into(),
            ));
        }
        for c in r.top_k(k, RankBy::Differential)? {
            counts[c.index] += 1;
        }
    }
    Ok(counts)
}
