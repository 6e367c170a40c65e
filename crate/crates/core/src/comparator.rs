// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-model comparison on a shared fractional-depth axis.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, top_k_frequency, ComponentResult};
use crate::engine::{PreferencePair, RewardModelBundle};
use crate::error::{Error, Result};
use crate::lens::{depth, trace, RewardLensResult};
use crate::numerics::pearson;

pub const GRID_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub model_names: Vec<String>,
    pub lens_results: Vec<RewardLensResult>,
    pub attribution_results: Option<Vec<ComponentResult>>,
    /// Fractional crystallisation depth per model.
    pub crystallization_layers: Vec<Option<f64>>,
    pub depth_grid: Vec<f64>,
    /// Each model's differential interpolated onto `depth_grid`.
    pub interpolated_differentials: Vec<Vec<f64>>,
    /// Pairwise Pearson on the grid; `None` where a curve is constant.
    pub formation_correlations: Vec<Vec<Option<f64>>>,
    pub degenerate_models: Vec<String>,
}

/// `j / 101` for `j = 1..=101`.
pub fn depth_grid() -> Vec<f64> {
    (1..=GRID_POINTS).map(|j| j as f64 / GRID_POINTS as f64).collect()
}

/// Piecewise-linear interpolation through `(xs, ys)`, `xs` ascending,
/// held constant outside the sampled range.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    assert!(!xs.is_empty() && xs.len() == ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// A lens differential resampled onto [`depth_grid`].
pub fn resample(result: &RewardLensResult) -> Vec<f64> {
    let l = result.n_layers();
    let xs: Vec<f64> = result.layers.iter().map(|&layer| depth(layer, l)).collect();
    depth_grid().iter().map(|&x| interpolate(&xs, &result.differential, x)).collect()
}

pub fn compare(
    models: &[(String, &RewardModelBundle)],
    pair: &PreferencePair,
    with_attribution: bool,
) -> Result<ComparisonResult> {
    if models.len() < 2 {
        return Err(Error::Argument(format!("compare needs at least 2 models, got {}", models.len())));
    }
    let lens_results = models
        .par_iter()
        .map(|(_, b)| trace(b, pair))
        .collect::<Result<Vec<_>>>()?;
    let attribution_results = if with_attribution {
        Some(models.par_iter().map(|(_, b)| attribute(b, pair)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let curves: Vec<Vec<f64>> = lens_results.iter().map(resample).collect();
    let n = models.len();
    let mut corr = vec![vec![None; n]; n];
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        if curves[i].iter().all(|&v| v == curves[i][0]) {
            degenerate.insert(i);
        } else {
            corr[i][i] = Some(1.0);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if let Ok(r) = pearson(&curves[i], &curves[j]) {
                corr[i][j] = Some(r);
                corr[j][i] = Some(r);
            }
        }
    }
    Ok(ComparisonResult {
        model_names: models.iter().map(|(n, _)| n.clone()).collect(),
        crystallization_layers: lens_results.iter().map(|r| r.crystallisation_depth).collect(),
        lens_results,
        attribution_results,
        depth_grid: depth_grid(),
        interpolated_differentials: curves,
        formation_correlations: corr,
        degenerate_models: degenerate.into_iter().map(|i| models[i].0.clone()).collect(),
    })
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets give 1.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitOverlap {
    pub dimensions: Vec<String>,
    pub k: usize,
    /// The `k` components most often in a pair's top-`k`, ties to the lower
    /// index.
    pub top_k_sets: IndexMap<String, Vec<String>>,
    pub jaccard: Vec<Vec<f64>>,
}

/// Flat indices of the `k` most frequent components.
pub fn frequency_set(results: &[ComponentResult], k: usize) -> Result<Vec<usize>> {
    let freq = top_k_frequency(results, k)?;
    let mut idx: Vec<usize> = (0..freq.len()).collect();
    idx.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

pub fn circuit_overlap(results: &IndexMap<String, Vec<ComponentResult>>, k: usize) -> Result<CircuitOverlap> {
    if results.len() < 2 {
        return Err(Error::Argument(format!("circuit overlap needs at least 2 dimensions, got {}", results.len())));
    }
    let mut sets = Vec::new();
    let mut named = IndexMap::new();
    for (dim, rs) in results {
        let s = frequency_set(rs, k)?;
        named.insert(dim.clone(), s.iter().map(|&i| rs[0].component_names[i].clone()).collect());
        sets.push(s.into_iter().collect::<BTreeSet<_>>());
    }
    let n = sets.len();
    let jac = (0..n).map(|i| (0..n).map(|j| jaccard(&sets[i], &sets[j])).collect()).collect();
    Ok(CircuitOverlap {
        dimensions: results.keys().cloned().collect(),
        k,
        top_k_sets: named,
        jaccard: jac,
    })
}
