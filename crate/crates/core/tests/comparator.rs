// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use common::{random_pairs, seeded};
use indexmap::IndexMap;
use proptest::prelude::*;
use reward_lens::attribution::attribute_many;
use reward_lens::comparator::{circuit_overlap, compare, depth_grid, frequency_set, interpolate, jaccard};
use reward_lens::engine::PreferencePair;
use reward_lens::lens::trace;
use reward_lens::numerics::pearson;

#[test]
fn same_bundle_correlates_perfectly() {
    let b = seeded(3, 1);
    let pair = &random_pairs(&b, 1, 1)[0];
    let r = compare(&[("x".into(), &b), ("y".into(), &b)], pair, true).unwrap();
    assert!((r.formation_correlations[0][1].unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.attribution_results.as_ref().unwrap().len(), 2);
    assert_eq!(r.depth_grid.len(), 101);
}

#[test]
fn negated_head_anticorrelates() {
    let b = seeded(3, 2);
    let neg = b.with_negated_head();
    let pair = &random_pairs(&b, 1, 2)[0];
    let r = compare(&[("x".into(), &b), ("neg".into(), &neg)], pair, false).unwrap();
    assert!((r.formation_correlations[0][1].unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(r.formation_correlations[0][1], r.formation_correlations[1][0]);
    assert_eq!(r.formation_correlations[0][0], Some(1.0));
}

#[test]
fn different_depths_interpolate_onto_the_grid() {
    let (a, b) = (seeded(4, 3), seeded(8, 3));
    let pair = PreferencePair::new("a b", "c d", "e");
    let r = compare(&[("l4".into(), &a), ("l8".into(), &b)], &pair, false).unwrap();
    for (m, bundle, l) in [(0usize, &a, 4usize), (1, &b, 8)] {
        let diff = trace(bundle, &pair).unwrap().differential;
        for j in [1usize, 20, 37, 64, 101] {
            let x = j as f64 / 101.0;
            // hand interpolation: depth of entry i is i / (L + 1)
            let pos = x * (l + 1) as f64;
            let lo = pos.floor() as usize;
            let expect = if lo >= l { diff[l] } else { diff[lo] + (pos - lo as f64) * (diff[lo + 1] - diff[lo]) };
            let expect = if pos <= 0.0 { diff[0] } else { expect };
            assert!((r.interpolated_differentials[m][j - 1] - expect).abs() < 1e-9, "L={l} j={j}");
        }
    }
}

#[test]
fn flat_curves_are_degenerate() {
    let b = seeded(2, 0);
    let same = PreferencePair::new("a", "b", "b");
    let r = compare(&[("x".into(), &b), ("y".into(), &b)], &same, false).unwrap();
    assert_eq!(r.degenerate_models, vec!["x".to_string(), "y".to_string()]);
    assert_eq!(r.formation_correlations[0][0], None);
    assert_eq!(r.formation_correlations[0][1], None);
    assert!(compare(&[("x".into(), &b)], &same, false).is_err());
}

#[test]
fn jaccard_examples() {
    let a: BTreeSet<u32> = (0..10).collect();
    let b: BTreeSet<u32> = (3..13).collect();
    assert_eq!(jaccard(&a, &b), 7.0 / 13.0);
    assert_eq!(jaccard(&a, &a), 1.0);
    let c: BTreeSet<u32> = (20..30).collect();
    assert_eq!(jaccard(&a, &c), 0.0);
    assert_eq!(jaccard::<u32>(&BTreeSet::new(), &BTreeSet::new()), 1.0);
}

#[test]
fn overlap_of_attribution_sets() {
    let b = seeded(4, 5);
    let mut results = IndexMap::new();
    results.insert("x".to_string(), attribute_many(&b, &random_pairs(&b, 6, 1)).unwrap());
    results.insert("y".to_string(), attribute_many(&b, &random_pairs(&b, 6, 2)).unwrap());
    results.insert("z".to_string(), results["x"].clone());
    let r = circuit_overlap(&results, 3).unwrap();
    assert_eq!(r.jaccard[0][2], 1.0);
    for i in 0..3 {
        assert_eq!(r.jaccard[i][i], 1.0);
        for j in 0..3 {
            assert_eq!(r.jaccard[i][j], r.jaccard[j][i]);
            assert!((0.0..=1.0).contains(&r.jaccard[i][j]));
        }
    }
    assert_eq!(frequency_set(&results["x"], 3).unwrap().len(), 3);
    assert!(circuit_overlap(&results, 10).is_err());
}

#[test]
fn interpolation_is_constant_outside_the_data() {
    let xs = [0.2, 0.6];
    let ys = [1.0, 3.0];
    assert_eq!(interpolate(&xs, &ys, 0.0), 1.0);
    assert_eq!(interpolate(&xs, &ys, 0.4), 2.0);
    assert_eq!(interpolate(&xs, &ys, 1.0), 3.0);
    assert_eq!(depth_grid()[0], 1.0 / 101.0);
}

proptest! {
    #[test]
    fn correlation_ignores_positive_rescaling(
        ys in prop::collection::vec(-5.0f64..5.0, 101),
        zs in prop::collection::vec(-5.0f64..5.0, 101),
        scale in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = ys.iter().map(|y| y * scale).collect();
        if let (Ok(a), Ok(b)) = (pearson(&ys, &zs), pearson(&scaled, &zs)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
