// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{planted_with, random_pairs, seeded, trigger_pair};
use proptest::prelude::*;
use reward_lens::engine::PreferencePair;
use reward_lens::lens::{crystallisation_layer, depth, trace, trace_many, trace_single, EPSILON_0};

#[test]
fn planted_step_appears_at_the_planted_layer() {
    for (l, star) in [(3, 1), (4, 0), (4, 3), (6, 2)] {
        let m = planted_with(l, star, 2.0);
        let r = trace(&m.bundle, &trigger_pair(&m)).unwrap();
        let c = m.reward_gain() * 2.0;
        for (i, &layer) in r.layers.iter().enumerate() {
            let expect = if layer >= star as isize { c } else { 0.0 };
            assert!((r.differential[i] - expect).abs() < 1e-12, "L={l} layer {layer}");
        }
        assert_eq!(r.crystallisation_layer, Some(star as isize));
        assert_eq!(r.crystallisation_depth, Some((star + 1) as f64 / (l + 1) as f64));
    }
}

#[test]
fn marginals_telescope_to_the_final_differential() {
    let bundle = seeded(4, 3);
    for pair in random_pairs(&bundle, 10, 1) {
        let r = trace(&bundle, &pair).unwrap();
        assert_eq!(r.marginal_contributions.len(), 4);
        let sum: f64 = r.marginal_contributions.iter().sum();
        let span = r.differential[4] - r.differential[0];
        assert!((sum - span).abs() < 1e-12);
    }
}

#[test]
fn lens_differential_matches_prenorm_projection() {
    let bundle = seeded(2, 9);
    let pair = &random_pairs(&bundle, 1, 2)[0];
    let r = trace(&bundle, pair).unwrap();
    let (_, a) = bundle.forward_with_cache(&pair.prompt, &pair.preferred, false).unwrap();
    let (_, b) = bundle.forward_with_cache(&pair.prompt, &pair.dispreferred, false).unwrap();
    for (i, l) in (-1..2).enumerate() {
        let expect = bundle.project_onto_reward(a.residual(l)).unwrap()
            - bundle.project_onto_reward(b.residual(l)).unwrap();
        assert_eq!(r.differential[i], expect);
    }
}

#[test]
fn single_trace_matches_preferred_half() {
    let bundle = seeded(3, 1);
    let pair = &random_pairs(&bundle, 1, 4)[0];
    let full = trace(&bundle, pair).unwrap();
    let single = trace_single(&bundle, &pair.prompt, &pair.preferred).unwrap();
    assert_eq!(single.lens_preferred, full.lens_preferred);
    assert_eq!(single.reward_preferred, full.reward_preferred);
    assert!(single.differential.is_empty());
    assert_eq!(single.crystallisation_layer, None);
}

#[test]
fn identical_completions_have_no_crystallisation() {
    let bundle = seeded(2, 0);
    let r = trace(&bundle, &PreferencePair::new("a", "b c", "b c")).unwrap();
    assert!(r.differential.iter().all(|&d| d == 0.0));
    assert_eq!(r.crystallisation_layer, None);
    assert_eq!(r.crystallisation_depth, None);
}

#[test]
fn crystallisation_examples() {
    assert_eq!(crystallisation_layer(&[0.0, 0.1, 0.6, 1.0]), Some(1));
    assert_eq!(crystallisation_layer(&[0.9, 0.1, 0.2, 1.0]), Some(2));
    assert_eq!(crystallisation_layer(&[0.0, -0.6, 0.6, 1.0]), Some(1));
    assert_eq!(crystallisation_layer(&[0.0, 0.5, 1.0]), Some(0));
    assert_eq!(crystallisation_layer(&[0.0, 1.0, EPSILON_0 / 2.0]), None);
    assert_eq!(crystallisation_layer(&[]), None);
    assert_eq!(depth(-1, 4), 0.0);
    assert_eq!(depth(3, 4), 0.8);
}

#[test]
fn parallel_trace_keeps_input_order() {
    let bundle = seeded(2, 5);
    let pairs = random_pairs(&bundle, 16, 6);
    let many = trace_many(&bundle, &pairs).unwrap();
    for (p, r) in pairs.iter().zip(&many) {
        assert_eq!(&trace(&bundle, p).unwrap(), r);
    }
}

proptest! {
    #[test]
    fn crystallisation_point_meets_the_half_rule(
        diff in prop::collection::vec(-5.0f64..5.0, 2..12)
    ) {
        let last = *diff.last().unwrap();
        match crystallisation_layer(&diff) {
            None => prop_assert!(last.abs() < EPSILON_0),
            Some(l) => {
                let i = (l + 1) as usize;
                prop_assert!(i >= 1);
                prop_assert_eq!(diff[i].signum(), last.signum());
                prop_assert!(diff[i].abs() >= 0.5 * last.abs());
                for v in &diff[1..i] {
                    prop_assert!(!(v.signum() == last.signum() && v.abs() >= 0.5 * last.abs()));
                }
            }
        }
    }
}
