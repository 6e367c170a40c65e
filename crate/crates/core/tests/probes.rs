// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::seeded;
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reward_lens::data;
use reward_lens::engine::{build_planted_model, PlantSpec, PlantedModel, Sublayer, TransformerConfig, BOS_ID};
use reward_lens::numerics::pearson;
use reward_lens::probes::{
    agentic_amplification, bias_test, cascade_detect, cascade_from_deltas, cross_validate_with_hacking,
    distortion_index, hacking_scan, hacking_scan_default, ProbePair, ProbeResult, Verdict,
};
use reward_lens::probes::cascade::cascade_risk;
use reward_lens::probes::distortion::{amplification_factor, score_probe_results, Severity};

/// Uniform attention over a BOS indicator writes `-c·u/T`: reward grows
/// with sequence length and ignores everything else.
fn length_counter() -> PlantedModel {
    let cfg = TransformerConfig::new(2, 32, 4, 24);
    let spec = PlantSpec {
        layer: 0,
        sublayer: Sublayer::Attn,
        direction: None,
        trigger_token: BOS_ID,
        gain: -4.0,
        embed_alignment: 0.0,
        seed: 3,
    };
    build_planted_model(&cfg, spec).unwrap()
}

fn letters(n: usize) -> String {
    ('a'..='t').cycle().take(n).map(String::from).collect::<Vec<_>>().join(" ")
}

fn dims(v: &[(&str, Vec<f64>)]) -> IndexMap<String, Vec<f64>> {
    v.iter().map(|(k, s)| (k.to_string(), s.clone())).collect()
}

fn pr(name: &str, tags: &[&str], dr: f64) -> ProbeResult {
    ProbeResult {
        probe: name.into(),
        dimensions: tags.iter().map(|s| s.to_string()).collect(),
        delta_r: dr,
    }
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn length_counter_rewards_longer_completions() {
    let m = length_counter();
    let b = &m.bundle;
    let short = b.score("a", &letters(1)).unwrap();
    let long = b.score("a", &letters(9)).unwrap();
    assert!(long > short);
    let tokens = b.encode("a", &letters(9)).unwrap();
    assert!((long - m.closed_form_reward(&tokens)).abs() < 1e-12);

    let probes: Vec<ProbePair> = [(1, 3), (2, 8), (1, 12), (3, 5)]
        .iter()
        .map(|&(a, z)| ProbePair::new("length", "a b", &letters(a), &letters(z)))
        .collect();
    let tests: IndexMap<String, Vec<ProbePair>> = [("length".to_string(), probes)].into_iter().collect();
    let report = hacking_scan(b, &tests).unwrap();
    let r = report.get("length").unwrap();
    assert!(r.reward_deltas.iter().all(|&d| d > 0.0));
    assert!(r.effect_size > 0.5);
    assert_eq!(r.verdict, Verdict::RewardsBias);

    let flipped: IndexMap<String, Vec<ProbePair>> = tests
        .iter()
        .map(|(k, v)| {
            let swapped = v.iter().map(|p| ProbePair::new(k, &p.prompt, &p.variant_b, &p.variant_a)).collect();
            (k.clone(), swapped)
        })
        .collect();
    let neg = hacking_scan(b, &flipped).unwrap();
    assert_eq!(neg.results[0].verdict, Verdict::PenalizesBias);
    assert!((neg.results[0].effect_size + r.effect_size).abs() < 1e-12);
}

#[test]
fn cohens_d_examples() {
    let one = bias_test("x", vec![0.3]).unwrap();
    assert_eq!(one.effect_size, f64::INFINITY);
    assert!(one.artefact);
    assert_eq!(one.verdict, Verdict::RewardsBias);
    let neg = bias_test("x", vec![-0.3, -0.3, -0.3]).unwrap();
    assert_eq!(neg.effect_size, f64::NEG_INFINITY);
    let zero = bias_test("x", vec![0.0; 3]).unwrap();
    assert!(zero.undefined && zero.effect_size.is_nan());
    assert_eq!(zero.verdict, Verdict::Undefined);
    let d = bias_test("x", vec![1.0, 3.0]).unwrap();
    assert_eq!((d.mean_delta, d.std_delta, d.effect_size), (2.0, 1.0, 2.0));
    assert_eq!(bias_test("x", vec![1.0, -1.0, 0.0]).unwrap().verdict, Verdict::Neutral);
    assert!(bias_test("x", vec![]).is_err());
}

#[test]
fn sentinels_serialise_as_strings() {
    let v = serde_json::to_value(bias_test("x", vec![0.3]).unwrap()).unwrap();
    assert_eq!(v["effect_size"], "+inf");
    let v = serde_json::to_value(bias_test("x", vec![-0.3]).unwrap()).unwrap();
    assert_eq!(v["effect_size"], "-inf");
    let v = serde_json::to_value(bias_test("x", vec![0.0]).unwrap()).unwrap();
    assert!(v["effect_size"].is_null());
}

#[test]
fn identical_variants_are_undefined() {
    let bundle = seeded(2, 0);
    let pairs = vec![ProbePair::new("d", "a", "b c", "b c"); 3];
    let tests: IndexMap<String, Vec<ProbePair>> = [("d".to_string(), pairs)].into_iter().collect();
    let r = hacking_scan(&bundle, &tests).unwrap();
    assert!(r.results[0].undefined);
}

#[test]
fn default_scan_covers_five_dimensions() {
    let bundle = reward_lens::engine::build_seeded_model(
        &TransformerConfig::new(2, 32, 4, data::default_vocab_size()),
        1,
    )
    .unwrap();
    let r = hacking_scan_default(&bundle).unwrap();
    assert!(r.default_probes);
    assert_eq!(r.results.len(), 5);
    let c = cascade_detect(&bundle, &data::cascade_probes(), 0.5).unwrap();
    assert_eq!(c.dimensions_tested.len(), 6);
    assert!((0.0..=1.0).contains(&c.cascade_risk_score));
    assert!(c.recommendations[0].starts_with("small sample"));
}

#[test]
fn cascade_risk_ceiling_and_floor() {
    assert_eq!(cascade_risk(0.2, 1.0, 1.0), 1.0);
    assert_eq!(cascade_risk(0.0, 0.0, 0.0), 0.0);
    let r = cascade_from_deltas(dims(&[("a", vec![1.0, 2.0, 3.0, 4.0]), ("b", vec![2.0, 4.0, 6.0, 8.0])]), 0.5).unwrap();
    assert_eq!(r.correlation_matrix[0][1], Some(1.0));
    assert_eq!(r.cascade_risk_score, 1.0);
    assert_eq!(r.primary_failure_mode.as_deref(), Some("a"));
}

#[test]
fn clusters_partition_dimensions() {
    let r = cascade_from_deltas(
        dims(&[
            ("a", vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ("b", vec![2.0, 4.1, 6.0, 8.0, 10.0]),
            ("c", vec![1.0, -1.0, 1.0, -1.0, 1.0]),
            ("d", vec![5.0, 4.0, 3.0, 2.0, 1.0]),
        ]),
        0.5,
    )
    .unwrap();
    let mut flat: Vec<String> = r.cascade_clusters.iter().flatten().cloned().collect();
    flat.sort();
    assert_eq!(flat, names(&["a", "b", "c", "d"]));
    assert!(r.cascade_clusters.contains(&names(&["a", "b", "d"])));
    assert!(r.cascade_clusters.contains(&names(&["c"])));
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(r.correlation_matrix[i][j], r.correlation_matrix[j][i]);
        }
    }
}

#[test]
fn cross_validation_matches_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut seq = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (x, y, z) = (seq(6), seq(6), seq(4));
    let cascade = cascade_from_deltas(dims(&[("x", x.clone()), ("y", y.clone())]), 0.5).unwrap();
    let hacking = reward_lens::probes::HackingReport {
        results: vec![bias_test("z", z.clone()).unwrap(), bias_test("x", x.clone()).unwrap()],
        default_probes: false,
        note: String::new(),
    };
    let cv = cross_validate_with_hacking(&hacking, &cascade);
    assert_eq!(cv.entries.len(), 4);
    let get = |c: &str, h: &str| {
        cv.entries
            .iter()
            .find(|e| e.cascade_dimension == c && e.hacking_dimension == h)
            .unwrap()
            .clone()
    };
    assert_eq!(get("x", "x").correlation, Some(1.0));
    let e = get("y", "z");
    assert_eq!(e.overlap, 4);
    assert!((e.correlation.unwrap() - pearson(&y[..4], &z).unwrap()).abs() < 1e-15);

    let single = reward_lens::probes::HackingReport {
        results: vec![bias_test("s", vec![0.5]).unwrap()],
        default_probes: false,
        note: String::new(),
    };
    let cv = cross_validate_with_hacking(&single, &cascade);
    assert!(cv.entries.iter().all(|e| e.correlation.is_none() && e.degenerate.is_some()));
}

#[test]
fn distortion_examples() {
    let dims3 = names(&["a", "b", "c"]);
    let r = distortion_index(&[pr("p0", &["a"], 1.0), pr("p1", &["b"], 0.0)], &dims3).unwrap();
    assert_eq!(r.per_dimension_distortion, vec![0.0, 1.0, 1.0]);
    assert_eq!(r.under_covered_dimensions, names(&["b", "c"]));
    assert_eq!(r.predicted_hacking_severity, vec![Severity::Low, Severity::High, Severity::High]);

    let half = distortion_index(&[pr("p0", &["a"], 0.0), pr("p1", &["a"], 1.0), pr("p2", &["a", "b"], 0.5), pr("p3", &["b"], 0.5)], &names(&["a", "b"])).unwrap();
    assert_eq!(half.effective_coverage[1], 1.0 - 0.5 * 0.5);
    assert_eq!(half.effective_coverage[0], 1.0);

    let flat = distortion_index(&[pr("p0", &["a"], 0.2), pr("p1", &["b"], 0.2)], &dims3).unwrap();
    assert!(flat.degenerate_normalisation);
    assert_eq!(flat.coverage_matrix[0][0], 0.5);

    assert!(distortion_index(&[pr("p", &["zz"], 1.0)], &dims3).is_err());
    assert!(distortion_index(&[], &dims3).is_err());
}

#[test]
fn amplification_examples() {
    assert_eq!(amplification_factor(0), 1.0);
    assert!((amplification_factor(3) - 3f64.log2()).abs() < 1e-15);
    let big = amplification_factor(5000);
    assert!(big.is_finite() && big > 4980.0);
    let r = distortion_index(&[pr("p0", &["a"], 1.0), pr("p1", &["b"], 0.0), pr("p2", &["b"], 0.6)], &names(&["a", "b", "c"])).unwrap();
    assert!((r.per_dimension_distortion[1] - 0.4).abs() < 1e-12);
    let amp = agentic_amplification(&r, 3);
    assert_eq!(amp.per_dimension_distortion[0], 0.0);
    assert!((amp.per_dimension_distortion[1] - 0.4 * 3f64.log2()).abs() < 1e-12);
    assert!((amp.per_dimension_distortion[1] - 0.634).abs() < 1e-3);
    assert_eq!(amp.per_dimension_distortion[2], 1.0);
    assert_eq!(amp.tool_count, Some(3));
    let same = agentic_amplification(&r, 0);
    assert_eq!(same.per_dimension_distortion, r.per_dimension_distortion);
}

#[test]
fn probe_results_split_tags() {
    let bundle = seeded(1, 2);
    let probes = vec![ProbePair::new("a, b", "x", "y", "z w")];
    let r = score_probe_results(&bundle, &probes).unwrap();
    assert_eq!(r[0].dimensions, names(&["a", "b"]));
    let expect = bundle.score("x", "y").unwrap() - bundle.score("x", "z w").unwrap();
    assert_eq!(r[0].delta_r, expect);
}

proptest! {
    #[test]
    fn cohens_d_ignores_a_common_reward_shift(
        deltas in prop::collection::vec(-3.0f64..3.0, 2..20),
        shift in -100.0f64..100.0,
    ) {
        // a shared offset on both variants cancels in every delta
        let shifted: Vec<f64> = deltas.iter().map(|d| (d + shift) - shift).collect();
        let a = bias_test("x", deltas.clone()).unwrap();
        let b = bias_test("x", shifted).unwrap();
        if a.std_delta > 1e-6 {
            prop_assert!((a.effect_size - b.effect_size).abs() < 1e-6 * a.effect_size.abs().max(1.0));
        }
    }

    #[test]
    fn cascade_risk_is_monotone(
        m in 0.0f64..1.0, r in 0.0f64..1.0, f in 0.0f64..1.0, step in 0.0f64..0.5,
    ) {
        let base = cascade_risk(m, r, f);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(cascade_risk(m + step, r, f) >= base);
        prop_assert!(cascade_risk(m, (r + step).min(1.0), f) >= base);
        prop_assert!(cascade_risk(m, r, (f + step).min(1.0)) >= base);
    }

    #[test]
    fn extra_probe_never_raises_distortion(
        deltas in prop::collection::vec(0.0f64..1.0, 1..8),
        tags in prop::collection::vec(0usize..3, 1..8),
        extra in 0.0f64..1.0,
        target in 0usize..3,
    ) {
        let dnames = names(&["a", "b", "c"]);
        let n = deltas.len().min(tags.len());
        // pin the normalisation bounds at 0 and 1
        let mut base = vec![pr("lo", &[], 0.0), pr("hi", &[], 1.0)];
        for i in 0..n {
            base.push(pr(&format!("p{i}"), &[dnames[tags[i]].as_str()], deltas[i]));
        }
        let before = distortion_index(&base, &dnames).unwrap();
        let mut more = base.clone();
        more.push(pr("extra", &[dnames[target].as_str()], extra));
        let after = distortion_index(&more, &dnames).unwrap();
        prop_assert!(after.per_dimension_distortion[target] <= before.per_dimension_distortion[target] + 1e-12);
        let dmin = after.per_dimension_distortion.iter().copied().fold(f64::INFINITY, f64::min);
        if after.effective_coverage.iter().any(|&c| c > 0.0) {
            prop_assert_eq!(dmin, 0.0);
        }
    }
}
