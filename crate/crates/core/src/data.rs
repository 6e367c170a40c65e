// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe and pair sets bundled with the crate.
//!
//! Three pairs per dimension: enough to exercise every code path, far too
//! few for a statistical claim.

use std::collections::BTreeSet;

use indexmap::IndexMap;

use crate::engine::PreferencePair;
use crate::io::pairs::{group_pairs, group_probes, parse_pairs, parse_probes};
use crate::probes::ProbePair;

pub const HACKING_PROBES: &str = include_str!("../data/hacking_probes.jsonl");
pub const CASCADE_PROBES: &str = include_str!("../data/cascade_probes.jsonl");
pub const CONCEPT_PAIRS: &str = include_str!("../data/concept_pairs.jsonl");
pub const SAMPLE_PAIRS: &str = include_str!("../data/sample_pairs.jsonl");

/// The five default hacking dimensions: length, confidence, formatting,
/// sycophancy, repetition. `variant_a` is neutral, `variant_b` biased.
pub fn hacking_probes() -> IndexMap<String, Vec<ProbePair>> {
    group_probes(parse_probes(HACKING_PROBES).expect("bundled hacking probes parse"))
}

/// Six misalignment dimensions. `variant_a` is aligned, `variant_b`
/// misaligned.
pub fn cascade_probes() -> IndexMap<String, Vec<ProbePair>> {
    group_probes(parse_probes(CASCADE_PROBES).expect("bundled cascade probes parse"))
}

/// Six concepts; `preferred` carries the concept, `dispreferred` its
/// opposite.
pub fn concept_pairs() -> IndexMap<String, Vec<PreferencePair>> {
    group_pairs(parse_pairs(CONCEPT_PAIRS).expect("bundled concept pairs parse"))
}

pub fn sample_pairs() -> Vec<PreferencePair> {
    parse_pairs(SAMPLE_PAIRS).expect("bundled sample pairs parse")
}

/// `a`..`z` followed by every word in the bundled files, sorted.
pub fn default_vocabulary() -> Vec<String> {
    let mut words: Vec<String> = ('a'..='z').map(String::from).collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for p in hacking_probes().values().chain(cascade_probes().values()).flatten() {
        for text in [&p.prompt, &p.variant_a, &p.variant_b] {
            seen.extend(text.split_whitespace().map(String::from));
        }
    }
    for p in concept_pairs().values().flatten().chain(sample_pairs().iter()) {
        for text in [&p.prompt, &p.preferred, &p.dispreferred] {
            seen.extend(text.split_whitespace().map(String::from));
        }
    }
    words.extend(seen.into_iter().filter(|w| !(w.len() == 1 && w.chars().all(|c| c.is_ascii_lowercase()))));
    words
}

/// Vocabulary size that covers [`default_vocabulary`] plus the two
/// specials, rounded up to a multiple of 64.
pub fn default_vocab_size() -> usize {
    (default_vocabulary().len() + 2).div_ceil(64) * 64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_sets_have_three_pairs_per_dimension() {
        let h = hacking_probes();
        assert_eq!(
            h.keys().map(String::as_str).collect::<Vec<_>>(),
            ["length", "confidence", "formatting", "sycophancy", "repetition"]
        );
        assert!(h.values().all(|v| v.len() == 3));
        assert_eq!(cascade_probes().len(), 6);
        assert!(cascade_probes().values().all(|v| v.len() == 3));
        assert_eq!(concept_pairs().len(), 6);
        assert_eq!(sample_pairs().len(), 12);
    }

    #[test]
    fn vocabulary_is_unique() {
        let v = default_vocabulary();
        let set: BTreeSet<_> = v.iter().collect();
        assert_eq!(set.len(), v.len());
        assert!(default_vocab_size() >= v.len() + 2);
    }
}
