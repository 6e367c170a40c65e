// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSONL pair and probe files.
//!
//! Pair records: `prompt`, `preferred` (or `chosen`), `dispreferred` (or
//! `rejected`), optional `dimension`. Probe records: `prompt`, `variant_a`,
//! `variant_b`, optional `dimension`.

use std::path::Path;

use indexmap::IndexMap;
use serde::Deserialize;

use crate::engine::PreferencePair;
use crate::error::{Error, Result};
use crate::probes::ProbePair;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    prompt: String,
    #[serde(alias = "chosen")]
    preferred: String,
    #[serde(alias = "rejected")]
    dispreferred: String,
    #[serde(default)]
    dimension: Option<String>,
    #[serde(default, rename = "id")]
    _id: Option<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeRecord {
    prompt: String,
    variant_a: String,
    variant_b: String,
    #[serde(default)]
    dimension: Option<String>,
}

fn records<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn parse_pairs(text: &str) -> Result<Vec<PreferencePair>> {
    records::<PairRecord>(text)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.prompt.trim().is_empty() {
                return Err(Error::Format(format!("record {}: empty prompt", i + 1)));
            }
            Ok(PreferencePair {
                prompt: r.prompt,
                preferred: r.preferred,
                dispreferred: r.dispreferred,
                dimension: r.dimension,
            })
        })
        .collect()
}

pub fn parse_probes(text: &str) -> Result<Vec<ProbePair>> {
    records::<ProbeRecord>(text)?
        .into_iter()
        .map(|r| ProbePair {
            prompt: r.prompt,
            variant_a: r.variant_a,
            variant_b: r.variant_b,
            dimension: r.dimension.unwrap_or_else(|| "custom".to_string()),
        })
        .map(Ok)
        .collect()
}

/// Group probes by dimension, keeping first-seen order.
pub fn group_probes(probes: Vec<ProbePair>) -> IndexMap<String, Vec<ProbePair>> {
    let mut out: IndexMap<String, Vec<ProbePair>> = IndexMap::new();
    for p in probes {
        out.entry(p.dimension.clone()).or_default().push(p);
    }
    out
}

/// Group pairs by dimension (untagged pairs go under `"default"`).
pub fn group_pairs(pairs: Vec<PreferencePair>) -> IndexMap<String, Vec<PreferencePair>> {
    let mut out: IndexMap<String, Vec<PreferencePair>> = IndexMap::new();
    for p in pairs {
        let key = p.dimension.clone().unwrap_or_else(|| "default".to_string());
        out.entry(key).or_default().push(p);
    }
    out
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>> {
    parse_pairs(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_probes(path: &Path) -> Result<Vec<ProbePair>> {
    parse_probes(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_rewardbench_field_names() {
        let text = r#"{"prompt": "p", "chosen": "a", "rejected": "b", "id": 3}

{"prompt": "q", "preferred": "c", "dispreferred": "d", "dimension": "safety"}"#;
        let pairs = parse_pairs(text).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].preferred, "a");
        assert_eq!(pairs[1].dimension.as_deref(), Some("safety"));
    }

    #[test]
    fn missing_field_is_a_format_error() {
        let err = parse_pairs(r#"{"prompt": "p", "chosen": "a"}"#).unwrap_err();
        assert!(matches!(err, Error::Format(m) if m.starts_with("line 1")));
        assert!(parse_pairs(r#"{"prompt": "", "chosen": "a", "rejected": "b"}"#).is_err());
    }
}
