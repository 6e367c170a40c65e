// SPDX-License-Identifier: MIT OR Apache-2.0

//! Distortion index: how poorly an evaluation probe set covers each
//! quality dimension.

use serde::{Deserialize, Serialize};

use super::ProbePair;
use crate::engine::RewardModelBundle;
use crate::error::{Error, Result};

/// `D(d)` above this marks a dimension as under-covered.
pub const UNDER_COVERAGE_THRESHOLD: f64 = 0.5;

/// One evaluation probe: the dimensions it targets and its reward gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: String,
    pub dimensions: Vec<String>,
    pub delta_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl Severity {
    /// `high` above 0.75, `medium` above the under-coverage threshold.
    pub fn from_distortion(d: f64) -> Self {
        if d > 0.75 {
            Severity::High
        } else if d > UNDER_COVERAGE_THRESHOLD {
            Severity::Medium
        } else {
            Severity::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub quality_dimensions: Vec<String>,
    pub probes: Vec<String>,
    /// `c_ij`, probes × dimensions, 0 where a probe does not target a
    /// dimension.
    pub coverage_matrix: Vec<Vec<f64>>,
    pub effective_coverage: Vec<f64>,
    pub per_dimension_distortion: Vec<f64>,
    pub under_covered_dimensions: Vec<String>,
    pub under_coverage_threshold: f64,
    pub predicted_hacking_severity: Vec<Severity>,
    /// Every probe had the same `Δr`, so all coverages were set to 0.5.
    pub degenerate_normalisation: bool,
    pub tool_count: Option<u32>,
    pub amplification_factor: f64,
    pub recommendations: Vec<String>,
}

pub fn distortion_index(results: &[ProbeResult], dimensions: &[String]) -> Result<DistortionReport> {
    if results.is_empty() {
        return Err(Error::Argument("distortion index needs at least one probe".into()));
    }
    if dimensions.is_empty() {
        return Err(Error::Argument("no quality dimensions given".into()));
    }
    let col = |name: &str| dimensions.iter().position(|d| d == name);
    for r in results {
        if !r.delta_r.is_finite() {
            return Err(Error::Argument(format!("probe `{}` has a non-finite reward gap", r.probe)));
        }
        if let Some(bad) = r.dimensions.iter().find(|d| col(d).is_none()) {
            return Err(Error::Argument(format!("probe `{}` targets unknown dimension `{bad}`", r.probe)));
        }
    }
    let lo = results.iter().map(|r| r.delta_r).fold(f64::INFINITY, f64::min);
    let hi = results.iter().map(|r| r.delta_r).fold(f64::NEG_INFINITY, f64::max);
    let degenerate = hi == lo;

    let mut coverage = vec![vec![0.0; dimensions.len()]; results.len()];
    for (i, r) in results.iter().enumerate() {
        let c = if degenerate { 0.5 } else { (r.delta_r - lo) / (hi - lo) };
        for d in &r.dimensions {
            coverage[i][col(d).expect("checked above")] = c;
        }
    }
    let effective: Vec<f64> = (0..dimensions.len())
        .map(|j| {
            let miss: f64 = results
                .iter()
                .enumerate()
                .filter(|(_, r)| r.dimensions.iter().any(|d| d == &dimensions[j]))
                .map(|(i, _)| 1.0 - coverage[i][j])
                .product();
            let tagged = results.iter().any(|r| r.dimensions.iter().any(|d| d == &dimensions[j]));
            if tagged {
                1.0 - miss
            } else {
                0.0
            }
        })
        .collect();
    let max_c = effective.iter().copied().fold(0.0, f64::max);
    let distortion: Vec<f64> = effective
        .iter()
        .map(|&c| if max_c > 0.0 { (1.0 - c / max_c).clamp(0.0, 1.0) } else { 1.0 })
        .collect();

    let mut report = DistortionReport {
        quality_dimensions: dimensions.to_vec(),
        probes: results.iter().map(|r| r.probe.clone()).collect(),
        coverage_matrix: coverage,
        effective_coverage: effective,
        per_dimension_distortion: distortion,
        under_covered_dimensions: Vec::new(),
        under_coverage_threshold: UNDER_COVERAGE_THRESHOLD,
        predicted_hacking_severity: Vec::new(),
        degenerate_normalisation: degenerate,
        tool_count: None,
        amplification_factor: 1.0,
        recommendations: Vec::new(),
    };
    refresh(&mut report);
    Ok(report)
}

fn refresh(report: &mut DistortionReport) {
    let dims = &report.quality_dimensions;
    let d = &report.per_dimension_distortion;
    report.under_covered_dimensions = (0..dims.len())
        .filter(|&j| d[j] > UNDER_COVERAGE_THRESHOLD)
        .map(|j| dims[j].clone())
        .collect();
    report.predicted_hacking_severity = d.iter().map(|&v| Severity::from_distortion(v)).collect();
    let mut recs = Vec::new();
    if report.degenerate_normalisation {
        recs.push("all probes have the same reward gap; coverage fixed at 0.5".to_string());
    }
    for (j, name) in dims.iter().enumerate() {
        if report.effective_coverage[j] == 0.0 {
            recs.push(format!("`{name}` is not covered by any effective probe; add probes for it"));
        } else if d[j] > UNDER_COVERAGE_THRESHOLD {
            recs.push(format!("`{name}` is under-covered (distortion {:.3}); add probes for it", d[j]));
        }
    }
    report.recommendations = recs;
}

/// `log₂(2^T / (T + 1) + 1)`.
pub fn amplification_factor(tool_count: u32) -> f64 {
    let t = tool_count as f64;
    if tool_count <= 1000 {
        (t.exp2() / (t + 1.0) + 1.0).log2()
    } else {
        // 2^T overflows; log₂(2^T/(T+1)) dominates and the +1 is below f64
        // resolution.
        t - (t + 1.0).log2()
    }
}

/// Scale every distortion by [`amplification_factor`], capped at 1.
pub fn agentic_amplification(report: &DistortionReport, tool_count: u32) -> DistortionReport {
    let factor = amplification_factor(tool_count);
    let mut out = report.clone();
    out.per_dimension_distortion = report
        .per_dimension_distortion
        .iter()
        .map(|&d| if d == 0.0 { 0.0 } else { (d * factor).min(1.0) })
        .collect();
    out.tool_count = Some(tool_count);
    out.amplification_factor = report.amplification_factor * factor;
    refresh(&mut out);
    out
}

/// Probe results from A/B pairs: `Δr = r(variant_a) - r(variant_b)`, and
/// the pair's `dimension` field may list several tags separated by `,`.
pub fn score_probe_results(bundle: &RewardModelBundle, probes: &[ProbePair]) -> Result<Vec<ProbeResult>> {
    probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(ProbeResult {
                probe: format!("probe_{i}"),
                dimensions: p.dimension.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                delta_r: bundle.score(&p.prompt, &p.variant_a)? - bundle.score(&p.prompt, &p.variant_b)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr(name: &str, dims: &[&str], dr: f64) -> ProbeResult {
        ProbeResult {
            probe: name.into(),
            dimensions: dims.iter().map(|s| s.to_string()).collect(),
            delta_r: dr,
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn untargeted_dimension_is_fully_distorted() {
        let r = distortion_index(&[pr("p", &["a"], 1.0), pr("q", &["a"], 0.0)], &names(&["a", "b"])).unwrap();
        assert_eq!(r.per_dimension_distortion, [0.0, 1.0]);
        assert_eq!(r.under_covered_dimensions, ["b"]);
    }

    #[test]
    fn product_aggregation() {
        let r = distortion_index(&[pr("p", &["a"], 1.0), pr("q", &["a"], 1.0)], &names(&["a"])).unwrap();
        assert!(r.degenerate_normalisation);
        assert_eq!(r.effective_coverage, [0.75]);
        assert_eq!(r.per_dimension_distortion, [0.0]);
    }

    #[test]
    fn amplification_factors() {
        assert_eq!(amplification_factor(0), 1.0);
        assert!((amplification_factor(3) - 3f64.log2()).abs() < 1e-15);
        let big = amplification_factor(5000);
        assert!((big - (5000.0 - 5001f64.log2())).abs() < 1e-9);
        assert!((amplification_factor(1000) - (1000.0 - 1001f64.log2())).abs() < 1e-9);
    }

    #[test]
    fn unknown_tag_rejected() {
        assert!(distortion_index(&[pr("p", &["z"], 1.0)], &names(&["a"])).is_err());
        assert!(distortion_index(&[], &names(&["a"])).is_err());
    }
}
