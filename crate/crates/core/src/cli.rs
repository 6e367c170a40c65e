// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. Every analysis command writes a [`RunSummary`]
//! to `--out` (or stdout) and, with `--plot`, an SVG.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{json, Value};

use crate::attribution::{attribute_many, top_k_frequency, ComponentResult};
use crate::comparator::{circuit_overlap, compare};
use crate::divergence::{constrained_patch, corpus_from_pairs, fit_distribution, patch_with_divergence_check, DistributionEstimator};
use crate::engine::{
    build_planted_model, build_seeded_model, FinalNorm, HeadKind, PlantSpec, PreferencePair, RewardModelBundle,
    Sublayer, TransformerConfig,
};
use crate::error::Error;
use crate::geometry::{
    analyze_conflicts, analyze_multi_objective, dose_response, extract_concepts, learn_term_directions,
    ConceptOptions, DEFAULT_ALIGNMENT_THRESHOLD, DEFAULT_ALPHAS,
};
use crate::io::pairs::{group_pairs, group_probes, read_pairs, read_probes};
use crate::io::{atomic_write, load_model, read_shards, save_model};
use crate::lens::trace_many;
use crate::patching::{faithfulness, patch_all_components, PatchMode, SpliceRule};
use crate::probes::cascade::{cascade_detect, cross_validate_with_hacking, DEFAULT_CORRELATION_THRESHOLD};
use crate::probes::distortion::{agentic_amplification, distortion_index, score_probe_results, ProbeResult};
use crate::probes::hacking::hacking_scan;
use crate::report::{ModelInfo, RunSummary};
use crate::sae::{analyze_features, collect_activations, decompose_reward_for_input, stack_shards, top_reward_features, train, TopKSae, TrainConfig};
use crate::svg::{emit_svg, PlotKind, PlotSource};
use crate::{data, divergence};

/// Exit code for a degeneracy escalated by `--strict`.
pub const EXIT_STRICT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "reward-lens", version, about = "Reward-direction interpretability for reward models")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Treat numeric degeneracies (undefined statistics, flat curves) as
    /// errors (exit code 4).
    #[arg(long, global = true)]
    pub strict: bool,
    /// Write an SVG plot here.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    /// Override the command's default plot kind.
    #[arg(long, global = true)]
    pub plot_kind: Option<String>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Reward of one completion.
    Score(ScoreArgs),
    /// Reward lens trajectories and crystallisation depths.
    Lens(PairsArgs),
    /// Per-component reward attribution.
    Attribute(AttributeArgs),
    /// Activation patching of every sublayer.
    Patch(PatchArgs),
    /// Patching with Mahalanobis screening of patched activations.
    DivergencePatch(DivergenceArgs),
    /// Cohen's d hacking probes.
    Hack(HackArgs),
    /// Misalignment cascade detection.
    Cascade(CascadeArgs),
    /// Distortion index of an evaluation probe set.
    Distortion(DistortionArgs),
    /// Conflict geometry of reward terms.
    Conflict(ConflictArgs),
    /// Concept vectors and their reward alignment.
    Concepts(ConceptArgs),
    /// Reward change as a concept vector is added to the residual stream.
    DoseResponse(DoseArgs),
    /// Write final-token residuals as activation shards.
    SaeCollect(SaeCollectArgs),
    /// Train a TopK SAE on activation shards.
    SaeTrain(SaeTrainArgs),
    /// Reward alignment of SAE features.
    SaeAnalyze(SaeAnalyzeArgs),
    /// Compare lens trajectories across models.
    Compare(CompareArgs),
    /// Build a seeded (or planted) toy model directory.
    BuildToy(BuildToyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArg {
    /// Model directory.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub response: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PairsArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// JSONL pair file; defaults to the bundled sample pairs.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Pair drawn by `--plot`.
    #[arg(long, default_value_t = 0)]
    pub plot_index: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub pairs: PairsArgs,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PatchOpts {
    /// noising, denoising or zero.
    #[arg(long, default_value = "noising")]
    pub mode: String,
    /// prefix (shared token prefix) or positional.
    #[arg(long, default_value = "prefix")]
    pub splice: String,
}

#[derive(Debug, Args, Serialize)]
pub struct PatchArgs {
    #[command(flatten)]
    pub pairs: PairsArgs,
    #[command(flatten)]
    pub opts: PatchOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct DivergenceArgs {
    #[command(flatten)]
    pub pairs: PairsArgs,
    #[command(flatten)]
    pub opts: PatchOpts,
    /// Pairs whose completions form the fitting corpus; defaults to the
    /// analysed pairs.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Load a fitted estimator instead of fitting one.
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Save the fitted estimator here.
    #[arg(long)]
    pub save_estimator: Option<PathBuf>,
    #[arg(long, default_value_t = divergence::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Shrink divergent patches back onto the threshold.
    #[arg(long)]
    pub constrained: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct HackArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// JSONL probe file; defaults to the five bundled dimensions.
    #[arg(long)]
    pub probes: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CascadeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// JSONL probe file; defaults to the six bundled dimensions.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CORRELATION_THRESHOLD)]
    pub threshold: f64,
    /// Cross-validate against a hacking scan on these probes (`default`
    /// for the bundled set).
    #[arg(long)]
    pub hacking_probes: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct DistortionArgs {
    /// JSON array of `{probe, dimensions, delta_r}` records.
    #[arg(long, conflicts_with_all = ["model", "probes"])]
    pub results: Option<PathBuf>,
    /// Score probes (`dimension` may hold comma-separated tags) with this
    /// model.
    #[arg(long, requires = "probes")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Comma-separated quality dimensions.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dimensions: Vec<String>,
    /// Tool count for agentic amplification.
    #[arg(long)]
    pub tool_count: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConflictArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Contrastive term pairs grouped by `dimension`. Without this file a
    /// multi-objective head's rows are used.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    /// Names for the head's objectives.
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    #[arg(long, allow_negative_numbers = true)]
    pub layer: Option<isize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConceptArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Concept pairs grouped by `dimension`; defaults to the bundled six.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub layer: Option<isize>,
    #[arg(long, default_value_t = DEFAULT_ALIGNMENT_THRESHOLD)]
    pub threshold: f64,
    /// Comma-separated concepts treated as hackable.
    #[arg(long, value_delimiter = ',', default_value = "verbosity,agreement,confidence")]
    pub hackable: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct DoseArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub concept: String,
    /// Concept pairs grouped by `dimension`; defaults to the bundled six.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub response: String,
    /// Block after which the vector is added; defaults to the last.
    #[arg(long, allow_negative_numbers = true)]
    pub layer: Option<isize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct SaeCollectArgs {
    #[command(flatten)]
    pub pairs: PairsArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub layer: isize,
    /// Shard directory.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub rows_per_shard: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SaeTrainArgs {
    #[arg(long)]
    pub shards: PathBuf,
    #[arg(long)]
    pub features: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Where to write the trained SAE.
    #[arg(long)]
    pub save: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SaeAnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub sae: PathBuf,
    #[arg(long)]
    pub shards: PathBuf,
    /// Features reported, by |reward alignment|.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Model directories, at least two.
    #[arg(long = "model", required = true, num_args = 1)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Pair compared.
    #[arg(long, default_value_t = 0)]
    pub pair_index: usize,
    /// Also report top-k circuit overlap across pair dimensions per model.
    #[arg(long)]
    pub overlap_k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildToyArgs {
    /// Output model directory.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Defaults to the bundled vocabulary size.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// `scalar` or `multi_objective:K`.
    #[arg(long, default_value = "scalar")]
    pub head: String,
    /// Plant a circuit triggered by this word.
    #[arg(long)]
    pub plant_token: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub plant_layer: usize,
    /// attn or mlp.
    #[arg(long, default_value = "mlp")]
    pub plant_sublayer: String,
    #[arg(long, default_value_t = 1.0)]
    pub plant_gain: f64,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score(_) => "score",
            Command::Lens(_) => "lens",
            Command::Attribute(_) => "attribute",
            Command::Patch(_) => "patch",
            Command::DivergencePatch(_) => "divergence-patch",
            Command::Hack(_) => "hack",
            Command::Cascade(_) => "cascade",
            Command::Distortion(_) => "distortion",
            Command::Conflict(_) => "conflict",
            Command::Concepts(_) => "concepts",
            Command::DoseResponse(_) => "dose-response",
            Command::SaeCollect(_) => "sae-collect",
            Command::SaeTrain(_) => "sae-train",
            Command::SaeAnalyze(_) => "sae-analyze",
            Command::Compare(_) => "compare",
            Command::BuildToy(_) => "build-toy",
        }
    }
}

/// What a command produced before it is wrapped and written.
struct Outcome {
    model: Option<ModelInfo>,
    report: Value,
    /// Degeneracies; fatal under `--strict`.
    warnings: Vec<String>,
    svg: Option<String>,
    /// Printed instead of the summary when no `--out` is given.
    plain: Option<String>,
}

impl Outcome {
    fn new(model: Option<&RewardModelBundle>, report: impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            model: model.map(ModelInfo::of),
            report: serde_json::to_value(report)?,
            warnings: Vec::new(),
            svg: None,
            plain: None,
        })
    }
}

/// Parse `argv`, run, and return the process exit code. Errors are
/// printed to stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Map an error chain to an exit code via the first library error in it.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, Error::exit_code)
}

fn configure_threads() {
    if let Some(n) = std::env::var("REWARD_LENS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn run(cli: &Cli) -> anyhow::Result<i32> {
    let plot_kind = cli.plot_kind.as_deref().map(str::parse::<PlotKind>).transpose()?;
    let want_plot = cli.plot.is_some();
    let outcome = match &cli.command {
        Command::Score(a) => score(a)?,
        Command::Lens(a) => lens(a, want_plot, plot_kind)?,
        Command::Attribute(a) => attribute_cmd(a, want_plot, plot_kind)?,
        Command::Patch(a) => patch(a, want_plot, plot_kind)?,
        Command::DivergencePatch(a) => divergence_patch(a, want_plot, plot_kind)?,
        Command::Hack(a) => hack(a)?,
        Command::Cascade(a) => cascade(a)?,
        Command::Distortion(a) => distortion(a)?,
        Command::Conflict(a) => conflict(a)?,
        Command::Concepts(a) => concepts(a)?,
        Command::DoseResponse(a) => dose(a, want_plot, plot_kind)?,
        Command::SaeCollect(a) => sae_collect(a)?,
        Command::SaeTrain(a) => sae_train(a, cli.seed)?,
        Command::SaeAnalyze(a) => sae_analyze(a)?,
        Command::Compare(a) => compare_cmd(a, want_plot, plot_kind)?,
        Command::BuildToy(a) => build_toy(a, cli.seed)?,
    };

    let args = serde_json::to_value(&cli.command)?;
    let summary = RunSummary::new(
        cli.command.name(),
        cli.seed,
        &args,
        outcome.model,
        outcome.warnings.clone(),
        outcome.report,
    );
    match (&cli.out, &outcome.plain) {
        (Some(path), _) => write_file(path, summary.to_json().as_bytes())?,
        (None, Some(text)) => println!("{text}"),
        (None, None) => print!("{}", summary.to_json()),
    }
    if let Some(path) = &cli.plot {
        let svg = outcome
            .svg
            .ok_or_else(|| Error::Argument(format!("`{}` has no plot", cli.command.name())))?;
        write_file(path, svg.as_bytes())?;
    }
    if cli.strict && !outcome.warnings.is_empty() {
        for w in &outcome.warnings {
            eprintln!("strict: {w}");
        }
        return Ok(EXIT_STRICT);
    }
    Ok(0)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn model(arg: &ModelArg) -> anyhow::Result<RewardModelBundle> {
    load_model(&arg.model).with_context(|| format!("loading model {}", arg.model.display()))
}

fn pairs_or_default(path: &Option<PathBuf>) -> anyhow::Result<Vec<PreferencePair>> {
    let pairs = match path {
        Some(p) => read_pairs(p).with_context(|| format!("reading pairs {}", p.display()))?,
        None => data::sample_pairs(),
    };
    if pairs.is_empty() {
        return Err(Error::Argument("pair file is empty".into()).into());
    }
    Ok(pairs)
}

fn pick<T>(items: &[T], index: usize) -> anyhow::Result<&T> {
    items
        .get(index)
        .ok_or_else(|| Error::Argument(format!("plot index {index} outside 0..{}", items.len())).into())
}

fn plot(source: PlotSource<'_>, kind: PlotKind) -> anyhow::Result<Option<String>> {
    Ok(Some(emit_svg(source, kind)?))
}

fn score(a: &ScoreArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let r = b.score(&a.prompt, &a.response)?;
    let mut o = Outcome::new(Some(&b), json!({ "prompt": a.prompt, "response": a.response, "reward": r }))?;
    o.plain = Some(format!("{r}"));
    Ok(o)
}

fn lens(a: &PairsArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let pairs = pairs_or_default(&a.pairs)?;
    let results = trace_many(&b, &pairs)?;
    let depths: Vec<Option<f64>> = results.iter().map(|r| r.crystallisation_depth).collect();
    let mut o = Outcome::new(
        Some(&b),
        json!({
            "pairs": pairs.len(),
            "crystallisation_depths": depths,
            "crystallisation_layers": results.iter().map(|r| r.crystallisation_layer).collect::<Vec<_>>(),
            "results": results,
        }),
    )?;
    o.warnings = depths
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_none())
        .map(|(i, _)| format!("pair {i}: final differential below epsilon, no crystallisation depth"))
        .collect();
    if want_plot {
        o.svg = plot(PlotSource::Lens(pick(&results, a.plot_index)?), kind.unwrap_or(PlotKind::Trajectory))?;
    }
    Ok(o)
}

fn attribute_cmd(a: &AttributeArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    let b = model(&a.pairs.model)?;
    let pairs = pairs_or_default(&a.pairs.pairs)?;
    let results = attribute_many(&b, &pairs)?;
    let k = a.top_k.min(results[0].component_names.len());
    let freq = top_k_frequency(&results, k)?;
    let mut o = Outcome::new(
        Some(&b),
        json!({
            "pairs": pairs.len(),
            "component_names": results[0].component_names,
            "top_k": k,
            "top_k_frequency": freq,
            "results": results,
        }),
    )?;
    if want_plot {
        o.svg = plot(
            PlotSource::Attribution(pick(&results, a.pairs.plot_index)?),
            kind.unwrap_or(PlotKind::TopkBar),
        )?;
    }
    Ok(o)
}

fn patch_opts(o: &PatchOpts) -> anyhow::Result<(PatchMode, SpliceRule)> {
    Ok((o.mode.parse()?, o.splice.parse()?))
}

fn patch(a: &PatchArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    let b = model(&a.pairs.model)?;
    let pairs = pairs_or_default(&a.pairs.pairs)?;
    let (mode, rule) = patch_opts(&a.opts)?;
    let results = pairs
        .iter()
        .map(|p| patch_all_components(&b, p, mode, rule))
        .collect::<crate::Result<Vec<_>>>()?;
    let attributions = attribute_many(&b, &pairs)?;
    let mut warnings = Vec::new();
    let faith: Vec<Value> = attributions
        .iter()
        .zip(&results)
        .enumerate()
        .map(|(i, (attr, res))| match faithfulness(attr, res) {
            Ok(s) => json!({ "rho": s.rho, "p_value": s.p_value }),
            Err(e) => {
                warnings.push(format!("pair {i}: faithfulness undefined ({e})"));
                Value::Null
            }
        })
        .collect();
    for (i, r) in results.iter().enumerate() {
        if r.normalized_effects.is_none() {
            warnings.push(format!("pair {i}: original differential below epsilon, effects not normalised"));
        }
    }
    let mut o = Outcome::new(
        Some(&b),
        json!({ "pairs": pairs.len(), "mode": mode, "splice_rule": rule, "results": results, "faithfulness": faith }),
    )?;
    o.warnings = warnings;
    if want_plot {
        o.svg = plot(PlotSource::Patching(pick(&results, a.pairs.plot_index)?), kind.unwrap_or(PlotKind::TopkBar))?;
    }
    Ok(o)
}

fn divergence_patch(a: &DivergenceArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    let b = model(&a.pairs.model)?;
    let pairs = pairs_or_default(&a.pairs.pairs)?;
    let (mode, rule) = patch_opts(&a.opts)?;
    let estimator = match &a.estimator {
        Some(p) => DistributionEstimator::load(p)?,
        None => {
            let corpus_pairs = match &a.corpus {
                Some(_) => pairs_or_default(&a.corpus)?,
                None => pairs.clone(),
            };
            fit_distribution(&b, &corpus_from_pairs(&corpus_pairs))?
        }
    };
    if let Some(p) = &a.save_estimator {
        estimator.save(p)?;
    }
    let results = pairs
        .iter()
        .map(|p| {
            if a.constrained {
                constrained_patch(&b, &estimator, p, mode, rule, a.threshold)
            } else {
                patch_with_divergence_check(&b, &estimator, p, mode, rule, a.threshold)
            }
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let mut o = Outcome::new(
        Some(&b),
        json!({
            "pairs": pairs.len(),
            "threshold": a.threshold,
            "constrained": a.constrained,
            "reliability_scores": results.iter().map(|r| r.reliability_score).collect::<Vec<_>>(),
            "results": results,
        }),
    )?;
    o.warnings = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.degenerate_differential)
        .map(|(i, _)| format!("pair {i}: original differential below epsilon, absolute harm cutoff used"))
        .collect();
    if want_plot {
        let r = pick(&results, a.pairs.plot_index)?;
        o.svg = plot(PlotSource::Patching(&r.patching), kind.unwrap_or(PlotKind::TopkBar))?;
    }
    Ok(o)
}

fn hack(a: &HackArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let tests = match &a.probes {
        Some(p) => group_probes(read_probes(p)?),
        None => data::hacking_probes(),
    };
    let mut report = hacking_scan(&b, &tests)?;
    report.default_probes = a.probes.is_none();
    let warnings = report
        .results
        .iter()
        .filter(|r| r.artefact || r.undefined)
        .map(|r| {
            let what = if r.artefact { "zero spread, infinite effect size" } else { "all deltas zero, effect size undefined" };
            format!("{}: {what}", r.dimension)
        })
        .collect();
    let mut o = Outcome::new(Some(&b), &report)?;
    o.warnings = warnings;
    Ok(o)
}

fn cascade(a: &CascadeArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let tests = match &a.probes {
        Some(p) => group_probes(read_probes(p)?),
        None => data::cascade_probes(),
    };
    let report = cascade_detect(&b, &tests, a.threshold)?;
    let cross = match a.hacking_probes.as_deref() {
        None => None,
        Some(src) => {
            let probes = if src == "default" { data::hacking_probes() } else { group_probes(read_probes(Path::new(src))?) };
            Some(cross_validate_with_hacking(&hacking_scan(&b, &probes)?, &report))
        }
    };
    let warnings = report
        .degenerate_correlations
        .iter()
        .map(|(x, y)| format!("correlation of `{x}` and `{y}` undefined"))
        .collect();
    let mut o = Outcome::new(Some(&b), json!({ "cascade": report, "cross_validation": cross }))?;
    o.warnings = warnings;
    Ok(o)
}

fn distortion(a: &DistortionArgs) -> anyhow::Result<Outcome> {
    let (results, bundle) = match (&a.results, &a.model, &a.probes) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let results: Vec<ProbeResult> =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            (results, None)
        }
        (None, Some(m), Some(p)) => {
            let b = load_model(m)?;
            (score_probe_results(&b, &read_probes(p)?)?, Some(b))
        }
        _ => bail!(Error::Argument("distortion needs --results or --model with --probes".into())),
    };
    let mut report = distortion_index(&results, &a.dimensions)?;
    if let Some(t) = a.tool_count {
        report = agentic_amplification(&report, t);
    }
    let mut o = Outcome::new(bundle.as_ref(), &report)?;
    if report.degenerate_normalisation {
        o.warnings.push("every probe has the same reward gap; coverage fixed at 0.5".into());
    }
    Ok(o)
}

fn conflict(a: &ConflictArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let report = match &a.terms {
        Some(path) => {
            let terms = group_pairs(read_pairs(path)?);
            let dirs = learn_term_directions(&b, &terms, a.layer)?;
            let names: Vec<String> = dirs.keys().cloned().collect();
            analyze_conflicts(&names, &dirs.into_values().collect::<Vec<_>>())?
        }
        None => analyze_multi_objective(&b, a.names.as_deref())?,
    };
    Outcome::new(Some(&b), &report)
}

fn concept_pairs(path: &Option<PathBuf>) -> anyhow::Result<IndexMap<String, Vec<PreferencePair>>> {
    Ok(match path {
        Some(p) => group_pairs(read_pairs(p)?),
        None => data::concept_pairs(),
    })
}

fn concepts(a: &ConceptArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let opts = ConceptOptions {
        layer: a.layer,
        alignment_threshold: a.threshold,
        hackable: a.hackable.clone(),
    };
    let report = extract_concepts(&b, &concept_pairs(&a.pairs)?, &opts)?;
    Outcome::new(Some(&b), &report)
}

fn dose(a: &DoseArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let all = concept_pairs(&a.pairs)?;
    let pairs = all
        .get(&a.concept)
        .ok_or_else(|| Error::Argument(format!("no pairs for concept `{}`", a.concept)))?;
    let mut one = IndexMap::new();
    one.insert(a.concept.clone(), pairs.clone());
    let layer = a.layer.unwrap_or(b.n_layers() as isize - 1);
    let report = extract_concepts(&b, &one, &ConceptOptions { layer: Some(layer), ..Default::default() })?;
    let alphas = a.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    let dr = dose_response(&b, &a.prompt, &a.response, &a.concept, &report.concepts[0].direction, layer, &alphas)?;
    let mut o = Outcome::new(Some(&b), &dr)?;
    if want_plot {
        o.svg = plot(PlotSource::Dose(&dr), kind.unwrap_or(PlotKind::DoseResponse))?;
    }
    Ok(o)
}

fn sae_collect(a: &SaeCollectArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.pairs.model)?;
    let pairs = pairs_or_default(&a.pairs.pairs)?;
    let corpus = corpus_from_pairs(&pairs);
    let paths = collect_activations(&b, &corpus, a.layer, &a.dir, a.rows_per_shard)?;
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    Outcome::new(Some(&b), json!({ "layer": a.layer, "rows": corpus.len(), "shards": names }))
}

fn load_activations(dir: &Path) -> anyhow::Result<crate::numerics::Matrix> {
    let shards = read_shards(dir).with_context(|| format!("reading shards in {}", dir.display()))?;
    Ok(stack_shards(&shards)?)
}

fn sae_train(a: &SaeTrainArgs, seed: u64) -> anyhow::Result<Outcome> {
    let data = load_activations(&a.shards)?;
    let mut sae = TopKSae::new(data.cols(), a.features, a.k, seed)?;
    sae.init_decoder_bias(&data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed,
    };
    let trace = train(&mut sae, &data, &cfg)?;
    sae.save(&a.save)?;
    Outcome::new(
        None,
        json!({
            "d": sae.d(),
            "features": sae.n_features(),
            "k": sae.k,
            "rows": data.rows(),
            "steps": trace.len(),
            "initial_loss": trace.first(),
            "final_loss": trace.last(),
        }),
    )
}

fn sae_analyze(a: &SaeAnalyzeArgs) -> anyhow::Result<Outcome> {
    let b = model(&a.model)?;
    let sae = TopKSae::load(&a.sae)?;
    let data = load_activations(&a.shards)?;
    let features = analyze_features(&sae, &data, b.reward_direction())?;
    let top = top_reward_features(&features, a.top);
    let first = decompose_reward_for_input(&sae, data.row(0), b.reward_direction(), b.reward_bias())?;
    let dead = features.iter().filter(|f| f.activation_frequency == 0.0).count();
    let mut o = Outcome::new(
        Some(&b),
        json!({ "features": sae.n_features(), "dead_features": dead, "top_features": top, "example_decomposition": first }),
    )?;
    if dead == sae.n_features() {
        o.warnings.push("no feature fires on the supplied activations".into());
    }
    Ok(o)
}

fn compare_cmd(a: &CompareArgs, want_plot: bool, kind: Option<PlotKind>) -> anyhow::Result<Outcome> {
    if a.models.len() < 2 {
        bail!(Error::Argument("compare needs at least two --model directories".into()));
    }
    let bundles = a
        .models
        .iter()
        .map(|p| load_model(p).with_context(|| format!("loading model {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let names: Vec<String> = a
        .models
        .iter()
        .enumerate()
        .map(|(i, p)| p.file_name().map_or_else(|| format!("model_{i}"), |n| n.to_string_lossy().into_owned()))
        .collect();
    let pairs = pairs_or_default(&a.pairs)?;
    let pair = pick(&pairs, a.pair_index)?;
    let refs: Vec<(String, &RewardModelBundle)> = names.iter().cloned().zip(bundles.iter()).collect();
    let result = compare(&refs, pair, false)?;
    let overlap = match a.overlap_k {
        None => None,
        Some(k) => {
            let mut per_model = IndexMap::new();
            for (name, b) in &refs {
                let mut by_dim: IndexMap<String, Vec<ComponentResult>> = IndexMap::new();
                for (p, r) in pairs.iter().zip(attribute_many(b, &pairs)?) {
                    by_dim.entry(p.dimension.clone().unwrap_or_else(|| "default".into())).or_default().push(r);
                }
                per_model.insert(name.clone(), circuit_overlap(&by_dim, k)?);
            }
            Some(per_model)
        }
    };
    let warnings = result
        .degenerate_models
        .iter()
        .map(|m| format!("`{m}` has a flat differential; its correlations are undefined"))
        .collect();
    let mut o = Outcome::new(None, json!({ "comparison": result, "circuit_overlap": overlap }))?;
    o.warnings = warnings;
    if want_plot {
        o.svg = plot(PlotSource::Comparison(&result), kind.unwrap_or(PlotKind::Overlay))?;
    }
    Ok(o)
}

fn build_toy(a: &BuildToyArgs, seed: u64) -> anyhow::Result<Outcome> {
    let vocab = a.vocab.unwrap_or_else(data::default_vocab_size);
    let head: HeadKind = a.head.parse()?;
    let config = TransformerConfig::new(a.layers, a.d_model, a.heads, vocab).with_head(head);
    let (bundle, planted) = match &a.plant_token {
        None => (build_seeded_model(&config, seed)?, Value::Null),
        Some(word) => {
            let config = config.with_final_norm(FinalNorm::Identity);
            let probe = build_seeded_model(&config, seed)?;
            let trigger = probe.tokenizer().id(word)?;
            let sublayer: Sublayer = a.plant_sublayer.parse()?;
            let spec = PlantSpec {
                sublayer,
                seed,
                ..PlantSpec::mlp(a.plant_layer, trigger, a.plant_gain)
            };
            let m = build_planted_model(&config, spec)?;
            let info = json!({
                "token": word,
                "token_id": trigger,
                "layer": a.plant_layer,
                "sublayer": sublayer.as_str(),
                "gain": a.plant_gain,
                "reward_gain": m.reward_gain(),
            });
            (m.bundle, info)
        }
    };
    save_model(&bundle, &a.dir).map_err(|e| anyhow!(e)).with_context(|| format!("saving {}", a.dir.display()))?;
    Outcome::new(
        Some(&bundle),
        json!({ "config": bundle.config(), "vocab_size": vocab, "planted": planted }),
    )
}
