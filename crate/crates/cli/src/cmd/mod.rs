mod answers;
mod features;
mod flipbank;
mod geometry;
mod report;
mod testbed;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use flipkit::interchange::{load_corpus, read_jsonl, ActivationMatrix, Corpus, Label, LabelRecord, ParsedRecord};
use flipkit::stats::BootstrapConfig;

use crate::ctx::Run;
use crate::error::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify raw responses as Yes, No or excluded.
    Parse(answers::ParseArgs),
    /// Flip rates, agreement metrics and accuracy with bootstrap intervals.
    Metrics(answers::MetricsArgs),
    /// Attention-map overlap with annotated boxes, flip vs no-flip.
    GroundingAttn(geometry::GroundingArgs),
    /// Embedding geometry of question/paraphrase pairs against flips.
    EmbAnalyze(geometry::EmbeddingArgs),
    /// SAE diagnostics over recorded activations.
    #[command(subcommand)]
    Sae(features::SaeCommand),
    /// Curate flip cases, patch features, evaluate clamped runs.
    #[command(subcommand)]
    Flipbank(flipbank::FlipbankCommand),
    /// Rewrite questions into the fixed finding template.
    Normalize(answers::NormalizeArgs),
    /// Synthetic model with a planted framing feature.
    #[command(subcommand)]
    Testbed(testbed::TestbedCommand),
    /// Assemble metric outputs into report tables.
    Report(report::ReportArgs),
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Parse(a) => answers::parse(a),
        Command::Metrics(a) => answers::metrics(a),
        Command::GroundingAttn(a) => geometry::grounding(a),
        Command::EmbAnalyze(a) => geometry::embedding(a),
        Command::Sae(c) => features::run(c),
        Command::Flipbank(c) => flipbank::run(c),
        Command::Normalize(a) => answers::normalize(a),
        Command::Testbed(c) => testbed::run(c),
        Command::Report(a) => report::report(a),
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Directory for outputs and the run manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    #[arg(long, env = "PSF_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    /// Confidence level of bootstrap intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

impl BootstrapArgs {
    pub fn config(&self, seed: u64) -> CliResult<BootstrapConfig> {
        if self.bootstrap == 0 || !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Usage("--bootstrap must be positive and --level inside (0, 1)".into()));
        }
        Ok(BootstrapConfig {
            n_resamples: self.bootstrap,
            level: self.level,
            seed,
            ..Default::default()
        })
    }
}

pub fn load_parsed(run: &mut Run, path: &Path) -> CliResult<Vec<ParsedRecord>> {
    Ok(read_jsonl(run.input(path)?)?)
}

pub fn load_corpus_opt(run: &mut Run, path: Option<&PathBuf>) -> CliResult<Option<Corpus>> {
    path.map(|p| Ok(load_corpus(run.input(p)?)?)).transpose()
}

pub fn load_labels(run: &mut Run, path: Option<&PathBuf>) -> CliResult<Option<HashMap<String, Label>>> {
    let Some(p) = path else { return Ok(None) };
    let recs: Vec<LabelRecord> = read_jsonl(run.input(p)?)?;
    Ok(Some(recs.into_iter().map(|l| (l.question_id, l.label)).collect()))
}

pub fn load_activations(run: &mut Run, path: &Path) -> CliResult<ActivationMatrix> {
    Ok(ActivationMatrix::load(run.input(path)?)?)
}

/// The requested layer, or the only layer present.
pub fn resolve_layer(acts: &ActivationMatrix, layer: Option<u32>) -> CliResult<u32> {
    if let Some(l) = layer {
        return Ok(l);
    }
    let mut layers: Vec<u32> = acts.manifest().iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    match layers.as_slice() {
        [l] => Ok(*l),
        [] => Err(CliError::Usage("activation matrix has no rows".into())),
        _ => Err(CliError::Usage(format!("activations hold layers {layers:?}; pass --layer"))),
    }
}

/// Comma-separated or repeated feature indices.
pub fn feature_list(values: &[usize]) -> CliResult<Vec<usize>> {
    if values.is_empty() {
        return Err(CliError::Usage("pass at least one --feature".into()));
    }
    let mut v = values.to_vec();
    v.dedup();
    Ok(v)
}
