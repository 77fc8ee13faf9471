use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use flipkit::embedding::pair_geometry;
use flipkit::interchange::{load_corpus, read_jsonl, EmbeddingMatrix, SaeParams};
use flipkit::interventions::{
    clamp_evaluation, curate_flipbank, patch_sweep, resolve_case_rows, CurationConfig, FlipCase, LinearReadout,
};
use flipkit::sae::Sae;
use flipkit::stats::PermutationConfig;
use flipkit::Exec;

use super::{feature_list, load_activations, load_labels, load_parsed, resolve_layer, BootstrapArgs, OutArgs, SeedArgs};
use crate::ctx::{require_seed, Run};
use crate::error::{CliError, CliResult};
use crate::outputs::{ClampReport, PatchReport};
use crate::table::{num, pct, Table};
use crate::tables;

#[derive(Debug, Subcommand)]
pub enum FlipbankCommand {
    /// Collect real-image answer flips between near-identical phrasings.
    Curate(CurateArgs),
    /// Delta-only feature patching on curated flips.
    Patch(PatchArgs),
    /// Compare a baseline run with a feature-clamped run.
    ClampEval(ClampArgs),
}

pub fn run(c: FlipbankCommand) -> CliResult<()> {
    match c {
        FlipbankCommand::Curate(a) => curate(a),
        FlipbankCommand::Patch(a) => patch(a),
        FlipbankCommand::ClampEval(a) => clamp_eval(a),
    }
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    parsed: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Text embeddings; corpus similarities are used when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Pairs with similarity strictly above this are kept.
    #[arg(long, default_value_t = 0.95)]
    min_similarity: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn curate(a: CurateArgs) -> CliResult<()> {
    if !(-1.0..=1.0).contains(&a.min_similarity) {
        return Err(CliError::Usage("--min-similarity must lie in [-1, 1]".into()));
    }
    let mut run = Run::new("flipbank-curate", &a.out.out_dir)?;
    let parsed = load_parsed(&mut run, &a.parsed)?;
    let corpus = load_corpus(run.input(&a.corpus)?)?;
    let similarities: HashMap<(String, String), f64> = match &a.embeddings {
        Some(p) => {
            let emb = EmbeddingMatrix::load(run.input(p)?)?;
            pair_geometry(&emb, &corpus.pairs(), false, Exec::default())?
                .into_iter()
                .map(|g| ((g.question_id, g.paraphrase_id), g.cosine))
                .collect()
        }
        None => HashMap::new(),
    };
    let cfg = CurationConfig {
        min_similarity: a.min_similarity,
    };
    run.config("curation", cfg);
    run.config("similarity_source", if a.embeddings.is_some() { "embeddings" } else { "corpus" });
    let cur = curate_flipbank(&parsed, &corpus, &similarities, &cfg);
    log::info!(
        "{} flips kept ({} yes->no, {} no->yes)",
        cur.cases.len(),
        cur.yes_to_no,
        cur.no_to_yes
    );
    run.write_jsonl("flipbank.jsonl", &cur.cases)?;
    let mut summary = cur;
    summary.cases.clear();
    run.write_json("curation.json", &summary)?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    /// Curated flips (JSONL from `flipbank curate`).
    #[arg(long)]
    flipbank: PathBuf,
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    sae: PathBuf,
    /// Linear yes/no readout (PSFT: readout_yes, readout_no, readout_bias).
    #[arg(long)]
    readout: PathBuf,
    /// Feature to patch; repeat or comma-separate for several.
    #[arg(long, required = true, value_delimiter = ',')]
    feature: Vec<usize>,
    #[arg(long)]
    layer: Option<u32>,
    #[command(flatten)]
    boot: BootstrapArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn patch(a: PatchArgs) -> CliResult<()> {
    let seed = require_seed(a.seed.seed)?;
    let features = feature_list(&a.feature)?;
    let mut run = Run::new("flipbank-patch", &a.out.out_dir)?;
    run.seed(seed);
    let cfg = a.boot.config(seed)?;
    run.config("bootstrap", &cfg);
    run.config("features", &features);
    let cases: Vec<FlipCase> = read_jsonl(run.input(&a.flipbank)?)?;
    let acts = load_activations(&mut run, &a.activations)?;
    let sae = Sae::from_params(&SaeParams::load(run.input(&a.sae)?)?)?;
    let readout = LinearReadout::load(run.input(&a.readout)?)?;
    if readout.d_model() != sae.d_model() || acts.d_model() != sae.d_model() {
        return Err(flipkit::Error::dim(format!(
            "widths differ: SAE {}, readout {}, activations {}",
            sae.d_model(),
            readout.d_model(),
            acts.d_model()
        ))
        .into());
    }
    let layer = resolve_layer(&acts, a.layer)?;
    run.config("layer", layer);
    let (kept, inputs, missing) = resolve_case_rows(&cases, &acts, layer);
    if kept.is_empty() {
        return Err(flipkit::Error::Undefined("no flip cases with activation rows".into()).into());
    }
    let sweep = patch_sweep(&kept, &inputs, &sae, &readout, &features, &cfg, Exec::default())?;
    let report = PatchReport {
        seed,
        layer,
        n_cases: kept.len(),
        n_missing_rows: missing.len(),
        summaries: sweep.summaries,
    };
    let mut t = Table::new(&[
        "feature", "model_id", "question_id", "paraphrase_id", "delta", "margin_orig", "margin_para", "margin_patched",
        "recovery", "reversed",
    ]);
    for o in &sweep.outcomes {
        t.push(vec![
            o.feature.to_string(),
            o.model_id.clone(),
            o.question_id.clone(),
            o.paraphrase_id.clone(),
            num(Some(o.delta), 6),
            num(Some(o.margin_orig), 6),
            num(Some(o.margin_para), 6),
            num(Some(o.margin_patched), 6),
            num(o.recovery, 6),
            o.reversed.to_string(),
        ]);
    }
    run.write_json("patch.json", &report)?;
    run.write_csv("patch_outcomes.csv", &t)?;
    run.write_csv("patch.csv", &tables::patch(Some(&report)))?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct ClampArgs {
    /// Parsed answers of the baseline run.
    #[arg(long)]
    before: PathBuf,
    /// Parsed answers of the clamped run.
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Permutations for paired tests.
    #[arg(long, default_value_t = 10_000)]
    perms: usize,
    /// Name of the intervention in the mitigation table.
    #[arg(long, default_value = "clamp")]
    method: String,
    #[command(flatten)]
    boot: BootstrapArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    out: OutArgs,
}

fn clamp_eval(a: ClampArgs) -> CliResult<()> {
    let seed = require_seed(a.seed.seed)?;
    if a.perms == 0 {
        return Err(CliError::Usage("--perms must be positive".into()));
    }
    let mut run = Run::new("flipbank-clamp-eval", &a.out.out_dir)?;
    run.seed(seed);
    let cfg = a.boot.config(seed)?;
    let perm = PermutationConfig {
        n_permutations: a.perms,
        seed,
        ..Default::default()
    };
    run.config("bootstrap", &cfg);
    run.config("permutation", &perm);
    run.config("method", &a.method);
    let before = load_parsed(&mut run, &a.before)?;
    let after = load_parsed(&mut run, &a.after)?;
    let corpus = match &a.corpus {
        Some(p) => Some(load_corpus(run.input(p)?)?),
        None => None,
    };
    let labels = load_labels(&mut run, a.labels.as_ref())?;
    let evaluation = clamp_evaluation(&before, &after, corpus.as_ref(), labels.as_ref(), &cfg, &perm)?;
    let report = ClampReport {
        method: a.method,
        seed,
        evaluation,
    };
    let mut t = Table::new(&["transform_type", "flip_before", "flip_after", "relative_change"]);
    for (ty, c) in &report.evaluation.by_transform {
        t.push(vec![ty.as_str().into(), pct(c.before), pct(c.after), pct(c.relative_change)]);
    }
    run.write_json("clamp_eval.json", &report)?;
    run.write_csv("mitigation.csv", &tables::mitigation(std::slice::from_ref(&report)))?;
    run.write_csv("clamp_by_transform.csv", &t)?;
    run.finish()
}
