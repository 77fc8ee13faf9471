use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use flipkit::interchange::{validate_sae, ActivationMatrix, SaeParams, Validate};
use flipkit::interventions::{select_control_feature, ControlBand};
use flipkit::metrics::build_outcomes;
use flipkit::sae::{
    encode_batch, encode_pairs, feature_activation_stats, feature_delta, feature_flip_aucs, fvu, labeled_pair_rows,
    mean_l0, top_k_deltas, AucScore, FeatureStats, LabeledPair, Sae,
};
use flipkit::Exec;
use serde::{Deserialize, Serialize};

use super::{load_activations, load_corpus_opt, load_parsed, resolve_layer, OutArgs};
use crate::ctx::Run;
use crate::error::{CliError, CliResult};
use crate::table::{num, Table};

#[derive(Debug, Subcommand)]
pub enum SaeCommand {
    /// Reconstruction quality, sparsity and dead features.
    Stats(StatsArgs),
    /// Top feature differences per original/paraphrase pair.
    Deltas(DeltasArgs),
    /// Flip-prediction AUC of every feature, with control selection.
    Auc(AucArgs),
}

pub fn run(c: SaeCommand) -> CliResult<()> {
    match c {
        SaeCommand::Stats(a) => stats(a),
        SaeCommand::Deltas(a) => deltas(a),
        SaeCommand::Auc(a) => auc(a),
    }
}

#[derive(Debug, Args)]
struct SaeInputs {
    /// SAE weights (PSFT: W_enc, b_enc, theta, W_dec, b_dec).
    #[arg(long)]
    sae: PathBuf,
    /// Activation container with row manifest.
    #[arg(long)]
    activations: PathBuf,
    /// Layer to analyze; required when the activations hold several.
    #[arg(long)]
    layer: Option<u32>,
}

struct Loaded {
    sae: Sae,
    warnings: Vec<String>,
    acts: ActivationMatrix,
    layer: u32,
}

fn load(run: &mut Run, i: &SaeInputs) -> CliResult<Loaded> {
    let params = SaeParams::load(run.input(&i.sae)?)?;
    let report = validate_sae(&params)?;
    for w in &report.warnings {
        log::warn!("{}: {w}", i.sae.display());
    }
    let sae = Sae::from_params(&params)?;
    let acts = load_activations(run, &i.activations)?;
    if acts.d_model() != sae.d_model() {
        return Err(flipkit::Error::dim(format!(
            "activations have width {} but the SAE expects {}",
            acts.d_model(),
            sae.d_model()
        ))
        .into());
    }
    let layer = resolve_layer(&acts, i.layer)?;
    run.config("layer", layer);
    Ok(Loaded {
        sae,
        warnings: report.warnings,
        acts,
        layer,
    })
}

/// Real-image rows at the layer.
fn real_rows(acts: &ActivationMatrix, layer: u32) -> Vec<Vec<f64>> {
    acts.manifest()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.layer == layer && r.condition.kind() == "real")
        .map(|(i, _)| acts.row(i).iter().map(|&v| v as f64).collect())
        .collect()
}

fn stats_table(stats: &[FeatureStats]) -> Table {
    let mut t = Table::new(&["feature", "n_active", "activation_rate", "mean_active"]);
    for s in stats {
        t.push(vec![
            s.index.to_string(),
            s.n_active.to_string(),
            num(Some(s.activation_rate), 6),
            num(Some(s.mean_active), 6),
        ]);
    }
    t
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    inputs: SaeInputs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
struct SaeStatsReport {
    d_model: usize,
    n_features: usize,
    layer: u32,
    n_rows: usize,
    fvu: Option<f64>,
    mean_l0: Option<f64>,
    dead_features: usize,
    warnings: Vec<String>,
}

fn stats(a: StatsArgs) -> CliResult<()> {
    let mut run = Run::new("sae-stats", &a.out.out_dir)?;
    let l = load(&mut run, &a.inputs)?;
    let rows: Vec<Vec<f64>> = l
        .acts
        .manifest()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.layer == l.layer)
        .map(|(i, _)| l.acts.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let exec = Exec::default();
    let encoded = encode_batch(&l.sae, &rows, exec)?;
    let stats = feature_activation_stats(&encoded, l.sae.n_features());
    let report = SaeStatsReport {
        d_model: l.sae.d_model(),
        n_features: l.sae.n_features(),
        layer: l.layer,
        n_rows: rows.len(),
        fvu: fvu(&l.sae, &rows, exec).ok(),
        mean_l0: mean_l0(&l.sae, &rows, exec).ok(),
        dead_features: stats.iter().filter(|s| s.n_active == 0).count(),
        warnings: l.warnings,
    };
    run.write_json("sae_stats.json", &report)?;
    run.write_csv("feature_stats.csv", &stats_table(&stats))?;
    run.finish()
}

#[derive(Debug, Args)]
struct PairInputs {
    /// Parsed answers (JSONL) that label each pair as flipped or not.
    #[arg(long)]
    parsed: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn labeled_pairs(
    run: &mut Run,
    p: &PairInputs,
    l: &Loaded,
) -> CliResult<(Vec<LabeledPair>, Vec<(Vec<f64>, Vec<f64>)>, usize)> {
    let parsed = load_parsed(run, &p.parsed)?;
    let corpus = load_corpus_opt(run, p.corpus.as_ref())?;
    let table = build_outcomes(&parsed, corpus.as_ref())?;
    let (labels, rows, missing) = labeled_pair_rows(&table, &l.acts, l.layer);
    if missing > 0 {
        log::warn!("{missing} pairs lack activation rows at layer {}", l.layer);
    }
    if labels.is_empty() {
        return Err(flipkit::Error::Undefined("no valid pairs with activation rows".into()).into());
    }
    Ok((labels, rows, missing))
}

#[derive(Debug, Args)]
pub struct DeltasArgs {
    #[command(flatten)]
    inputs: SaeInputs,
    #[command(flatten)]
    pairs: PairInputs,
    /// Largest absolute differences kept per pair.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureShift {
    feature: usize,
    delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DeltaRecord {
    model_id: String,
    question_id: String,
    paraphrase_id: String,
    flipped: bool,
    n_changed: usize,
    top: Vec<FeatureShift>,
}

impl Validate for DeltaRecord {
    fn validate(&self) -> Result<(), String> {
        if self.top.len() > self.n_changed {
            return Err(format!("{}/{}: more top entries than changed features", self.question_id, self.paraphrase_id));
        }
        Ok(())
    }
}

fn deltas(a: DeltasArgs) -> CliResult<()> {
    if a.top_k == 0 {
        return Err(CliError::Usage("--top-k must be positive".into()));
    }
    let mut run = Run::new("sae-deltas", &a.out.out_dir)?;
    run.config("top_k", a.top_k);
    let l = load(&mut run, &a.inputs)?;
    let (labels, rows, _) = labeled_pairs(&mut run, &a.pairs, &l)?;
    let n = l.sae.n_features();
    let deltas = Exec::default()
        .map_slice(&rows, |(o, p)| feature_delta(&l.sae, o, p))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let (mut sum_flip, mut sum_keep) = (vec![0.0; n], vec![0.0; n]);
    let (mut top_flip, mut top_keep) = (vec![0usize; n], vec![0usize; n]);
    let mut records = Vec::with_capacity(labels.len());
    for (lab, d) in labels.iter().zip(&deltas) {
        let (sum, top_count) = if lab.flipped {
            (&mut sum_flip, &mut top_flip)
        } else {
            (&mut sum_keep, &mut top_keep)
        };
        for i in 0..n {
            sum[i] += d.get(i).abs();
        }
        let top = top_k_deltas(d, a.top_k);
        for &(i, _) in &top {
            top_count[i] += 1;
        }
        records.push(DeltaRecord {
            model_id: lab.model_id.clone(),
            question_id: lab.question_id.clone(),
            paraphrase_id: lab.paraphrase_id.clone(),
            flipped: lab.flipped,
            n_changed: (0..n).filter(|&i| d.get(i) != 0.0).count(),
            top: top.into_iter().map(|(feature, delta)| FeatureShift { feature, delta }).collect(),
        });
    }
    let n_flip = labels.iter().filter(|l| l.flipped).count();
    let n_keep = labels.len() - n_flip;
    let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
    let mut t = Table::new(&["feature", "mean_abs_delta_flip", "mean_abs_delta_no_flip", "top_k_flip", "top_k_no_flip"]);
    for i in 0..n {
        t.push(vec![
            i.to_string(),
            num(mean(sum_flip[i], n_flip), 6),
            num(mean(sum_keep[i], n_keep), 6),
            top_flip[i].to_string(),
            top_keep[i].to_string(),
        ]);
    }
    run.write_jsonl("deltas.jsonl", &records)?;
    run.write_csv("delta_summary.csv", &t)?;
    run.finish()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Score {
    /// Absolute activation difference between paraphrase and original.
    AbsDelta,
    /// Paraphrase activation.
    Activation,
}

#[derive(Debug, Args)]
pub struct AucArgs {
    #[command(flatten)]
    inputs: SaeInputs,
    #[command(flatten)]
    pairs: PairInputs,
    #[arg(long, value_enum, default_value_t = Score::AbsDelta)]
    score: Score,
    /// Pick a control feature for this one: AUC in [0.45, 0.55], closest mean
    /// active magnitude.
    #[arg(long)]
    target: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
struct RankedFeature {
    feature: usize,
    auc: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AucReport {
    score: AucScore,
    layer: u32,
    n_pairs: usize,
    n_flipped: usize,
    n_missing_rows: usize,
    top: Vec<RankedFeature>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control_auc: Option<f64>,
}

fn auc(a: AucArgs) -> CliResult<()> {
    let mut run = Run::new("sae-auc", &a.out.out_dir)?;
    let score = match a.score {
        Score::AbsDelta => AucScore::AbsDelta,
        Score::Activation => AucScore::Activation,
    };
    run.config("score", score);
    let l = load(&mut run, &a.inputs)?;
    let (labels, rows, missing) = labeled_pairs(&mut run, &a.pairs, &l)?;
    let flips: Vec<bool> = labels.iter().map(|l| l.flipped).collect();
    let exec = Exec::default();
    let n = l.sae.n_features();
    let encoded = encode_pairs(&l.sae, &rows, exec)?;
    let aucs = feature_flip_aucs(&encoded, &flips, n, score, exec);
    let stats = feature_activation_stats(&encode_batch(&l.sae, &real_rows(&l.acts, l.layer), exec)?, n);

    let (control, control_auc) = match a.target {
        Some(t) => {
            run.config("target", t);
            let c = select_control_feature(t, &stats, &aucs, &ControlBand::default())?;
            (Some(c), aucs[c])
        }
        None => (None, None),
    };
    let mut ranked: Vec<RankedFeature> = aucs
        .iter()
        .enumerate()
        .filter_map(|(feature, a)| Some(RankedFeature { feature, auc: (*a)? }))
        .collect();
    ranked.sort_by(|x, y| y.auc.total_cmp(&x.auc).then(x.feature.cmp(&y.feature)));
    ranked.truncate(10);
    let report = AucReport {
        score,
        layer: l.layer,
        n_pairs: labels.len(),
        n_flipped: flips.iter().filter(|f| **f).count(),
        n_missing_rows: missing,
        top: ranked,
        target: a.target,
        target_auc: a.target.and_then(|t| aucs.get(t).copied().flatten()),
        control,
        control_auc,
    };
    let mut t = Table::new(&["feature", "auc", "n_active", "activation_rate", "mean_active"]);
    for (s, auc) in stats.iter().zip(&aucs) {
        t.push(vec![
            s.index.to_string(),
            num(*auc, 6),
            s.n_active.to_string(),
            num(Some(s.activation_rate), 6),
            num(Some(s.mean_active), 6),
        ]);
    }
    run.write_json("sae_auc.json", &report)?;
    run.write_csv("feature_auc.csv", &t)?;
    run.finish()
}

