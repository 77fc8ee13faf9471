use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use flipkit::embedding::{flip_geometry_stats, pair_flips, pair_geometry, similarity_filter, FlipGeometryStats};
use flipkit::grounding::{grounding_comparison, score_cases, GroundingConfig, PercentileScope};
use flipkit::interchange::{read_jsonl, AttentionCase, EmbeddingMatrix, PairRef};
use flipkit::metrics::build_outcomes;
use flipkit::Exec;
use serde::{Deserialize, Serialize};

use super::{load_corpus_opt, load_parsed, OutArgs};
use crate::ctx::Run;
use crate::error::{CliError, CliResult};
use crate::outputs::{AttentionModel, AttentionReport};
use crate::table::{num, opt, Table};
use crate::tables;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    PerImage,
    PerDataset,
}

#[derive(Debug, Args)]
pub struct GroundingArgs {
    /// Attention cases (JSONL): 16x16 grid, box and flip label.
    #[arg(long)]
    cases: PathBuf,
    /// Pixels strictly above this percentile form the attention mask.
    #[arg(long, default_value_t = 90.0)]
    percentile: f64,
    #[arg(long, value_enum, default_value_t = Scope::PerImage)]
    percentile_scope: Scope,
    /// Side of the square upsampled map.
    #[arg(long, default_value_t = 224)]
    size: usize,
    #[command(flatten)]
    out: OutArgs,
}

fn model_of(c: &AttentionCase) -> String {
    c.model_id.clone().unwrap_or_else(|| "unknown".into())
}

pub fn grounding(a: GroundingArgs) -> CliResult<()> {
    let mut run = Run::new("grounding-attn", &a.out.out_dir)?;
    let cases: Vec<AttentionCase> = read_jsonl(run.input(&a.cases)?)?;
    let cfg = GroundingConfig {
        height: a.size,
        width: a.size,
        percentile: a.percentile,
        scope: match a.percentile_scope {
            Scope::PerImage => PercentileScope::PerImage,
            Scope::PerDataset => PercentileScope::PerDataset,
        },
    };
    run.config("grounding", cfg);
    let scores = score_cases(&cases, &cfg, Exec::default())?;

    let mut per_model: BTreeMap<String, (Vec<Option<f64>>, Vec<Option<f64>>, Vec<bool>)> = BTreeMap::new();
    let mut unlabeled = 0;
    for (c, s) in cases.iter().zip(&scores) {
        let Some(f) = s.flipped else {
            unlabeled += 1;
            continue;
        };
        let e = per_model.entry(model_of(c)).or_default();
        e.0.push(s.coverage);
        e.1.push(s.precision);
        e.2.push(f);
    }
    let mut models = BTreeMap::new();
    for (m, (cov, prec, flips)) in per_model {
        let row = AttentionModel {
            n_cases: flips.len(),
            coverage: grounding_comparison(&cov, &flips)?,
            precision: grounding_comparison(&prec, &flips)?,
        };
        models.insert(m, row);
    }
    let report = AttentionReport {
        config: cfg,
        n_cases: cases.len(),
        n_unlabeled: unlabeled,
        models,
    };

    let mut t = Table::new(&[
        "case_id", "model_id", "question_id", "flipped", "threshold", "mask_pixels", "box_pixels", "coverage", "precision",
    ]);
    for (c, s) in cases.iter().zip(&scores) {
        t.push(vec![
            s.case_id.clone(),
            model_of(c),
            s.question_id.clone(),
            opt(s.flipped),
            num(Some(s.threshold), 6),
            s.mask_pixels.to_string(),
            s.box_pixels.to_string(),
            num(s.coverage, 6),
            num(s.precision, 6),
        ]);
    }
    run.write_json("attention.json", &report)?;
    run.write_csv("attention_cases.csv", &t)?;
    run.write_csv("attention.csv", &tables::attention(Some(&report)))?;
    run.finish()
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Embedding container (PSFT with id manifest).
    #[arg(long)]
    embeddings: PathBuf,
    /// Pair list (JSONL). Derived from --corpus when absent.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Parsed answers supplying per-pair flip labels.
    #[arg(long)]
    parsed: PathBuf,
    /// L2-normalize rows before computing euclidean distance.
    #[arg(long)]
    normalize: bool,
    /// Pairs with cosine strictly above this count as kept.
    #[arg(long, default_value_t = 0.95)]
    min_similarity: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingReport {
    normalize: bool,
    n_pairs: usize,
    min_similarity: f64,
    n_above_threshold: usize,
    models: BTreeMap<String, FlipGeometryStats>,
}

pub fn embedding(a: EmbeddingArgs) -> CliResult<()> {
    let mut run = Run::new("emb-analyze", &a.out.out_dir)?;
    let emb = EmbeddingMatrix::load(run.input(&a.embeddings)?)?;
    let corpus = load_corpus_opt(&mut run, a.corpus.as_ref())?;
    let pairs: Vec<PairRef> = match (&a.pairs, &corpus) {
        (Some(p), _) => read_jsonl(run.input(p)?)?,
        (None, Some(c)) => c.pairs(),
        (None, None) => return Err(CliError::Usage("pass --pairs or --corpus".into())),
    };
    let parsed = load_parsed(&mut run, &a.parsed)?;
    run.config("normalize", a.normalize);
    run.config("min_similarity", a.min_similarity);

    let geoms = pair_geometry(&emb, &pairs, a.normalize, Exec::default())?;
    let (kept, _) = similarity_filter(&geoms, a.min_similarity);
    let table = build_outcomes(&parsed, corpus.as_ref())?;
    let mut flips_by_model: BTreeMap<String, HashMap<(String, String), bool>> = BTreeMap::new();
    for ((model, cond), os) in &table {
        if cond == "real" {
            flips_by_model.insert(model.clone(), pair_flips(os));
        }
    }
    let models = flips_by_model
        .iter()
        .map(|(m, f)| (m.clone(), flip_geometry_stats(&geoms, f)))
        .collect();

    let mut t = Table::new(&["model_id", "question_id", "paraphrase_id", "transform_type", "cosine", "euclidean", "flipped"]);
    for (m, flips) in &flips_by_model {
        for g in &geoms {
            let f = flips.get(&(g.question_id.clone(), g.paraphrase_id.clone()));
            t.push(vec![
                m.clone(),
                g.question_id.clone(),
                g.paraphrase_id.clone(),
                g.transform_type.as_str().into(),
                num(Some(g.cosine), 6),
                num(Some(g.euclidean), 6),
                opt(f),
            ]);
        }
    }
    let report = EmbeddingReport {
        normalize: a.normalize,
        n_pairs: geoms.len(),
        min_similarity: a.min_similarity,
        n_above_threshold: kept.len(),
        models,
    };
    run.write_json("embedding.json", &report)?;
    run.write_csv("pair_geometry.csv", &t)?;
    run.finish()
}
