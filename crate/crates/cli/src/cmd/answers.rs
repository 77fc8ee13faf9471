use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use flipkit::answer::{exclusion_report, parse_records, Lexicon};
use flipkit::interchange::{load_corpus, read_jsonl, Corpus, ParsedRecord, ResponseRecord};
use flipkit::metrics::{
    accuracy, blank_image_flip_rate, build_outcomes, coverage, cross_model_flip_correlation, flip_rate,
    flip_rate_by_paraphrase_count, flip_rate_by_transform, pairwise_disagreement_rate, swap_sensitivity,
    symmetric_contradiction_rate, text_only_agreement, MetricValue, PromptScope, QuestionOutcome,
};
use flipkit::normalizer::{normalize_corpus, FindingDictionary};
use flipkit::stats::BootstrapConfig;

use super::{load_corpus_opt, load_labels, load_parsed, BootstrapArgs, OutArgs, SeedArgs};
use crate::ctx::{require_seed, Run};
use crate::error::{CliError, CliResult};
use crate::outputs::{ConditionMetrics, DatasetMetrics, MetricsReport, ModelMetrics};
use crate::table::{num, Table};
use crate::tables;

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Response records (JSONL).
    #[arg(long)]
    responses: PathBuf,
    /// Lexicon JSON; the built-in lexicon when absent.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Corpus JSONL: validates ids and supplies findings for list answers.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

pub fn parse(a: ParseArgs) -> CliResult<()> {
    let mut run = Run::new("parse", &a.out.out_dir)?;
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(run.input(p)?)?,
        None => Lexicon::default(),
    };
    let responses: Vec<ResponseRecord> = read_jsonl(run.input(&a.responses)?)?;
    let corpus = load_corpus_opt(&mut run, a.corpus.as_ref())?;
    if let Some(c) = &corpus {
        for (i, r) in responses.iter().enumerate() {
            r.validate_against(c).map_err(|m| {
                flipkit::Error::Invalid(format!("{} record {}: {m}", a.responses.display(), i + 1))
            })?;
        }
    }
    let parsed = parse_records(responses, &lexicon, |r| {
        corpus.as_ref()?.get(&r.question_id)?.finding.clone()
    });
    run.config("lexicon", if a.lexicon.is_some() { "file" } else { "builtin" });
    run.write_jsonl("parsed.jsonl", &parsed)?;
    run.write_json("exclusions.json", &exclusion_report(&parsed))?;
    run.finish()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scope {
    /// Original questions only.
    Originals,
    /// Originals and paraphrases.
    All,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Parsed answers (JSONL from `parse`).
    #[arg(long)]
    parsed: PathBuf,
    /// Ground-truth labels (JSONL) for accuracy.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Corpus JSONL: transform types and per-dataset breakdown.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    boot: BootstrapArgs,
    #[command(flatten)]
    seed: SeedArgs,
    /// Report flip rates per paraphrase transform type.
    #[arg(long)]
    by_transform: bool,
    /// Report the per-paraphrase (pairwise) disagreement rate.
    #[arg(long)]
    pairwise: bool,
    /// Report the symmetric contradiction rate.
    #[arg(long)]
    symmetric: bool,
    /// Leave the original answer out of the symmetric pair set.
    #[arg(long)]
    symmetric_paraphrases_only: bool,
    /// Prompts entering cross-condition metrics and accuracy.
    #[arg(long, value_enum, default_value_t = Scope::Originals)]
    scope: Scope,
    #[command(flatten)]
    out: OutArgs,
}

/// `None` for a metric with nothing to average; other errors propagate.
fn defined<T>(r: flipkit::Result<T>) -> CliResult<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(flipkit::Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn dataset_name(corpus: &Corpus, question_id: &str) -> Option<String> {
    let q = corpus.get(question_id)?;
    serde_json::to_value(q.dataset_id).ok()?.as_str().map(str::to_string)
}

fn condition_metrics(
    outcomes: &[QuestionOutcome],
    a: &MetricsArgs,
    cfg: &BootstrapConfig,
) -> CliResult<ConditionMetrics> {
    Ok(ConditionMetrics {
        coverage: coverage(outcomes),
        flip_rate: defined(flip_rate(outcomes, cfg))?,
        pairwise_disagreement: if a.pairwise {
            defined(pairwise_disagreement_rate(outcomes, cfg))?
        } else {
            None
        },
        symmetric_contradiction: if a.symmetric {
            defined(symmetric_contradiction_rate(outcomes, !a.symmetric_paraphrases_only, cfg))?
        } else {
            None
        },
        by_transform: if a.by_transform {
            Some(flip_rate_by_transform(outcomes, cfg)?)
        } else {
            None
        },
        by_paraphrase_count: flip_rate_by_paraphrase_count(outcomes, cfg)?,
    })
}

fn by_dataset(
    records: &[ParsedRecord],
    outcomes: &[QuestionOutcome],
    corpus: &Corpus,
    labels: Option<&HashMap<String, flipkit::interchange::Label>>,
    scope: PromptScope,
    cfg: &BootstrapConfig,
) -> CliResult<BTreeMap<String, DatasetMetrics>> {
    let mut groups: BTreeMap<String, Vec<QuestionOutcome>> = BTreeMap::new();
    for o in outcomes {
        if let Some(d) = dataset_name(corpus, &o.question_id) {
            groups.entry(d).or_default().push(o.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (d, os) in groups {
        let acc = match labels {
            Some(l) => {
                let recs: Vec<ParsedRecord> = records
                    .iter()
                    .filter(|r| dataset_name(corpus, &r.response.question_id).as_deref() == Some(d.as_str()))
                    .cloned()
                    .collect();
                defined(accuracy(&recs, l, scope, cfg))?
            }
            None => None,
        };
        let row = DatasetMetrics {
            flip_rate: defined(flip_rate(&os, cfg))?,
            pairwise_disagreement: defined(pairwise_disagreement_rate(&os, cfg))?,
            accuracy: acc,
        };
        out.insert(d, row);
    }
    Ok(out)
}

pub fn metrics(a: MetricsArgs) -> CliResult<()> {
    let mut run = Run::new("metrics", &a.out.out_dir)?;
    let seed = run.seed(require_seed(a.seed.seed)?);
    let cfg = a.boot.config(seed)?;
    let scope = match a.scope {
        Scope::Originals => PromptScope::OriginalsOnly,
        Scope::All => PromptScope::AllPrompts,
    };
    run.config("bootstrap", a.boot.bootstrap);
    run.config("level", a.boot.level);
    run.config("scope", scope);
    run.config("by_transform", a.by_transform);
    run.config("pairwise", a.pairwise);
    run.config("symmetric", a.symmetric);
    let parsed = load_parsed(&mut run, &a.parsed)?;
    let corpus = load_corpus_opt(&mut run, a.corpus.as_ref())?;
    let labels = load_labels(&mut run, a.labels.as_ref())?;

    let table = build_outcomes(&parsed, corpus.as_ref())?;
    if table.values().flatten().all(|o| !o.is_defined()) {
        return Err(flipkit::Error::Undefined("no defined outcomes in the parsed answers".into()).into());
    }
    let mut by_model: BTreeMap<String, Vec<ParsedRecord>> = BTreeMap::new();
    for r in &parsed {
        by_model.entry(r.response.model_id.clone()).or_default().push(r.clone());
    }
    let mut models = BTreeMap::new();
    let mut real_by_model = BTreeMap::new();
    for (model, records) in &by_model {
        let mut conditions = BTreeMap::new();
        for ((m, cond), os) in &table {
            if m == model {
                conditions.insert(cond.clone(), condition_metrics(os, &a, &cfg)?);
            }
        }
        let real = table.get(&(model.clone(), "real".to_string()));
        let datasets = match (&corpus, real) {
            (Some(c), Some(os)) => by_dataset(records, os, c, labels.as_ref(), scope, &cfg)?,
            _ => BTreeMap::new(),
        };
        if let Some(os) = real {
            real_by_model.insert(model.clone(), os.clone());
        }
        let mm = ModelMetrics {
            conditions,
            by_dataset: datasets,
            accuracy: match &labels {
                Some(l) => defined(accuracy(records, l, scope, &cfg))?,
                None => None,
            },
            text_only_agreement: defined(text_only_agreement(records, scope, &cfg))?,
            swap_sensitivity: defined(swap_sensitivity(records, scope, &cfg))?,
            blank_image_flip_rate: defined(blank_image_flip_rate(records, &cfg))?,
        };
        models.insert(model.clone(), mm);
    }
    let report = MetricsReport {
        seed,
        bootstrap: a.boot.bootstrap,
        scope,
        models,
        cross_model: (real_by_model.len() > 1).then(|| cross_model_flip_correlation(&real_by_model)),
    };
    run.write_json("metrics.json", &report)?;
    run.write_csv("flip_rates.csv", &tables::behavior(Some(&report)))?;
    run.write_csv("grounding.csv", &tables::grounding(Some(&report)))?;
    run.write_csv("by_transform.csv", &transform_table(&report))?;
    run.write_csv("by_paraphrase_count.csv", &count_table(&report))?;
    run.finish()
}

fn metric_cells(m: &MetricValue) -> [String; 4] {
    [num(Some(m.estimate), 4), num(Some(m.ci_low), 4), num(Some(m.ci_high), 4), m.n.to_string()]
}

fn transform_table(r: &MetricsReport) -> Table {
    let mut t = Table::new(&["model", "condition", "transform_type", "flip_rate", "ci_low", "ci_high", "n_pairs"]);
    for (model, m) in &r.models {
        for (cond, c) in &m.conditions {
            for (tt, v) in c.by_transform.iter().flatten() {
                let mut row = vec![model.clone(), cond.clone(), tt.as_str().to_string()];
                row.extend(metric_cells(v));
                t.push(row);
            }
        }
    }
    t
}

fn count_table(r: &MetricsReport) -> Table {
    let mut t = Table::new(&["model", "condition", "valid_paraphrases", "flip_rate", "ci_low", "ci_high", "n_questions"]);
    for (model, m) in &r.models {
        for (cond, c) in &m.conditions {
            for (k, v) in &c.by_paraphrase_count {
                let mut row = vec![model.clone(), cond.clone(), k.to_string()];
                row.extend(metric_cells(v));
                t.push(row);
            }
        }
    }
    t
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Dictionary JSON `{canonical: [synonyms]}`; the built-in one when absent.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Corpus JSONL to rewrite.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output corpus JSONL.
    #[arg(long)]
    out: PathBuf,
}

pub fn normalize(a: NormalizeArgs) -> CliResult<()> {
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut run = Run::new("normalize", &dir)?;
    let dict = match &a.dict {
        Some(p) => FindingDictionary::load(run.input(p)?)?,
        None => FindingDictionary::default(),
    };
    let corpus = load_corpus(run.input(&a.input)?)?;
    if a.out == a.input {
        return Err(CliError::Usage("--out must differ from --in".into()));
    }
    let (questions, stats) = normalize_corpus(corpus.questions(), &dict);
    run.config("dictionary_findings", dict.len());
    run.write_jsonl_at(a.out.clone(), &questions)?;
    run.write_json("normalize_stats.json", &stats)?;
    run.finish()
}
